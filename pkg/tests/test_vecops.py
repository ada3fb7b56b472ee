import numpy as np
import pytest

from patientdp.vecops import (
    RandomSource,
    as_param_vector,
    clip_norm,
    finite_diff_grad,
    gaussian_noise,
    l2_norm,
)


class TestL2Norm:
    def test_three_four_five(self):
        assert l2_norm(np.array([3.0, 4.0])) == 5.0

    def test_zero_vector(self):
        assert l2_norm(np.zeros(3)) == 0.0

    def test_matches_scalar_loop(self):
        # independent oracle: explicit sum of squares
        v = RandomSource(7).child("norm").standard_normal(100)
        acc = 0.0
        for x in v:
            acc += float(x) * float(x)
        assert l2_norm(v) == pytest.approx(acc ** 0.5, rel=1e-12)


class TestClipNorm:
    def test_norm_equal_to_bound_unchanged(self):
        v = np.array([3.0, 4.0])
        np.testing.assert_array_equal(clip_norm(v, 5.0), v)

    def test_scales_down(self):
        np.testing.assert_allclose(clip_norm(np.array([6.0, 8.0]), 5.0), [3.0, 4.0])

    def test_zero_vector_fixed_point(self):
        np.testing.assert_array_equal(clip_norm(np.zeros(2), 1.0), np.zeros(2))

    def test_rejects_nonpositive_bound(self):
        with pytest.raises(ValueError):
            clip_norm(np.ones(2), 0.0)
        with pytest.raises(ValueError):
            clip_norm(np.ones(2), -1.0)

    def test_norm_bounded_property(self):
        rng = RandomSource(13).child("clip")
        for i in range(200):
            r = rng.child(i)
            v = r.standard_normal(int(r.integers(1, 20))) * float(r.random()) * 10
            b = float(r.random()) * 3 + 1e-3
            assert l2_norm(clip_norm(v, b)) <= b + 1e-12

    def test_idempotent_exactly(self):
        rng = RandomSource(17).child("idem")
        for i in range(100):
            v = rng.child(i).standard_normal(8) * 5
            once = clip_norm(v, 1.3)
            np.testing.assert_array_equal(clip_norm(once, 1.3), once)

    def test_preserves_direction(self):
        v = np.array([1.0, -2.0, 2.0])
        c = clip_norm(v, 1.0)
        # non-negative scalar multiple of the input
        scale = c[0] / v[0]
        assert scale >= 0
        np.testing.assert_allclose(c, scale * v, rtol=1e-12)

    def test_does_not_mutate_input(self):
        v = np.array([10.0, 0.0])
        clip_norm(v, 1.0)
        np.testing.assert_array_equal(v, [10.0, 0.0])


class TestGaussianNoise:
    def test_zero_sigma_is_zero_vector(self):
        out = gaussian_noise(5, 0.0, RandomSource(1))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_law_of_large_numbers(self):
        out = gaussian_noise(10 ** 5, 1.0, RandomSource(42).child("lln"))
        assert abs(out.mean()) < 0.02
        assert abs(out.std() - 1.0) < 0.02

    def test_deterministic_given_seed(self):
        a = gaussian_noise(50, 2.5, RandomSource(9).child("x"))
        b = gaussian_noise(50, 2.5, RandomSource(9).child("x"))
        np.testing.assert_array_equal(a, b)

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_noise(3, -0.1, RandomSource(0))


class TestFiniteDiffGrad:
    def test_quadratic(self):
        f = lambda v: float(v @ v)
        g = finite_diff_grad(f, np.array([1.0, 2.0]), h=1e-5)
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)

    def test_linear(self):
        f = lambda v: float(v.sum())
        g = finite_diff_grad(f, np.array([0.3, -1.2, 8.0]), h=1e-5)
        np.testing.assert_allclose(g, np.ones(3), atol=1e-8)


class TestAsParamVector:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_param_vector([1.0, float("nan")])

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            as_param_vector([float("inf")])

    def test_rejects_matrix(self):
        with pytest.raises(ValueError):
            as_param_vector(np.zeros((2, 2)))


class TestRandomSource:
    def test_same_key_same_stream(self):
        a = RandomSource(5).child("a", 1).standard_normal(10)
        b = RandomSource(5).child("a", 1).standard_normal(10)
        np.testing.assert_array_equal(a, b)

    def test_children_order_insensitive(self):
        # drawing from one child does not perturb a sibling
        parent = RandomSource(5)
        parent.child("first").standard_normal(1000)
        after = parent.child("second").standard_normal(10)
        fresh = RandomSource(5).child("second").standard_normal(10)
        np.testing.assert_array_equal(after, fresh)

    def test_distinct_labels_distinct_streams(self):
        a = RandomSource(5).child("a").standard_normal(10)
        b = RandomSource(5).child("b").standard_normal(10)
        assert not np.array_equal(a, b)

    def test_distinct_seeds_distinct_streams(self):
        a = RandomSource(5).child("a").standard_normal(10)
        b = RandomSource(6).child("a").standard_normal(10)
        assert not np.array_equal(a, b)

    def test_nested_child_equals_flat_child(self):
        a = RandomSource(3).child("x").child(4).standard_normal(5)
        b = RandomSource(3).child("x", 4).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_label(self):
        with pytest.raises(TypeError):
            RandomSource(1).child(3.5)

    def test_categorical_respects_point_mass(self):
        rng = RandomSource(8).child("cat")
        assert rng.categorical(np.array([0.0, 1.0, 0.0])) == 1
