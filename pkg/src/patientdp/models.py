"""Small differentiable classifiers with analytic losses and gradients.

Two binary classifiers are provided: logistic regression and a
one-hidden-layer perceptron. Both expose mean binary cross-entropy loss,
its analytic parameter gradient, and (for the perceptron) the hidden-layer
feature map plus its input-space adjoint, which the inversion harness needs.

Parameter layout within the flat vector is fixed: row-major weights then
biases, layer by layer. For logistic regression that is ``[w_1..w_d, b]``;
for the perceptron ``[W1 (h x d, row-major), b1 (h), w2 (h), b2]``.

Predicted probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before the
log so the loss stays finite for any finite parameters. The analytic
gradient ignores the clamp; the clamp only engages beyond |logit| ~ 27,
far outside the regime these desk-scale models are exercised in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vecops import RandomSource, finite_diff_grad, l2_norm

__all__ = [
    "ModelSpec",
    "PROB_CLAMP",
    "init_params",
    "predict_logits",
    "predict_proba",
    "loss",
    "grad",
    "features",
    "feature_grad_x",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_CLAMP = 1e-12

_KINDS = ("logistic", "mlp")
_ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; immutable and hashable.

    ``hidden_dim`` and ``activation`` apply to the perceptron only. The
    default activation is tanh; the linear option exists so tests can pit
    the feature map against closed-form linear algebra.
    """

    kind: str
    input_dim: int
    hidden_dim: int | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {_KINDS}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.kind == "mlp":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp requires hidden_dim >= 1")
            if self.activation not in _ACTIVATIONS:
                raise ValueError(
                    f"unknown activation {self.activation!r}, expected one of {_ACTIVATIONS}"
                )

    @property
    def param_count(self) -> int:
        d = self.input_dim
        if self.kind == "logistic":
            return d + 1
        h = self.hidden_dim
        return (d + 1) * h + (h + 1)


def init_params(spec: ModelSpec, rng: RandomSource, scale: float = 0.1) -> np.ndarray:
    """Random initial parameters, N(0, scale^2) i.i.d."""
    return scale * rng.standard_normal(spec.param_count)


def _check_theta(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.param_count,):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, expected ({spec.param_count},)"
        )
    return theta


def _check_batch(spec: ModelSpec, X: np.ndarray, y: np.ndarray | None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"features have dim {X.shape[1]}, expected {spec.input_dim}")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"got {X.shape[0]} feature rows but {y.shape[0]} labels")
    return X, y


def _unpack_mlp(spec: ModelSpec, theta: np.ndarray):
    d, h = spec.input_dim, spec.hidden_dim
    W1 = theta[: h * d].reshape(h, d)
    b1 = theta[h * d : h * d + h]
    w2 = theta[h * d + h : h * d + 2 * h]
    b2 = theta[-1]
    return W1, b1, w2, b2


def _activate(spec: ModelSpec, Z: np.ndarray) -> np.ndarray:
    return np.tanh(Z) if spec.activation == "tanh" else Z


def _activate_deriv(spec: ModelSpec, A: np.ndarray) -> np.ndarray:
    # Derivative expressed through the post-activation value.
    return 1.0 - A * A if spec.activation == "tanh" else np.ones_like(A)


def predict_logits(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    theta = _check_theta(spec, theta)
    X, _ = _check_batch(spec, X, None)
    if spec.kind == "logistic":
        return X @ theta[:-1] + theta[-1]
    W1, b1, w2, b2 = _unpack_mlp(spec, theta)
    A1 = _activate(spec, X @ W1.T + b1)
    return A1 @ w2 + b2


def _sigmoid(logits: np.ndarray) -> np.ndarray:
    # branch on sign to avoid exp overflow for large |logit|
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predict_proba(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """P(y=1 | x) for each row of X."""
    return _sigmoid(predict_logits(spec, theta, X))


def loss(spec: ModelSpec, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy over the batch, probabilities clamped."""
    X, y = _check_batch(spec, X, y)
    p = np.clip(predict_proba(spec, theta, X), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def grad(spec: ModelSpec, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to theta."""
    theta = _check_theta(spec, theta)
    X, y = _check_batch(spec, X, y)
    n = X.shape[0]
    if spec.kind == "logistic":
        p = predict_proba(spec, theta, X)
        residual = (p - y) / n
        out = np.empty_like(theta)
        out[:-1] = X.T @ residual
        out[-1] = residual.sum()
        return out
    W1, b1, w2, b2 = _unpack_mlp(spec, theta)
    Z1 = X @ W1.T + b1
    A1 = _activate(spec, Z1)
    logits = A1 @ w2 + b2
    p = _sigmoid(logits)
    dlogit = (p - y) / n
    dW2 = A1.T @ dlogit
    db2 = dlogit.sum()
    dZ1 = np.outer(dlogit, w2) * _activate_deriv(spec, A1)
    dW1 = dZ1.T @ X
    db1 = dZ1.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2, [db2]])


def features(spec: ModelSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Hidden-layer post-activation vector, the inversion attack's target.

    Accepts a single feature vector (returns shape ``(h,)``) or a batch
    (returns ``(n, h)``). Logistic regression has no hidden layer and is
    rejected.
    """
    if spec.kind != "mlp":
        raise ValueError("feature extraction requires an mlp model")
    theta = _check_theta(spec, theta)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X, _ = _check_batch(spec, x, None)
    W1, b1, _, _ = _unpack_mlp(spec, theta)
    A1 = _activate(spec, X @ W1.T + b1)
    return A1[0] if single else A1


def feature_grad_x(
    spec: ModelSpec, theta: np.ndarray, x: np.ndarray, cotangent: np.ndarray
) -> np.ndarray:
    """Gradient with respect to x of ``<features(x), cotangent>``."""
    if spec.kind != "mlp":
        raise ValueError("feature extraction requires an mlp model")
    theta = _check_theta(spec, theta)
    x = np.asarray(x, dtype=np.float64).ravel()
    cot = np.asarray(cotangent, dtype=np.float64).ravel()
    if cot.shape[0] != spec.hidden_dim:
        raise ValueError(f"cotangent has dim {cot.shape[0]}, expected {spec.hidden_dim}")
    W1, b1, _, _ = _unpack_mlp(spec, theta)
    A1 = _activate(spec, W1 @ x + b1)
    return W1.T @ (cot * _activate_deriv(spec, A1))


def gradient_check(
    spec: ModelSpec,
    seed: int,
    n_draws: int = 100,
    h: float = 1e-5,
    corrupt: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Draws ``n_draws`` random (theta, batch) pairs and compares
    :func:`grad` against :func:`finite_diff_grad` of :func:`loss`. The
    ``corrupt`` flag deliberately perturbs the analytic gradient and exists
    only as a negative control for the verification gate.
    """
    rng = RandomSource(seed).child("gradcheck", spec.kind)
    worst = 0.0
    for i in range(n_draws):
        r = rng.child(i)
        theta = 0.8 * r.standard_normal(spec.param_count)
        n = int(r.integers(1, 9))
        X = r.random((n, spec.input_dim))
        y = r.integers(0, 2, n).astype(np.float64)
        g = grad(spec, theta, X, y)
        if corrupt:
            g = g * 1.001 + 1e-4
        fd = finite_diff_grad(lambda th: loss(spec, th, X, y), theta, h)
        rel = l2_norm(g - fd) / max(l2_norm(g), l2_norm(fd), 1e-12)
        worst = max(worst, rel)
    return worst


_CHECKPOINT_MAGIC = "patientdp-checkpoint v1"


def save_checkpoint(
    path, spec: ModelSpec, theta: np.ndarray, seed: int = 0, round: int = 0
) -> None:
    """Write a text checkpoint: header lines, then one parameter per line.

    Values are serialized with ``repr`` so the round-trip through
    :func:`load_checkpoint` is bit-exact.
    """
    theta = _check_theta(spec, theta)
    lines = [_CHECKPOINT_MAGIC]
    lines.append(f"kind: {spec.kind}")
    lines.append(f"input_dim: {spec.input_dim}")
    if spec.kind == "mlp":
        lines.append(f"hidden_dim: {spec.hidden_dim}")
        lines.append(f"activation: {spec.activation}")
    lines.append(f"seed: {int(seed)}")
    lines.append(f"round: {int(round)}")
    lines.append(f"params: {spec.param_count}")
    lines.extend(repr(float(v)) for v in theta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(spec, theta, meta)``.

    ``meta`` carries the seed and round recorded at save time.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic line)")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines):
        key, sep, value = lines[i].partition(": ")
        if not sep:
            raise ValueError(f"{path}: malformed header line {i + 1}: {lines[i]!r}")
        header[key] = value
        i += 1
        if key == "params":
            break
    try:
        spec = ModelSpec(
            kind=header["kind"],
            input_dim=int(header["input_dim"]),
            hidden_dim=int(header["hidden_dim"]) if "hidden_dim" in header else None,
            activation=header.get("activation", "tanh"),
        )
        n_params = int(header["params"])
        meta = {"seed": int(header["seed"]), "round": int(header["round"])}
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint header missing field {exc}") from exc
    values = [v for v in lines[i:] if v]
    if len(values) != n_params:
        raise ValueError(
            f"{path}: expected {n_params} parameter lines, found {len(values)}"
        )
    theta = np.array([float(v) for v in values], dtype=np.float64)
    if spec.param_count != n_params:
        raise ValueError(
            f"{path}: header declares {n_params} params but spec implies {spec.param_count}"
        )
    return spec, theta, meta
