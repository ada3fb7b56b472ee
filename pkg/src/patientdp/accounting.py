"""Moments-accountant privacy ledger.

The ledger accumulates, for each moment order lambda on the fixed grid
{1..32}, an upper bound alpha(lambda) on the log moment-generating
function of the privacy loss. Per-round bounds compose additively across
rounds; the optimal (epsilon, delta) conversion is the tail bound

    epsilon(delta) = min_lambda (alpha(lambda) + ln(1/delta)) / lambda.

Two per-round mechanisms are charged:

* the subsampled Gaussian release of the chosen noisy update, bounded by
  numerically integrating both moment expectations of the mixture-vs-base
  pair  mu0 = N(0, z^2),  mu = (1-q) mu0 + q N(1, z^2),  and taking
  ln max(E1, E2), the standard computation for Poisson-subsampled
  Gaussian noise with noise multiplier z and inclusion probability q;
* the exponential-mechanism update selection, bounded in closed form by
  q * lambda * (lambda + 1) * eps_select^2 / 2.

All expectation integrals run in the log domain (log-sum-exp over
composite Gauss-Legendre panels) because the raw moments overflow float64
already at moderate lambda / small z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LAMBDA_GRID",
    "MomentsLedger",
    "PrivacySpend",
    "QuadratureError",
    "selection_moment",
    "gaussian_moment",
    "accumulate",
    "eps_for_delta",
    "charge_round",
    "PrivacyAccountant",
]

LAMBDA_GRID: tuple[int, ...] = tuple(range(1, 33))


class QuadratureError(RuntimeError):
    """Raised when the moment integral fails to converge to tolerance."""


@dataclass(frozen=True)
class PrivacySpend:
    """An (epsilon, delta) point together with the minimizing moment order."""

    epsilon: float
    delta: float
    minimizing_lambda: int


class MomentsLedger:
    """Per-lambda accumulated log-moment bounds over a fixed grid."""

    def __init__(self, lambdas: Sequence[int] = LAMBDA_GRID):
        self.lambdas = tuple(int(l) for l in lambdas)
        if not self.lambdas or any(l < 1 for l in self.lambdas):
            raise ValueError("lambda grid must be non-empty positive integers")
        self.alphas = np.zeros(len(self.lambdas), dtype=np.float64)
        self.n_charges = 0

    def copy(self) -> "MomentsLedger":
        dup = MomentsLedger(self.lambdas)
        dup.alphas = self.alphas.copy()
        dup.n_charges = self.n_charges
        return dup


def selection_moment(q: float, eps_select: float, lam: int) -> float:
    """Log-moment bound of the subsampled exponential-mechanism selection."""
    if not (0.0 < q <= 1.0):
        raise ValueError(f"sampling ratio must be in (0, 1], got {q}")
    if eps_select < 0:
        raise ValueError(f"selection budget must be non-negative, got {eps_select}")
    if lam < 1:
        raise ValueError(f"moment order must be >= 1, got {lam}")
    return q * lam * (lam + 1) * eps_select * eps_select / 2.0


def _log_normal_pdf(x: np.ndarray, mean: float, z: float) -> np.ndarray:
    return -((x - mean) ** 2) / (2.0 * z * z) - math.log(math.sqrt(2.0 * math.pi) * z)


def _log_panel_integral(logf, lo: float, hi: float, n_panels: int, order: int) -> float:
    """log of integral(exp(logf)) over [lo, hi], composite Gauss-Legendre."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])  # (n_panels,)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = mid[:, None] + half[:, None] * nodes[None, :]  # (n_panels, order)
    logw = np.log(weights)[None, :] + np.log(half)[:, None]
    return float(logsumexp(logf(x.ravel()) + logw.ravel()))


@lru_cache(maxsize=None)
def _gaussian_log_moment(q: float, z: float, lam: int) -> float:
    def log_mu0(x):
        return _log_normal_pdf(x, 0.0, z)

    def log_mu1(x):
        return _log_normal_pdf(x, 1.0, z)

    if q >= 1.0:

        def log_mix(x):
            return log_mu1(x)

    else:
        log_1mq = math.log1p(-q)
        log_q = math.log(q)

        def log_mix(x):
            return np.logaddexp(log_1mq + log_mu0(x), log_q + log_mu1(x))

    def log_f1(x):  # integrand of E1 = E_{mu0}[(mu0 / mu)^lam]
        return (lam + 1) * log_mu0(x) - lam * log_mix(x)

    def log_f2(x):  # integrand of E2 = E_{mu}[(mu / mu0)^lam]
        return (lam + 1) * log_mix(x) - lam * log_mu0(x)

    # The integrands are mixtures of Gaussians whose means are shifted by up
    # to lam in either direction; cover every shifted peak plus >= 40 sigma.
    lo = -(lam + 1.0) - 40.0 * z - 1.0
    hi = (lam + 2.0) + 40.0 * z + 1.0

    def integrate(logf) -> float:
        prev = None
        for n_panels in (128, 256, 512, 1024, 2048, 4096):
            val = _log_panel_integral(logf, lo, hi, n_panels, order=40)
            if prev is not None and abs(val - prev) <= max(1e-10, 1e-12 * abs(val)):
                return val
            prev = val
        raise QuadratureError(
            f"moment integral did not converge for q={q}, z={z}, lambda={lam}"
        )

    alpha = max(integrate(log_f1), integrate(log_f2))
    # True alpha is >= 0; quadrature round-off can land a hair below.
    return max(0.0, alpha)


def gaussian_moment(q: float, z: float, lam: int) -> float:
    """Log-moment bound alpha(lambda) of the subsampled Gaussian mechanism.

    ``q`` is the per-patient inclusion probability, ``z`` the noise
    multiplier (noise std divided by the per-patient sensitivity scale).
    Computed by adaptive quadrature; results are cached per (q, z, lambda).
    """
    if not (0.0 < q <= 1.0):
        raise ValueError(f"sampling ratio must be in (0, 1], got {q}")
    if z <= 0:
        raise ValueError(f"noise multiplier must be positive, got {z}")
    if lam < 1:
        raise ValueError(f"moment order must be >= 1, got {lam}")
    return _gaussian_log_moment(float(q), float(z), int(lam))


def accumulate(ledger: MomentsLedger, per_lambda_bounds: Sequence[float]) -> MomentsLedger:
    """Add one mechanism's per-lambda bounds to the ledger (composability)."""
    bounds = np.asarray(per_lambda_bounds, dtype=np.float64)
    if bounds.shape != ledger.alphas.shape:
        raise ValueError(
            f"expected {ledger.alphas.shape[0]} bounds (one per grid lambda), "
            f"got {bounds.shape}"
        )
    if np.any(bounds < 0) or not np.all(np.isfinite(bounds)):
        raise ValueError("per-lambda bounds must be finite and non-negative")
    ledger.alphas += bounds
    ledger.n_charges += 1
    return ledger


def eps_for_delta(ledger: MomentsLedger, delta: float) -> PrivacySpend:
    """Invert the tail bound: smallest epsilon at the target delta.

    epsilon = min over the grid of (alpha(lambda) + ln(1/delta)) / lambda.
    A fresh ledger therefore yields ln(1/delta) / max-lambda.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    lambdas = np.array(ledger.lambdas, dtype=np.float64)
    eps_candidates = (ledger.alphas + math.log(1.0 / delta)) / lambdas
    k = int(np.argmin(eps_candidates))
    return PrivacySpend(
        epsilon=float(eps_candidates[k]),
        delta=float(delta),
        minimizing_lambda=ledger.lambdas[k],
    )


def charge_round(
    ledger: MomentsLedger,
    q: float,
    z_selected: float,
    eps_select: float,
    n_candidates: int,
) -> MomentsLedger:
    """Charge one private training round to the ledger.

    Adds the Gaussian release bound for the noise scale actually selected,
    plus the selection bound when more than one candidate was in play. A
    single-candidate round involves no selection and pays no selection
    cost.
    """
    if n_candidates < 1:
        raise ValueError(f"n_candidates must be >= 1, got {n_candidates}")
    bounds = np.array([gaussian_moment(q, z_selected, l) for l in ledger.lambdas])
    if n_candidates > 1:
        bounds += np.array([selection_moment(q, eps_select, l) for l in ledger.lambdas])
    return accumulate(ledger, bounds)


class PrivacyAccountant:
    """Trainer-facing ledger wrapper bound to one run's (q, scales, eps')."""

    def __init__(
        self,
        sampling_ratio: float,
        noise_scales: Sequence[float],
        eps_select: float,
        target_delta: float,
    ):
        if not (0.0 < sampling_ratio <= 1.0):
            raise ValueError(f"sampling ratio must be in (0, 1], got {sampling_ratio}")
        if not noise_scales or any(z <= 0 for z in noise_scales):
            raise ValueError("noise_scales must be a non-empty list of positive reals")
        if eps_select < 0:
            raise ValueError(f"eps_select must be non-negative, got {eps_select}")
        if not (0.0 < target_delta < 1.0):
            raise ValueError(f"target_delta must be in (0, 1), got {target_delta}")
        self.sampling_ratio = float(sampling_ratio)
        self.noise_scales = tuple(float(z) for z in noise_scales)
        self.eps_select = float(eps_select)
        self.target_delta = float(target_delta)
        self.ledger = MomentsLedger()

    def charge(self, z_selected: float) -> None:
        charge_round(
            self.ledger,
            self.sampling_ratio,
            z_selected,
            self.eps_select,
            len(self.noise_scales),
        )

    def spend(self, delta: float | None = None) -> PrivacySpend:
        """Current (epsilon, delta). With nothing charged, epsilon is 0:
        no data has been touched, so nothing has been spent."""
        delta = self.target_delta if delta is None else delta
        if self.ledger.n_charges == 0:
            return PrivacySpend(0.0, float(delta), max(self.ledger.lambdas))
        return eps_for_delta(self.ledger, delta)
