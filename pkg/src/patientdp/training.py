"""Training engines: private federated rounds and the pooled SGD baseline.

One private round proceeds as: Bernoulli-sample a patient batch, compute a
locally trained update per patient (clipped to ``update_clip``), average
the updates, build one noisy candidate per configured noise scale with
std ``z * update_clip / |batch|``, pick a candidate via the exponential
mechanism scored by the (clamped) batch loss, apply it, and charge the
accountant for both the selection and the Gaussian release of the winner.

Rounds whose Bernoulli sample comes up empty touch no data: they are
skipped, logged, and charge nothing.

Determinism contract: given the same database, config and seed, the final
parameters are bit-identical. All randomness is drawn from child streams
keyed by (seed, purpose, round, patient_id), and per-patient results are
combined in database order, so the result does not depend on any execution
interleaving.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import models
from .accounting import PrivacyAccountant
from .data import PatientDatabase, PatientRecord, SamplingPlan, sample_patients
from .models import ModelSpec
from .vecops import RandomSource, clip_norm, gaussian_noise, l2_norm

__all__ = [
    "TrainConfig",
    "UpdateCandidate",
    "RoundLog",
    "SelectionResult",
    "patient_update",
    "average_updates",
    "build_candidates",
    "selection_probabilities",
    "select_candidate_index",
    "noisy_update_select",
    "train_private",
    "train_sgd",
]

MetricsSink = Callable[[dict], None]
RoundCallback = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the private federated loop.

    ``noise_scales`` is the ordered candidate set of noise multipliers; a
    single entry degenerates to the fixed-scale method (no selection step,
    no selection privacy cost). ``eps_select`` is the per-round selection
    budget; ``update_clip`` / ``objective_clip`` bound the update norm and
    the selection loss respectively.
    """

    sampling_ratio: float
    rounds: int
    noise_scales: tuple[float, ...] = (3.0, 1.0)
    eps_select: float = 0.31622776601683794  # sqrt(0.1)
    update_clip: float = 5.0
    objective_clip: float = 3.0
    learning_rate: float = 0.5
    local_epochs: int = 1
    local_batch: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_scales", tuple(float(z) for z in self.noise_scales))
        if not (0.0 < self.sampling_ratio <= 1.0):
            raise ValueError(f"sampling_ratio must be in (0, 1], got {self.sampling_ratio}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be non-negative, got {self.rounds}")
        if not self.noise_scales or any(z <= 0 for z in self.noise_scales):
            raise ValueError("noise_scales must be non-empty with positive entries")
        if self.eps_select < 0:
            raise ValueError(f"eps_select must be non-negative, got {self.eps_select}")
        if self.update_clip <= 0 or self.objective_clip <= 0:
            raise ValueError("update_clip and objective_clip must be positive")
        # zero is allowed so the no-movement degenerate case stays expressible
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.local_epochs < 1 or self.local_batch < 1:
            raise ValueError("local_epochs and local_batch must be >= 1")


@dataclass(frozen=True)
class UpdateCandidate:
    """A noisy update together with the scale that produced it."""

    delta: np.ndarray
    z: float
    sigma: float  # realized std, z * update_clip / |batch|


@dataclass
class RoundLog:
    """Per-round metrics record; accumulated epsilon is non-decreasing."""

    round: int
    batch_size: int
    selected_z: float | None
    update_norm: float | None
    selected_u: float | None
    epsilon: float
    delta: float
    skipped: bool = False

    def as_dict(self) -> dict:
        return {
            "kind": "round",
            "round": self.round,
            "batch_size": self.batch_size,
            "selected_z": self.selected_z,
            "update_norm": self.update_norm,
            "selected_u": self.selected_u,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "skipped": self.skipped,
        }


class SelectionResult(NamedTuple):
    winner: UpdateCandidate
    probabilities: np.ndarray
    scores: np.ndarray  # u per candidate: minus the clamped batch loss
    index: int


def patient_update(
    spec: ModelSpec,
    theta_t: np.ndarray,
    patient: PatientRecord,
    cfg: TrainConfig,
    rng: RandomSource,
) -> np.ndarray:
    """Locally trained, norm-clipped update for one patient.

    Runs ``local_epochs`` passes of mini-batch SGD over the patient's
    examples in stored order (last batch may be short), then clips the
    parameter displacement to ``update_clip``. ``theta_t`` is not modified.
    The rng argument is part of the signature for stream keying; the local
    pass itself is deterministic.
    """
    theta = np.array(theta_t, dtype=np.float64, copy=True)
    X, y = patient.features, patient.labels
    n = patient.n_examples
    for _ in range(cfg.local_epochs):
        for start in range(0, n, cfg.local_batch):
            stop = min(start + cfg.local_batch, n)
            theta -= cfg.learning_rate * models.grad(spec, theta, X[start:stop], y[start:stop])
    return clip_norm(theta - theta_t, cfg.update_clip)


def average_updates(updates: Sequence[np.ndarray]) -> np.ndarray:
    """Component-wise mean of equally sized update vectors."""
    if len(updates) == 0:
        raise ValueError("cannot average an empty list of updates")
    dims = {u.shape for u in updates}
    if len(dims) != 1:
        raise ValueError(f"updates have mismatched shapes: {sorted(dims)}")
    return np.mean(np.stack(updates), axis=0)


def build_candidates(
    delta_t: np.ndarray,
    cfg: TrainConfig,
    batch_size: int,
    rng: RandomSource,
) -> list[UpdateCandidate]:
    """One noisy candidate per configured scale, in configuration order.

    Candidate i is ``delta_t + N(0, sigma_i^2 I)`` with
    ``sigma_i = z_i * update_clip / batch_size``; the draws are independent
    across scales.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1 (empty rounds are skipped upstream)")
    out = []
    for i, z in enumerate(cfg.noise_scales):
        sigma = z * cfg.update_clip / batch_size
        noise = gaussian_noise(delta_t.size, sigma, rng.child(i))
        out.append(UpdateCandidate(delta=delta_t + noise, z=z, sigma=sigma))
    return out


def selection_probabilities(
    scores: np.ndarray, eps_select: float, objective_clip: float
) -> np.ndarray:
    """Exponential-mechanism probabilities exp(eps*u / 2C) normalized.

    ``scores`` are the utilities u (minus the clamped losses, so in
    [-objective_clip, 0]); ``objective_clip`` is the score sensitivity.
    Computed via a max-shifted softmax for stability.
    """
    if eps_select < 0:
        raise ValueError(f"eps_select must be non-negative, got {eps_select}")
    if objective_clip <= 0:
        raise ValueError(f"objective_clip must be positive, got {objective_clip}")
    u = np.asarray(scores, dtype=np.float64)
    logits = eps_select * u / (2.0 * objective_clip)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def select_candidate_index(
    scores: np.ndarray, eps_select: float, objective_clip: float, rng: RandomSource
) -> tuple[int, np.ndarray]:
    """Sample a candidate index from the exponential-mechanism distribution."""
    probs = selection_probabilities(scores, eps_select, objective_clip)
    return rng.categorical(probs), probs


def noisy_update_select(
    candidates: Sequence[UpdateCandidate],
    cfg: TrainConfig,
    batch: Sequence[PatientRecord],
    theta_t: np.ndarray,
    spec: ModelSpec,
    rng: RandomSource,
) -> SelectionResult:
    """Pick a noisy update by the exponential mechanism.

    Each candidate is scored by the mean loss over every example of every
    patient in the sampled batch, evaluated at ``theta_t + delta``, clamped
    into [0, objective_clip] and negated. Returns the winner, the full
    probability vector, and the scores.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates to select from")
    X = np.vstack([p.features for p in batch])
    y = np.concatenate([p.labels for p in batch])
    losses = np.array(
        [models.loss(spec, theta_t + c.delta, X, y) for c in candidates]
    )
    u = -np.clip(losses, 0.0, cfg.objective_clip)
    idx, probs = select_candidate_index(u, cfg.eps_select, cfg.objective_clip, rng)
    return SelectionResult(candidates[idx], probs, u, idx)


def train_private(
    spec: ModelSpec,
    db: PatientDatabase,
    cfg: TrainConfig,
    accountant: PrivacyAccountant,
    metrics_sink: MetricsSink | None = None,
    on_round: RoundCallback | None = None,
    theta0: np.ndarray | None = None,
) -> np.ndarray:
    """Run the full private federated loop; returns the final parameters.

    The accountant must be configured with the same sampling ratio, noise
    scale set and selection budget as ``cfg``; each non-empty round charges
    it once. With a single configured noise scale the selection step is
    bypassed entirely (no selection randomness, no selection cost).
    """
    if accountant.sampling_ratio != cfg.sampling_ratio:
        raise ValueError("accountant sampling ratio does not match config")
    if accountant.noise_scales != cfg.noise_scales:
        raise ValueError("accountant noise scales do not match config")
    if accountant.eps_select != cfg.eps_select:
        raise ValueError("accountant selection budget does not match config")
    master = RandomSource(cfg.seed)
    if theta0 is None:
        theta = models.init_params(spec, master.child("init"))
    else:
        theta = np.array(theta0, dtype=np.float64, copy=True)
        if theta.shape != (spec.param_count,):
            raise ValueError(f"theta0 has shape {theta.shape}, expected ({spec.param_count},)")
    plan = SamplingPlan(cfg.sampling_ratio)
    n_scales = len(cfg.noise_scales)
    for t in range(1, cfg.rounds + 1):
        batch = sample_patients(db, plan, master.child("sample", t))
        if not batch:
            spend = accountant.spend()
            log = RoundLog(t, 0, None, None, None, spend.epsilon, spend.delta, skipped=True)
            if metrics_sink is not None:
                metrics_sink(log.as_dict())
            continue
        updates = [
            patient_update(spec, theta, p, cfg, master.child("patient", t, p.patient_id))
            for p in batch
        ]
        delta_t = average_updates(updates)
        candidates = build_candidates(delta_t, cfg, len(batch), master.child("noise", t))
        if n_scales == 1:
            winner = candidates[0]
            selected_u = None
        else:
            result = noisy_update_select(
                candidates, cfg, batch, theta, spec, master.child("select", t)
            )
            winner = result.winner
            selected_u = float(result.scores[result.index])
        theta = theta + winner.delta
        accountant.charge(winner.z)
        spend = accountant.spend()
        log = RoundLog(
            round=t,
            batch_size=len(batch),
            selected_z=winner.z,
            update_norm=l2_norm(delta_t),
            selected_u=selected_u,
            epsilon=spend.epsilon,
            delta=spend.delta,
        )
        if metrics_sink is not None:
            metrics_sink(log.as_dict())
        if on_round is not None:
            on_round(t, theta)
    return theta


def train_sgd(
    spec: ModelSpec,
    db: PatientDatabase,
    rounds: int,
    batch_size: int,
    gamma: float,
    metrics_sink: MetricsSink | None = None,
    on_round: RoundCallback | None = None,
    seed: int = 0,
    theta0: np.ndarray | None = None,
) -> np.ndarray:
    """Non-private mini-batch SGD over the pooled example set.

    Ignores patient grouping entirely and keeps no privacy ledger; this is
    the baseline the private trainer is compared against.
    """
    if rounds < 0:
        raise ValueError(f"rounds must be non-negative, got {rounds}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    X, y = db.pooled()
    n = X.shape[0]
    if not (1 <= batch_size <= n):
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    master = RandomSource(seed)
    if theta0 is None:
        theta = models.init_params(spec, master.child("init"))
    else:
        theta = np.array(theta0, dtype=np.float64, copy=True)
        if theta.shape != (spec.param_count,):
            raise ValueError(f"theta0 has shape {theta.shape}, expected ({spec.param_count},)")
    for t in range(1, rounds + 1):
        idx = master.child("batch", t).choice_without_replacement(n, batch_size)
        theta = theta - gamma * models.grad(spec, theta, X[idx], y[idx])
        if metrics_sink is not None:
            metrics_sink(
                {
                    "kind": "round",
                    "round": t,
                    "batch_size": batch_size,
                    "loss": models.loss(spec, theta, X[idx], y[idx]),
                    "skipped": False,
                }
            )
        if on_round is not None:
            on_round(t, theta)
    return theta
