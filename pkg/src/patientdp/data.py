"""Patient-grouped datasets: the unit of privacy is a whole patient.

A database is a list of patients, each holding a block of labeled feature
vectors. Privacy adjacency is defined at this granularity (add or remove
one patient with *all* their examples), so everything downstream samples,
splits, and accounts per patient rather than per example.

Subsampling is Bernoulli per patient: each patient joins a round
independently with probability ``ratio``. The amplification analysis in
the accountant assumes exactly this independent-inclusion model, which is
why fixed-size batches are deliberately not offered.

On-disk format is CSV with header ``patient_id,y,x_1,...,x_d`` (UTF-8,
decimal-point reals, labels 0/1). Floats are written with ``repr`` so a
write/load round-trip reproduces the database exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .vecops import RandomSource

__all__ = [
    "PatientRecord",
    "PatientDatabase",
    "SamplingPlan",
    "CsvFormatError",
    "generate_synthetic",
    "split",
    "sample_patients",
    "load_csv",
    "write_csv",
]


class CsvFormatError(ValueError):
    """Raised on malformed database files; message names the offending line."""


@dataclass(frozen=True)
class PatientRecord:
    """All examples belonging to one patient."""

    patient_id: str
    features: np.ndarray  # (n_examples, d)
    labels: np.ndarray  # (n_examples,), values in {0, 1}

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        if X.shape[0] < 1:
            raise ValueError(f"patient {self.patient_id!r} has no examples")
        if y.shape[0] != X.shape[0]:
            raise ValueError(
                f"patient {self.patient_id!r}: {X.shape[0]} feature rows, {y.shape[0]} labels"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError(f"patient {self.patient_id!r}: non-finite feature values")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError(f"patient {self.patient_id!r}: labels must be 0 or 1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PatientDatabase:
    """Immutable collection of patients with a shared feature dimension."""

    patients: tuple[PatientRecord, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        if len(self.patients) < 1:
            raise ValueError("database must contain at least one patient")
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patient_id in database")
        for p in self.patients:
            if p.feature_dim != self.feature_dim:
                raise ValueError(
                    f"patient {p.patient_id!r} has feature dim {p.feature_dim}, "
                    f"database expects {self.feature_dim}"
                )

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def total_examples(self) -> int:
        return sum(p.n_examples for p in self.patients)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All examples stacked, ignoring patient grouping."""
        X = np.vstack([p.features for p in self.patients])
        y = np.concatenate([p.labels for p in self.patients])
        return X, y

    def __iter__(self):
        return iter(self.patients)


@dataclass(frozen=True)
class SamplingPlan:
    """Per-round patient subsampling settings."""

    ratio: float
    mode: str = "bernoulli"

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"sampling ratio must be in (0, 1], got {self.ratio}")
        if self.mode != "bernoulli":
            raise ValueError(f"unsupported sampling mode {self.mode!r}")


def generate_synthetic(
    n_patients: int,
    per_patient: int,
    dim: int,
    class_sep: float,
    seed: int,
    patient_spread: float = 0.5,
) -> PatientDatabase:
    """Two-class Gaussian data with per-patient correlation.

    Class means sit at ``+/- class_sep/2`` along a random unit direction
    with unit within-class noise, so ``class_sep`` is the separation in
    within-class standard deviations. Each patient additionally draws a
    mean offset of scale ``patient_spread`` shared by all their examples.
    Raw coordinates are squashed into [0, 1] with a sigmoid.
    """
    if n_patients < 1 or per_patient < 1 or dim < 1:
        raise ValueError("n_patients, per_patient and dim must all be positive")
    if class_sep < 0:
        raise ValueError(f"class_sep must be non-negative, got {class_sep}")
    if patient_spread < 0:
        raise ValueError(f"patient_spread must be non-negative, got {patient_spread}")
    rng = RandomSource(seed).child("synthetic")
    direction = rng.child("direction").standard_normal(dim)
    direction /= np.linalg.norm(direction)
    width = len(str(n_patients - 1))
    patients = []
    for i in range(n_patients):
        r = rng.child("patient", i)
        offset = patient_spread * r.standard_normal(dim)
        labels = r.integers(0, 2, per_patient).astype(np.float64)
        centers = np.outer(2.0 * labels - 1.0, (class_sep / 2.0) * direction)
        raw = centers + offset + r.standard_normal((per_patient, dim))
        X = 1.0 / (1.0 + np.exp(-raw))
        patients.append(PatientRecord(f"p{i:0{width}d}", X, labels))
    return PatientDatabase(tuple(patients), dim)


def split(
    db: PatientDatabase, train_fraction: float, seed: int
) -> tuple[PatientDatabase, PatientDatabase]:
    """Patient-level train/test split; no patient appears on both sides.

    Train side gets ``floor(n_patients * train_fraction)`` patients chosen
    uniformly at random; both sides keep the original patient order.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = db.n_patients
    # small epsilon absorbs float dust when n * fraction is an exact integer
    n_train = int(math.floor(n * train_fraction + 1e-9))
    if n_train < 1 or n_train >= n:
        raise ValueError(
            f"split of {n} patients at fraction {train_fraction} leaves an empty side"
        )
    order = RandomSource(seed).child("split").permutation(n)
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    train = PatientDatabase(tuple(db.patients[i] for i in train_idx), db.feature_dim)
    test = PatientDatabase(tuple(db.patients[i] for i in test_idx), db.feature_dim)
    return train, test


def sample_patients(
    db: PatientDatabase, plan: SamplingPlan, rng: RandomSource
) -> list[PatientRecord]:
    """Bernoulli round sample: each patient joins independently with prob ratio.

    May legitimately return an empty list; callers skip such rounds.
    """
    if plan.ratio >= 1.0:
        return list(db.patients)
    mask = rng.random(db.n_patients) < plan.ratio
    return [p for p, m in zip(db.patients, mask) if m]


def _expected_header(dim: int) -> list[str]:
    return ["patient_id", "y"] + [f"x_{j}" for j in range(1, dim + 1)]


def load_csv(path) -> PatientDatabase:
    """Parse a patient database; errors carry 1-based line numbers."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "patient_id" or header[1] != "y":
            raise CsvFormatError(
                f"{path}: line 1: header must be patient_id,y,x_1,...,x_d, got {header}"
            )
        dim = len(header) - 2
        if header != _expected_header(dim):
            raise CsvFormatError(
                f"{path}: line 1: feature columns must be named x_1..x_{dim} in order"
            )
        groups: dict[str, list[tuple[np.ndarray, float]]] = {}
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise CsvFormatError(
                    f"{path}: line {lineno}: expected {dim + 2} columns, got {len(row)}"
                )
            pid = row[0].strip()
            if not pid:
                raise CsvFormatError(f"{path}: line {lineno}: empty patient_id")
            try:
                label = float(row[1])
                x = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: line {lineno}: non-numeric cell in {row!r}"
                ) from None
            if label not in (0.0, 1.0):
                raise CsvFormatError(
                    f"{path}: line {lineno}: label must be 0 or 1, got {row[1]!r}"
                )
            if not np.all(np.isfinite(x)):
                raise CsvFormatError(f"{path}: line {lineno}: non-finite feature value")
            groups.setdefault(pid, []).append((x, label))
            n_rows += 1
        if n_rows == 0:
            raise CsvFormatError(f"{path}: no data rows")
    patients = tuple(
        PatientRecord(pid, np.vstack([x for x, _ in rows]), np.array([y for _, y in rows]))
        for pid, rows in groups.items()
    )
    return PatientDatabase(patients, dim)


def write_csv(db: PatientDatabase, path) -> None:
    """Write a database in the canonical CSV format (repr floats, exact)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_expected_header(db.feature_dim))
        for p in db.patients:
            for x, y in zip(p.features, p.labels):
                writer.writerow([p.patient_id, int(y)] + [repr(float(v)) for v in x])
