"""Patient-level differentially private federated training at desk scale.

Main entry points:

* :class:`patientdp.estimators.PrivateFederatedClassifier`: scikit-learn
  style estimator running the private federated training loop.
* :class:`patientdp.estimators.PooledSGDClassifier`: the non-private
  mini-batch SGD baseline.
* :mod:`patientdp.accounting`: moments-accountant privacy ledger.
* :mod:`patientdp.inversion`: model-inversion attack harness.
* ``patientdp`` CLI: train / accountant / attack / gradcheck / synth /
  validate-metrics subcommands (see README).
"""

from .accounting import (
    LAMBDA_GRID,
    MomentsLedger,
    PrivacyAccountant,
    PrivacySpend,
    eps_for_delta,
    gaussian_moment,
    selection_moment,
)
from .data import (
    PatientDatabase,
    PatientRecord,
    SamplingPlan,
    generate_synthetic,
    load_csv,
    sample_patients,
    split,
    write_csv,
)
from .models import ModelSpec, load_checkpoint, save_checkpoint
from .vecops import RandomSource, clip_norm, finite_diff_grad, gaussian_noise, l2_norm

__version__ = "0.1.0"

__all__ = [
    "LAMBDA_GRID",
    "ModelSpec",
    "MomentsLedger",
    "PatientDatabase",
    "PatientRecord",
    "PrivacyAccountant",
    "PrivacySpend",
    "RandomSource",
    "SamplingPlan",
    "clip_norm",
    "eps_for_delta",
    "finite_diff_grad",
    "gaussian_moment",
    "gaussian_noise",
    "generate_synthetic",
    "l2_norm",
    "load_checkpoint",
    "load_csv",
    "sample_patients",
    "save_checkpoint",
    "selection_moment",
    "split",
    "write_csv",
    "__version__",
]
