"""Distance-covariance sufficient dimension reduction and variable selection.

Estimation runs a minorization-maximization loop whose subproblem is solved
by a single Riemannian Newton step on the Stiefel manifold, safeguarded by an
Armijo line search.
"""

from .dcov import SampleSet, dcov_sq, perturbed_dcov
from .manifold import StiefelPoint, TangentVector, qr_retract
from .mmcore import FitOptions, FitResult, fit_sdr, whiten
from .simbench import ScenarioSpec, delta_m, generate, run_benchmark, tpr_fpr
from .svs import PenaltyConfig, SparseFitResult, bic_select, fit_svs

__all__ = [
    "SampleSet",
    "dcov_sq",
    "perturbed_dcov",
    "StiefelPoint",
    "TangentVector",
    "qr_retract",
    "FitOptions",
    "FitResult",
    "fit_sdr",
    "whiten",
    "ScenarioSpec",
    "delta_m",
    "generate",
    "run_benchmark",
    "tpr_fpr",
    "PenaltyConfig",
    "SparseFitResult",
    "bic_select",
    "fit_svs",
]

__version__ = "0.1.0"
