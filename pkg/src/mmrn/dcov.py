"""Empirical distance covariance kernels.

Data follow the column convention: an array of shape ``(q, n)`` holds ``n``
samples of a ``q``-dimensional variable. The squared empirical distance
covariance between ``gamma' Z`` and ``Y`` is computed in the single-centred form
``(1/n^2) sum_kl a_kl B_kl`` where only the response distances are
double-centred.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

__all__ = [
    "SampleSet",
    "CenteredResponseKernel",
    "pairwise_distances",
    "double_center",
    "dcov_sq_centered_both",
    "dcov_sq_single_centered",
    "dcov_sq",
    "perturbed_dcov",
    "perturbation_gap",
    "perturbation_gap_bound",
    "dc_split",
]


def _as_2d(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got {M.ndim}-D")
    return M


@dataclass(frozen=True)
class SampleSet:
    """Predictors ``X`` (p x n) and responses ``Y`` (q x n), samples as columns."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = _as_2d(self.X)
        Y = _as_2d(self.Y)
        if X.shape[1] != Y.shape[1]:
            raise ValueError(
                f"X has {X.shape[1]} samples but Y has {Y.shape[1]}"
            )
        if X.shape[1] < 2:
            raise ValueError("need at least two samples")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("data contain non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.Y.shape[0]

    @classmethod
    def from_rows(cls, X_rows, Y_rows) -> "SampleSet":
        """Build from row-per-sample arrays (``n x p`` and ``n x q`` or ``n``)."""
        X_rows = np.asarray(X_rows, dtype=float)
        Y_rows = np.asarray(Y_rows, dtype=float)
        if Y_rows.ndim == 1:
            Y_rows = Y_rows[:, None]
        return cls(X_rows.T, Y_rows.T)


@dataclass(frozen=True)
class CenteredResponseKernel:
    B: np.ndarray
    b: np.ndarray
    row_means: np.ndarray
    col_means: np.ndarray
    grand_mean: float


def pairwise_distances(M) -> np.ndarray:
    """Euclidean distances between the columns of ``M`` as an ``n x n`` matrix."""
    M = _as_2d(M)
    if M.shape[1] < 2:
        raise ValueError("need at least two columns")
    return squareform(pdist(M.T))


def double_center(D, atol: float = 1e-12) -> CenteredResponseKernel:
    """Subtract row and column means of a distance matrix and add back the grand mean.

    Raises
    ------
    ValueError
        If ``D`` is not square or not symmetric.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    scale = max(1.0, float(np.max(np.abs(D)))) if D.size else 1.0
    if np.max(np.abs(D - D.T)) > atol * scale:
        raise ValueError("distance matrix must be symmetric")
    row = D.mean(axis=1)
    col = D.mean(axis=0)
    grand = float(D.mean())
    B = D - row[:, None] - col[None, :] + grand
    B = 0.5 * (B + B.T)
    return CenteredResponseKernel(B=B, b=D, row_means=row, col_means=col, grand_mean=grand)


def dcov_sq_centered_both(a, A, B) -> float:
    """``(1/n^2) sum A_kl B_kl`` with both distance kernels double-centred.

    ``A`` may be ``None``, in which case it is built from ``a``.
    """
    a = np.asarray(a, dtype=float)
    if A is None:
        A = double_center(a).B
    n = a.shape[0]
    return float(np.sum(np.asarray(A, dtype=float) * B) / n**2)


def dcov_sq_single_centered(a, B) -> float:
    """``(1/n^2) sum a_kl B_kl`` where only ``B`` is double-centred."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    return float(np.sum(a * B) / n**2)


def dc_split(a, B) -> tuple[float, float]:
    """Positive and negative parts of the single-centred sum.

    Returns ``(pos, neg)`` with ``pos = (1/n^2) sum a B I(B > 0)`` and
    ``neg = -(1/n^2) sum a B I(B < 0)``, both nonnegative for distance
    inputs; the objective equals ``pos - neg``.
    """
    a = np.asarray(a, dtype=float)
    B = np.asarray(B, dtype=float)
    n = a.shape[0]
    pos = float(np.sum(np.where(B > 0, a * B, 0.0)) / n**2)
    neg = float(-np.sum(np.where(B < 0, a * B, 0.0)) / n**2)
    return pos, neg


def _gamma_array(gamma) -> np.ndarray:
    return np.asarray(getattr(gamma, "gamma", gamma), dtype=float)


def dcov_sq(gamma, Z, B) -> float:
    """Unperturbed objective ``V_n^2(gamma' Z, Y)`` given the centred response kernel."""
    g = _gamma_array(gamma)
    a = pairwise_distances(g.T @ np.asarray(Z, dtype=float))
    return dcov_sq_single_centered(a, B)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")


def perturbed_dcov(gamma, Z, B, eps: float) -> float:
    """Smoothed objective ``(1/n^2) sum {a - eps log(1 + a/eps)} B``."""
    _check_eps(eps)
    g = _gamma_array(gamma)
    a = pairwise_distances(g.T @ np.asarray(Z, dtype=float))
    n = a.shape[0]
    h = a - eps * np.log1p(a / eps)
    return float(np.sum(h * B) / n**2)


def perturbation_gap(gamma, Z, B, eps: float) -> float:
    """``V_n^2 - V_{n,eps}^2`` evaluated directly as ``(1/n^2) sum eps log(1 + a/eps) B``.

    Direct evaluation avoids the cancellation of subtracting two nearly equal
    objective values when ``eps`` is small.
    """
    _check_eps(eps)
    g = _gamma_array(gamma)
    a = pairwise_distances(g.T @ np.asarray(Z, dtype=float))
    n = a.shape[0]
    return float(np.sum(eps * np.log1p(a / eps) * B) / n**2)


def perturbation_gap_bound(Z, B, eps: float) -> float:
    """Uniform bound on ``|V_n^2 - V_{n,eps}^2|`` over the whole manifold.

    Uses ``sup_gamma ||gamma'(Z_k - Z_l)|| = ||Z_k - Z_l||`` and weights each
    pair by ``|B_kl|``.
    """
    _check_eps(eps)
    zdist = pairwise_distances(Z)
    n = zdist.shape[0]
    return float(np.sum(eps * np.log1p(zdist / eps) * np.abs(B)) / n**2)
