"""Geometry of the Stiefel manifold St(d, p) and the vec/veck operator calculus.

Points are ``p x d`` arrays with orthonormal columns. Tangent vectors at ``gamma``
are handled either in ambient form (a ``p x d`` array ``xi`` with
``gamma.T @ xi`` skew-symmetric) or in coordinates ``(U, V)`` such that
``xi = gamma @ U + gamma_perp @ V``.

All ``vec`` operations are column-major (Fortran order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StiefelPoint",
    "TangentVector",
    "OperatorPack",
    "RetractionError",
    "sym",
    "skew",
    "vec",
    "unvec",
    "veck",
    "veck_inv",
    "tangent_project",
    "qr_retract",
    "orth_complement",
    "build_operator_pack",
    "random_stiefel",
    "random_tangent",
    "stiefel_dim",
]

_ORTHO_TOL = 1e-12


class RetractionError(ValueError):
    """Raised when ``gamma + xi`` is rank deficient and qf() is undefined."""


def sym(W: np.ndarray) -> np.ndarray:
    """Symmetric part ``(W + W.T) / 2`` of a square matrix."""
    W = np.asarray(W, dtype=float)
    return 0.5 * (W + W.T)


def skew(W: np.ndarray) -> np.ndarray:
    """Skew-symmetric part ``(W - W.T) / 2`` of a square matrix."""
    W = np.asarray(W, dtype=float)
    return 0.5 * (W - W.T)


def vec(W: np.ndarray) -> np.ndarray:
    return np.asarray(W, dtype=float).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(rows, cols, order="F")


def _lower_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    # Strict lower triangle, column by column: (1,0), (2,0), ..., (2,1), ...
    rows, cols = [], []
    for j in range(d):
        for i in range(j + 1, d):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def veck(U: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Stack the strictly lower triangular part of a skew matrix column by column.

    Raises
    ------
    ValueError
        If ``U`` is not square or not skew-symmetric within ``atol``
        (scaled by ``max(1, max|U|)``).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError(f"veck expects a square matrix, got shape {U.shape}")
    scale = max(1.0, float(np.max(np.abs(U)))) if U.size else 1.0
    if U.size and np.max(np.abs(U + U.T)) > atol * scale:
        raise ValueError("veck expects a skew-symmetric matrix")
    r, c = _lower_indices(U.shape[0])
    return U[r, c].copy()


def veck_inv(u: np.ndarray, d: int) -> np.ndarray:
    """Rebuild the ``d x d`` skew matrix whose veck is ``u``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != d * (d - 1) // 2:
        raise ValueError(f"veck vector of length {u.size} does not match d={d}")
    U = np.zeros((d, d))
    r, c = _lower_indices(d)
    U[r, c] = u
    U[c, r] = -u
    return U


def stiefel_dim(p: int, d: int) -> int:
    """Dimension ``d(d-1)/2 + (p-d)d`` of St(d, p)."""
    return d * (d - 1) // 2 + (p - d) * d


@dataclass(frozen=True)
class OperatorPack:
    """Dense ``D_d`` (vec/veck link) and ``T_d`` (transpose permutation) for size ``d``.

    ``vec(U) = Dd @ veck(U)`` and ``veck(U) = 0.5 * Dd.T @ vec(U)`` for skew
    ``U``; ``Td @ vec(W) = vec(W.T)`` for any ``d x d`` ``W``.
    """

    Dd: np.ndarray
    Td: np.ndarray
    d: int


def build_operator_pack(d: int) -> OperatorPack:
    if d < 1:
        raise ValueError("d must be >= 1")
    m = d * (d - 1) // 2
    Dd = np.zeros((d * d, m))
    # 1-based: +E[d(j-1)+i, col] - E[d(i-1)+j, col], col = j(d-(j+1)/2) - d + i, i > j
    for j in range(1, d + 1):
        for i in range(j + 1, d + 1):
            col = j * (2 * d - j - 1) // 2 - d + i
            Dd[d * (j - 1) + i - 1, col - 1] += 1.0
            Dd[d * (i - 1) + j - 1, col - 1] -= 1.0
    Td = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            # vec index of (i, j) is j*d + i; it moves to the slot of (j, i)
            Td[i * d + j, j * d + i] = 1.0
    return OperatorPack(Dd=Dd, Td=Td, d=d)


def _check_on_manifold(gamma: np.ndarray, tol: float) -> None:
    if gamma.ndim != 2:
        raise ValueError("a Stiefel point must be a 2-D array")
    p, d = gamma.shape
    if d > p:
        raise ValueError(f"need d <= p, got p={p}, d={d}")
    err = np.linalg.norm(gamma.T @ gamma - np.eye(d))
    if err > tol:
        raise ValueError(f"columns are not orthonormal (||g'g - I||_F = {err:.3e})")


@dataclass(frozen=True)
class StiefelPoint:
    """A ``p x d`` matrix with orthonormal columns."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        _check_on_manifold(g, _ORTHO_TOL * max(1, g.shape[1]) * 10)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def d(self) -> int:
        return self.gamma.shape[1]


def _as_gamma(base) -> np.ndarray:
    return base.gamma if isinstance(base, StiefelPoint) else np.asarray(base, dtype=float)


def _fix_signs(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    k = min(R.shape)
    signs = np.sign(np.diag(R)[:k])
    signs[signs == 0] = 1.0
    Q = Q.copy()
    Q[:, :k] *= signs
    return Q


def tangent_project(base, W: np.ndarray) -> np.ndarray:
    """Orthogonal projection ``W - gamma sym(gamma' W)`` onto the tangent space."""
    g = _as_gamma(base)
    W = np.asarray(W, dtype=float)
    return W - g @ sym(g.T @ W)


def qr_retract(base, xi: np.ndarray, rank_tol: float = 1e-12) -> StiefelPoint:
    """QR retraction ``qf(gamma + xi)`` with the positive-diagonal-R convention.

    ``xi == 0`` returns the base point unchanged.
    """
    g = _as_gamma(base)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return base if isinstance(base, StiefelPoint) else StiefelPoint(g)
    Q, R = np.linalg.qr(g + xi, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= rank_tol * max(diag.max(), 1.0):
        raise RetractionError("retraction undefined: gamma + xi is rank deficient")
    return StiefelPoint(_fix_signs(Q, R))


def orth_complement(base) -> np.ndarray:
    """Deterministic orthonormal basis of the complement of ``span(gamma)``.

    Taken from the trailing columns of a complete QR factorization of gamma.
    Each trailing column is sign-normalised so that its largest-magnitude
    entry is positive.
    """
    g = _as_gamma(base)
    p, d = g.shape
    if d == p:
        return np.zeros((p, 0))
    Q, R = np.linalg.qr(g, mode="complete")
    Q = _fix_signs(Q, R)
    perp = Q[:, d:].copy()
    pivots = np.argmax(np.abs(perp), axis=0)
    signs = np.sign(perp[pivots, np.arange(p - d)])
    signs[signs == 0] = 1.0
    return perp * signs


@dataclass(frozen=True)
class TangentVector:
    """Coordinates ``(U, V)`` of ``xi = gamma U + gamma_perp V``; ``U`` skew."""

    U: np.ndarray
    V: np.ndarray
    gamma: np.ndarray
    gamma_perp: np.ndarray

    @classmethod
    def from_ambient(cls, base, xi: np.ndarray, gamma_perp: np.ndarray | None = None):
        g = _as_gamma(base)
        gp = orth_complement(g) if gamma_perp is None else gamma_perp
        U = skew(g.T @ xi)
        V = gp.T @ xi
        return cls(U=U, V=V, gamma=g, gamma_perp=gp)

    @property
    def ambient(self) -> np.ndarray:
        return self.gamma @ self.U + self.gamma_perp @ self.V

    def coords(self) -> np.ndarray:
        """Stacked ``(veck(U), vec(V))`` of length ``dim St(d, p)``."""
        return np.concatenate([veck(self.U), vec(self.V)])

    @classmethod
    def from_coords(cls, x: np.ndarray, gamma: np.ndarray, gamma_perp: np.ndarray):
        p, d = gamma.shape
        m = d * (d - 1) // 2
        U = veck_inv(x[:m], d)
        V = unvec(x[m:], p - d, d)
        return cls(U=U, V=V, gamma=gamma, gamma_perp=gamma_perp)


def random_stiefel(p: int, d: int, rng: np.random.Generator) -> StiefelPoint:
    """Haar-distributed point on St(d, p)."""
    A = rng.standard_normal((p, d))
    Q, R = np.linalg.qr(A)
    return StiefelPoint(_fix_signs(Q, R))


def random_tangent(base, rng: np.random.Generator) -> np.ndarray:
    g = _as_gamma(base)
    return tangent_project(g, rng.standard_normal(g.shape))
