"""Perturbed MM optimizer with one Riemannian Newton step per iteration.

The objective is the smoothed distance covariance ``V_{n,eps}^2(gamma' Z, Y)``
over ``gamma`` in St(d, p), with ``Z`` the whitened predictors. At each
iterate a quadratic minorizer ``0.5 tr(g'Qg) + tr(g'L)`` is built, one Newton
step on the manifold is taken for it, and an Armijo step-halving search with
QR retraction guarantees ascent of the smoothed objective.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgWarning

from .dcov import SampleSet, double_center, pairwise_distances, perturbed_dcov
from .manifold import (
    OperatorPack,
    RetractionError,
    StiefelPoint,
    TangentVector,
    build_operator_pack,
    orth_complement,
    qr_retract,
    random_stiefel,
    skew,
    stiefel_dim,
    sym,
    tangent_project,
    vec,
    veck,
)

logger = logging.getLogger(__name__)

__all__ = [
    "WhitenedData",
    "Surrogate",
    "NewtonSystem",
    "FitOptions",
    "FitResult",
    "NewtonSingularError",
    "LineSearchError",
    "NumericalBreakdownError",
    "whiten",
    "tie_mask",
    "build_surrogate",
    "surrogate_value",
    "riemannian_gradient",
    "objective_gradient",
    "hessian_apply",
    "hessian_apply_ambient",
    "build_newton_system",
    "solve_newton",
    "armijo_step",
    "sir_init",
    "initial_point",
    "mm_ascent",
    "start_points",
    "best_of_starts",
    "fit_sdr",
]


class NewtonSingularError(np.linalg.LinAlgError):
    """The reduced Newton matrix is singular to working precision."""


class LineSearchError(RuntimeError):
    """Step halving exhausted without satisfying the Armijo condition."""


class NumericalBreakdownError(FloatingPointError):
    """The objective became non-finite during the iterations."""


# --------------------------------------------------------------------------
# Whitening
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WhitenedData:
    Z: np.ndarray
    SigmaHalf: np.ndarray
    SigmaInvHalf: np.ndarray
    ridge: float
    mean: np.ndarray
    Sigma: np.ndarray


def whiten(data: SampleSet, center: bool = True, ridge_policy: str = "ridge") -> WhitenedData:
    """Whiten predictors with the symmetric inverse square root of their covariance.

    The sample covariance uses the ``n - 1`` divisor. Eigenvalues below
    ``1e-10 * trace / p`` count as singular: with ``ridge_policy="ridge"``
    every eigenvalue is lifted by ``1e-8 * trace / p``; with ``"strict"`` a
    ``numpy.linalg.LinAlgError`` is raised.
    """
    if ridge_policy not in ("ridge", "strict"):
        raise ValueError(f"unknown ridge policy {ridge_policy!r}")
    X = data.X
    n = X.shape[1]
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    Sigma = Xc @ Xc.T / (n - 1)
    Sigma = 0.5 * (Sigma + Sigma.T)
    w, V = np.linalg.eigh(Sigma)
    p = Sigma.shape[0]
    level = float(np.trace(Sigma)) / p
    ridge = 0.0
    if level <= 0 or w.min() < 1e-10 * level:
        if ridge_policy == "strict":
            raise np.linalg.LinAlgError("covariance not positive definite")
        ridge = 1e-8 * level if level > 0 else 1e-8
        w = np.clip(w, 0.0, None) + ridge
    root = np.sqrt(w)
    SigmaHalf = (V * root) @ V.T
    SigmaInvHalf = (V / root) @ V.T
    SigmaHalf = sym(SigmaHalf)
    SigmaInvHalf = sym(SigmaInvHalf)
    Z = SigmaInvHalf @ (Xc if center else X)
    return WhitenedData(Z=Z, SigmaHalf=SigmaHalf, SigmaInvHalf=SigmaInvHalf,
                        ridge=ridge, mean=mean, Sigma=Sigma)


# --------------------------------------------------------------------------
# Surrogate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Surrogate:
    """Quadratic minorizer ``0.5 tr(g'Qg) + tr(g'L)`` built at ``base_point``."""

    Q: np.ndarray
    L: np.ndarray
    base_point: np.ndarray
    eps: float


def tie_mask(Z: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Boolean ``n x n`` mask of pairs whose columns coincide (diagonal included).

    Such pairs contribute nothing to the objective for any ``gamma``; dropping
    them keeps the ``B/eps`` weights out of the Laplacian products.
    """
    zd = pairwise_distances(Z)
    scale = max(float(np.max(np.linalg.norm(Z, axis=0))), 1.0)
    mask = zd <= rtol * scale
    np.fill_diagonal(mask, True)
    return mask


def _laplacian_product(Z: np.ndarray, W: np.ndarray, right: np.ndarray) -> np.ndarray:
    # Z (diag(W 1) - W) Z' right, evaluated as (Z * W1) (Z' right) - Z (W (Z' right))
    Zr = Z.T @ right
    return (Z * W.sum(axis=1)) @ Zr - Z @ (W @ Zr)


def _laplacian_gram(Z: np.ndarray, W: np.ndarray) -> np.ndarray:
    # Z (diag(W 1) - W) Z'
    return (Z * W.sum(axis=1)) @ Z.T - (Z @ W) @ Z.T


def _weights(gamma: np.ndarray, Z: np.ndarray, B: np.ndarray, eps: float,
             ties: Optional[np.ndarray]) -> np.ndarray:
    a = pairwise_distances(gamma.T @ Z)
    W = B / (a + eps)
    if ties is None:
        np.fill_diagonal(W, 0.0)
    else:
        W[ties] = 0.0
    return W


def build_surrogate(gamma, Z, B, eps: float, ties: Optional[np.ndarray] = None) -> Surrogate:
    """Assemble ``Q`` and ``L`` of the minorizer at ``gamma``.

    ``Q`` collects the pairs with ``B_kl < 0`` (concave part, linearized in the
    squared distance) and ``L`` the pairs with ``B_kl > 0`` (convex part,
    linearized by its supporting hyperplane).
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[1]
    W = _weights(g, Z, B, eps, ties)
    C = np.where(B < 0, W, 0.0)
    D = np.where(B > 0, W, 0.0)
    scale = 2.0 / n**2
    Q = scale * _laplacian_gram(Z, C)
    Q = sym(Q)
    L = scale * _laplacian_product(Z, D, g)
    return Surrogate(Q=Q, L=L, base_point=g, eps=eps)


def surrogate_value(s: Surrogate, gamma) -> float:
    """``0.5 tr(g'Qg) + tr(g'L)``; the additive constant of the minorizer is omitted."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    return float(0.5 * np.sum(g * (s.Q @ g)) + np.sum(g * s.L))


def _S(s: Surrogate, g: np.ndarray) -> np.ndarray:
    return sym(g.T @ s.Q @ g + g.T @ s.L)


def riemannian_gradient(s: Surrogate, gamma) -> np.ndarray:
    """``Q g + L - g S`` with ``S = sym(g'Qg + g'L)``."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    return s.Q @ g + s.L - g @ _S(s, g)


def objective_gradient(gamma, Z, B, eps: float, ties: Optional[np.ndarray] = None) -> np.ndarray:
    """Riemannian gradient of the smoothed objective at ``gamma``."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[1]
    W = _weights(g, Z, B, eps, ties)
    egrad = (2.0 / n**2) * _laplacian_product(Z, W, g)
    return tangent_project(g, egrad)


def hessian_apply(s: Surrogate, gamma, xi: TangentVector) -> TangentVector:
    """Riemannian Hessian of the surrogate in ``(U, V)`` coordinates."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    gp = xi.gamma_perp
    S = _S(s, g)
    QG = s.Q @ g
    QP = s.Q @ gp
    A = g.T @ QG
    U, V = xi.U, xi.V
    UH = skew(A @ U + g.T @ QP @ V - U @ S)
    VH = gp.T @ QG @ U + gp.T @ QP @ V - V @ S
    return TangentVector(U=UH, V=VH, gamma=g, gamma_perp=gp)


def hessian_apply_ambient(s: Surrogate, gamma, xi: np.ndarray) -> np.ndarray:
    """``Q xi - xi S - g sym(g'Q xi - g' xi S)`` for an ambient tangent ``xi``."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    S = _S(s, g)
    W = s.Q @ xi - xi @ S
    return W - g @ sym(g.T @ W)


# --------------------------------------------------------------------------
# Newton system
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonSystem:
    H: np.ndarray
    rhs: np.ndarray
    S: np.ndarray

    @property
    def K(self) -> int:
        return self.H.shape[0]


def build_newton_system(s: Surrogate, gamma, gamma_perp: np.ndarray,
                        ops: Optional[OperatorPack] = None) -> NewtonSystem:
    """Dense ``K x K`` matrix of the Hessian in ``(veck U, vec V)`` coordinates."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    gp = np.asarray(gamma_perp, dtype=float)
    p, d = g.shape
    if ops is None:
        ops = build_operator_pack(d)
    Dd, Td = ops.Dd, ops.Td
    Id = np.eye(d)
    S = _S(s, g)
    QG = s.Q @ g
    A = g.T @ QG
    GQP = g.T @ s.Q @ gp
    PQG = gp.T @ QG
    PQP = gp.T @ s.Q @ gp
    H11 = 0.25 * Dd.T @ (np.kron(Id, A - S) + np.kron(A - S, Id)) @ Dd
    H12 = 0.25 * Dd.T @ (np.eye(d * d) - Td) @ np.kron(Id, GQP)
    H21 = np.kron(Id, PQG) @ Dd
    H22 = np.kron(Id, PQP) - np.kron(S, np.eye(p - d))
    H = np.block([[H11, H12], [H21, H22]])
    G = g.T @ QG + g.T @ s.L
    rhs = -np.concatenate([veck(skew(G)), vec(gp.T @ QG + gp.T @ s.L)])
    assert H.shape[0] == stiefel_dim(p, d)
    return NewtonSystem(H=H, rhs=rhs, S=S)


def solve_newton(system: NewtonSystem, gamma, gamma_perp: np.ndarray,
                 allow_lstsq: bool = False) -> TangentVector:
    """Solve ``H x = rhs`` and map ``x`` back to a tangent vector.

    Raises ``NewtonSingularError`` when ``H`` is singular to working precision,
    unless ``allow_lstsq`` is set, in which case the minimum-norm least-squares
    solution is returned.
    """
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    if system.K == 0 or not np.any(system.rhs):
        x = np.zeros(system.K)
    else:
        with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
            warnings.simplefilter("error", LinAlgWarning)
            try:
                x = scipy.linalg.solve(system.H, system.rhs)
                if not np.all(np.isfinite(x)):
                    raise np.linalg.LinAlgError("non-finite Newton solution")
            except (np.linalg.LinAlgError, LinAlgWarning, ValueError) as exc:
                if not allow_lstsq:
                    raise NewtonSingularError("newton-singular") from exc
                x = np.linalg.lstsq(system.H, system.rhs, rcond=None)[0]
    return TangentVector.from_coords(x, g, np.asarray(gamma_perp, dtype=float))


# --------------------------------------------------------------------------
# Line search
# --------------------------------------------------------------------------


def armijo_step(gamma, xi: np.ndarray, Z=None, B=None, eps: float = 1e-10,
                alpha: float = 1e-20, sigma: float = 0.5, max_halvings: int = 60,
                objective: Optional[Callable[[np.ndarray], float]] = None,
                f0: Optional[float] = None) -> tuple[StiefelPoint, int, float]:
    """Backtracking step ``s = sigma**k`` along the QR retraction of ``s * xi``.

    Accepts the first ``k`` in ``0..max_halvings`` with
    ``f(Retr(s xi)) >= f(gamma) + alpha * s * ||xi||_F^2``. ``f`` defaults to
    the smoothed objective defined by ``(Z, B, eps)``.

    Returns
    -------
    point, halvings, value
        The accepted point, the number of halvings used, and its objective.

    Raises
    ------
    LineSearchError
        If no step length in the budget satisfies the condition.
    """
    point = gamma if isinstance(gamma, StiefelPoint) else StiefelPoint(gamma)
    if objective is None:
        objective = lambda g: perturbed_dcov(g, Z, B, eps)  # noqa: E731
    if f0 is None:
        f0 = objective(point.gamma)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return point, 0, f0
    xi_sq = float(np.sum(xi * xi))
    step = 1.0
    for k in range(max_halvings + 1):
        try:
            cand = qr_retract(point, step * xi)
        except RetractionError:
            cand = None
        if cand is not None:
            f = objective(cand.gamma)
            if not np.isfinite(f):
                raise NumericalBreakdownError("numerical breakdown")
            if f >= f0 + alpha * step * xi_sq:
                return cand, k, f
        step *= sigma
    raise LineSearchError("line-search-failed")


# --------------------------------------------------------------------------
# Initialization
# --------------------------------------------------------------------------


def sir_init(data: SampleSet, d: int, slices: int = 10, seed: int = 0,
             whitened: Optional[WhitenedData] = None) -> StiefelPoint:
    """Sliced inverse regression directions in whitened coordinates.

    Samples are sorted (stably) on the first response coordinate and split into
    ``slices`` contiguous groups of nearly equal size. The top-``d`` eigenvectors
    of the weighted covariance of slice means give the starting point. A
    constant response falls back to a seeded random point.
    """
    if whitened is None:
        whitened = whiten(data)
    Z = whitened.Z
    p, n = Z.shape
    y = data.Y[0]
    if np.ptp(y) == 0:
        warnings.warn("constant response: SIR slicing degenerate, using random init",
                      RuntimeWarning, stacklevel=2)
        return random_stiefel(p, d, np.random.default_rng(seed))
    slices = max(1, min(slices, n // 2))
    order = np.argsort(y, kind="stable")
    Zc = Z - Z.mean(axis=1, keepdims=True)
    M = np.zeros((p, p))
    for idx in np.array_split(order, slices):
        m = Zc[:, idx].mean(axis=1)
        M += (idx.size / n) * np.outer(m, m)
    w, V = np.linalg.eigh(sym(M))
    top = V[:, np.argsort(w)[::-1][:d]]
    Q, R = np.linalg.qr(top)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return StiefelPoint(Q * signs)


# --------------------------------------------------------------------------
# Fit
# --------------------------------------------------------------------------

InitSpec = Union[str, np.ndarray, StiefelPoint]


@dataclass(frozen=True)
class FitOptions:
    """Algorithm constants; defaults are the reproduction settings.

    ``init`` is ``"sir"``, ``"random"`` (seeded by ``seed``) or a ``p x d``
    starting point in whitened coordinates. ``restarts`` adds that many seeded
    random starting points; the run reaching the largest objective is kept.
    """

    eps: float = 1e-10
    sigma: float = 0.5
    alpha: float = 1e-20
    rel_tol: float = 1e-7
    max_iter: int = 1000
    max_halvings: int = 60
    init: InitSpec = "sir"
    seed: int = 0
    restarts: int = 0
    slices: int = 10
    center: bool = True
    ridge_policy: str = "ridge"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.max_iter < 1 or self.max_halvings < 0:
            raise ValueError("max_iter must be >= 1 and max_halvings >= 0")
        if isinstance(self.init, str) and self.init not in ("sir", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    gamma_hat: StiefelPoint
    objective_trace: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    iterations: int = 0
    line_search_counts: list[int] = field(default_factory=list)
    converged: bool = False
    fallback_steps: int = 0
    message: str = ""
    whitened: Optional[WhitenedData] = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "gamma_hat": self.gamma_hat.gamma.tolist(),
            "objective_trace": list(self.objective_trace),
            "grad_norms": list(self.grad_norms),
            "iterations": self.iterations,
            "line_search_counts": list(self.line_search_counts),
            "converged": self.converged,
            "fallback_steps": self.fallback_steps,
            "message": self.message,
        }


def initial_point(data: SampleSet, d: int, opts: FitOptions, whitened: WhitenedData) -> StiefelPoint:
    p = data.p
    if isinstance(opts.init, StiefelPoint):
        g0 = opts.init.gamma
    elif isinstance(opts.init, str):
        if opts.init == "sir":
            return sir_init(data, d, slices=opts.slices, seed=opts.seed, whitened=whitened)
        return random_stiefel(p, d, np.random.default_rng(opts.seed))
    else:
        g0 = np.asarray(opts.init, dtype=float)
    if g0.shape != (p, d):
        raise ValueError(f"initial point has shape {g0.shape}, expected {(p, d)}")
    Q, R = np.linalg.qr(g0)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return StiefelPoint(Q * signs)


def mm_ascent(gamma0: StiefelPoint, surrogate_at: Callable[[np.ndarray], Surrogate],
              objective: Callable[[np.ndarray], float], opts: FitOptions
              ) -> tuple[StiefelPoint, dict]:
    """Generic MM loop: surrogate, one Newton step, Armijo halving, repeat.

    Newton safeguards, in order: least-squares solve when ``H`` is singular;
    steepest ascent when the Newton direction is not an ascent direction or
    its line search fails. A failed steepest-ascent search means no step of
    length ``>= sigma**max_halvings`` improves the objective, and the loop
    stops there.
    """
    point = gamma0
    d = point.d
    ops = build_operator_pack(d)
    f = objective(point.gamma)
    if not np.isfinite(f):
        raise NumericalBreakdownError("numerical breakdown")
    trace = [f]
    grad_norms: list[float] = []
    ls_counts: list[int] = []
    fallbacks = 0
    converged = False
    message = "maximum iterations reached"
    for _ in range(opts.max_iter):
        g = point.gamma
        s = surrogate_at(g)
        gp = orth_complement(g)
        grad = riemannian_gradient(s, g)
        gnorm = float(np.linalg.norm(grad))
        grad_norms.append(gnorm)
        if gnorm == 0.0:
            converged, message = True, "zero gradient"
            break
        system = build_newton_system(s, g, gp, ops)
        try:
            xi = solve_newton(system, g, gp).ambient
        except NewtonSingularError:
            fallbacks += 1
            xi = solve_newton(system, g, gp, allow_lstsq=True).ambient
        xi = tangent_project(g, xi)
        use_grad = float(np.sum(grad * xi)) <= 1e-14 * gnorm * float(np.linalg.norm(xi))
        if use_grad:
            fallbacks += 1
            xi = grad
        try:
            new_point, k, f_new = armijo_step(
                point, xi, alpha=opts.alpha, sigma=opts.sigma,
                max_halvings=opts.max_halvings, objective=objective, f0=f)
        except LineSearchError:
            new_point = None
            if not use_grad:
                fallbacks += 1
                try:
                    new_point, k, f_new = armijo_step(
                        point, grad, alpha=opts.alpha, sigma=opts.sigma,
                        max_halvings=opts.max_halvings, objective=objective, f0=f)
                except LineSearchError:
                    new_point = None
            if new_point is None:
                converged, message = True, "no ascent step at working precision"
                break
        ls_counts.append(k)
        point = new_point
        rel = abs(f_new - f) / max(abs(f), np.finfo(float).tiny)
        f = f_new
        trace.append(f)
        if rel < opts.rel_tol:
            converged, message = True, "relative objective change below tolerance"
            break
    final_grad = riemannian_gradient(surrogate_at(point.gamma), point.gamma)
    grad_norms.append(float(np.linalg.norm(final_grad)))
    info = dict(objective_trace=trace, grad_norms=grad_norms, iterations=len(ls_counts),
                line_search_counts=ls_counts, converged=converged,
                fallback_steps=fallbacks, message=message)
    return point, info


def start_points(data: SampleSet, d: int, opts: FitOptions, whitened: WhitenedData) -> list[StiefelPoint]:
    """The configured initial point followed by ``opts.restarts`` random ones."""
    points = [initial_point(data, d, opts, whitened)]
    for r in range(opts.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, r + 1]))
        points.append(random_stiefel(data.p, d, rng))
    return points


def best_of_starts(points, surrogate_at, objective, opts: FitOptions):
    best = None
    for g0 in points:
        point, info = mm_ascent(g0, surrogate_at, objective, opts)
        if best is None or info["objective_trace"][-1] > best[1]["objective_trace"][-1]:
            best = (point, info)
    return best


def _check_dims(data: SampleSet, d: int) -> None:
    if not 1 <= d < data.p:
        raise ValueError(f"need 1 <= d < p, got d={d}, p={data.p}")
    if data.n < d + 2:
        raise ValueError(f"need n >= d + 2 samples, got n={data.n}")


def fit_sdr(data: SampleSet, d: int, opts: Optional[FitOptions] = None) -> FitResult:
    """Estimate a ``p x d`` basis of the central subspace by maximizing distance covariance.

    Parameters
    ----------
    data : SampleSet
        Predictors ``X`` (p x n) and responses ``Y`` (q x n).
    d : int
        Structural dimension, ``1 <= d < p``.
    opts : FitOptions, optional
        Algorithm constants and initialization.

    Returns
    -------
    FitResult
        ``beta_hat`` satisfies ``beta_hat' Sigma_X beta_hat = I_d`` (exactly
        so when no ridge was needed for whitening).
    """
    opts = opts or FitOptions()
    _check_dims(data, d)
    wd = whiten(data, center=opts.center, ridge_policy=opts.ridge_policy)
    B = double_center(pairwise_distances(data.Y)).B
    Z = wd.Z
    ties = tie_mask(Z)

    def surrogate_at(g):
        return build_surrogate(g, Z, B, opts.eps, ties=ties)

    def objective(g):
        return perturbed_dcov(g, Z, B, opts.eps)

    point, info = best_of_starts(start_points(data, d, opts, wd), surrogate_at, objective, opts)
    beta = wd.SigmaInvHalf @ point.gamma
    logger.debug("fit_sdr: %d iterations, converged=%s", info["iterations"], info["converged"])
    return FitResult(beta_hat=beta, gamma_hat=point, whitened=wd, **info)
