"""Sufficient variable selection: distance covariance with a row-wise group penalty.

The penalized objective, in whitened coordinates, is

    V_{n,eps}^2(gamma' Z, Y) - lam * sum_i theta_i * h_eps(rho_i(gamma))

with ``rho_i`` the norm of the ``i``-th row of ``beta = Sigma^{-1/2} gamma`` and
``h_eps(r) = r - eps log(1 + r/eps)``. Its minorizer keeps the quadratic form
of the unpenalized case, so the same Newton/Armijo loop applies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dcov import SampleSet, dcov_sq, double_center, pairwise_distances, perturbed_dcov
from .mmcore import (
    FitOptions,
    FitResult,
    Surrogate,
    WhitenedData,
    _check_dims,
    best_of_starts,
    build_surrogate,
    fit_sdr,
    start_points,
    tie_mask,
    whiten,
)
from .manifold import StiefelPoint, sym

__all__ = [
    "PenaltyConfig",
    "SparseFitResult",
    "row_norms",
    "build_penalized_surrogate",
    "penalized_objective",
    "adaptive_weights",
    "fit_svs",
    "bic_value",
    "default_lambda_grid",
    "bic_select",
]

BIC_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty level ``lam`` and per-row weights ``theta``.

    ``theta=None`` means unit weights, or adaptive weights from an unpenalized
    pilot fit when ``adaptive`` is set.
    """

    lam: float = 0.0
    theta: Optional[np.ndarray] = None
    adaptive: bool = False
    truncation_tol: float = 1e-7

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.theta is not None:
            theta = np.asarray(self.theta, dtype=float).ravel()
            if np.any(theta < 0) or not np.all(np.isfinite(theta)):
                raise ValueError("penalty weights must be finite and >= 0")
            object.__setattr__(self, "theta", theta)

    def weights(self, p: int) -> np.ndarray:
        if self.theta is None:
            return np.ones(p)
        if self.theta.size != p:
            raise ValueError(f"expected {p} penalty weights, got {self.theta.size}")
        return self.theta


@dataclass
class SparseFitResult:
    fit: FitResult
    active_rows: tuple[int, ...]
    lambda_used: float
    bic_value: float = float("nan")
    beta_truncated: Optional[np.ndarray] = None
    row_norms: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def beta_hat(self) -> np.ndarray:
        return self.fit.beta_hat

    def to_dict(self) -> dict:
        out = self.fit.to_dict()
        out.update(
            active_rows=list(self.active_rows),
            lambda_used=self.lambda_used,
            bic_value=self.bic_value,
            beta_truncated=self.beta_truncated.tolist(),
            row_norms=self.row_norms.tolist(),
        )
        return out


def row_norms(gamma, SigmaInvHalf: np.ndarray) -> np.ndarray:
    """Euclidean norms of the rows of ``Sigma^{-1/2} gamma``."""
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
    return np.linalg.norm(SigmaInvHalf @ g, axis=1)


def build_penalized_surrogate(gamma, Z, B, eps: float, cfg: PenaltyConfig,
                              SigmaInvHalf: np.ndarray,
                              ties: Optional[np.ndarray] = None) -> Surrogate:
    """Unpenalized minorizer plus the quadratic minorizer of the penalty.

    Adds ``Sigma^{-1/2} diag(Lambda) Sigma^{-1/2}`` to ``Q`` with
    ``Lambda_i = -lam * theta_i / (rho_i(gamma) + eps)``.
    """
    s = build_surrogate(gamma, Z, B, eps, ties=ties)
    p = s.Q.shape[0]
    theta = cfg.weights(p)
    if cfg.lam == 0 or not np.any(theta):
        return s
    rho = row_norms(s.base_point, SigmaInvHalf)
    lam_vec = -cfg.lam * theta / (rho + eps)
    Qpen = s.Q + sym((SigmaInvHalf * lam_vec) @ SigmaInvHalf)
    return Surrogate(Q=Qpen, L=s.L, base_point=s.base_point, eps=eps)


def penalized_objective(gamma, Z, B, eps: float, cfg: PenaltyConfig,
                        SigmaInvHalf: np.ndarray) -> float:
    value = perturbed_dcov(gamma, Z, B, eps)
    theta = cfg.weights(SigmaInvHalf.shape[0])
    if cfg.lam == 0 or not np.any(theta):
        return value
    rho = row_norms(gamma, SigmaInvHalf)
    return value - cfg.lam * float(np.sum(theta * (rho - eps * np.log1p(rho / eps))))


def adaptive_weights(pilot: FitResult, floor_eps: float = 1e-6) -> np.ndarray:
    """``theta_i = 1 / (||row i of beta_hat|| + floor_eps)`` from an unpenalized pilot."""
    norms = np.linalg.norm(pilot.beta_hat, axis=1)
    if floor_eps == 0 and np.any(norms == 0):
        raise ValueError("zero pilot row with floor_eps=0 gives an infinite weight")
    return 1.0 / (norms + floor_eps)


def _sparse_result(fit: FitResult, cfg: PenaltyConfig, theta: np.ndarray) -> SparseFitResult:
    norms = np.linalg.norm(fit.beta_hat, axis=1)
    active = tuple(int(i) for i in np.flatnonzero(norms > cfg.truncation_tol))
    beta_trunc = fit.beta_hat.copy()
    beta_trunc[norms <= cfg.truncation_tol] = 0.0
    return SparseFitResult(fit=fit, active_rows=active, lambda_used=cfg.lam,
                           beta_truncated=beta_trunc, row_norms=norms, theta=theta)


def _resolve_theta(data, d, cfg, opts, pilot: Optional[FitResult]) -> tuple[np.ndarray, Optional[FitResult]]:
    if cfg.theta is not None:
        return cfg.weights(data.p), pilot
    if cfg.adaptive:
        if pilot is None:
            pilot = fit_sdr(data, d, opts)
        return adaptive_weights(pilot), pilot
    return np.ones(data.p), pilot


def fit_svs(data: SampleSet, d: int, cfg: PenaltyConfig, opts: Optional[FitOptions] = None,
            pilot: Optional[FitResult] = None) -> SparseFitResult:
    """Maximize the penalized objective with the MM/Newton loop.

    The Armijo test is applied to the penalized smoothed objective. Rows of
    ``beta_hat`` with norm at most ``cfg.truncation_tol`` are reported inactive
    and zeroed in ``beta_truncated``; ``beta_hat`` itself is left untouched.
    """
    opts = opts or FitOptions()
    _check_dims(data, d)
    theta, pilot = _resolve_theta(data, d, cfg, opts, pilot)
    cfg = replace(cfg, theta=theta)
    wd = whiten(data, center=opts.center, ridge_policy=opts.ridge_policy)
    B = double_center(pairwise_distances(data.Y)).B
    return _fit_penalized(data, d, cfg, opts, wd, B, tie_mask(wd.Z))


def _fit_penalized(data, d, cfg, opts, wd: WhitenedData, B, ties,
                   init: Optional[StiefelPoint] = None) -> SparseFitResult:
    Z, Sih = wd.Z, wd.SigmaInvHalf

    def surrogate_at(g):
        return build_penalized_surrogate(g, Z, B, opts.eps, cfg, Sih, ties=ties)

    def objective(g):
        return penalized_objective(g, Z, B, opts.eps, cfg, Sih)

    points = [init] if init is not None else start_points(data, d, opts, wd)
    point, info = best_of_starts(points, surrogate_at, objective, opts)
    fit = FitResult(beta_hat=Sih @ point.gamma, gamma_hat=point, whitened=wd, **info)
    return _sparse_result(fit, cfg, cfg.theta)


def bic_value(data: SampleSet, result: SparseFitResult, d: int, B: Optional[np.ndarray] = None) -> float:
    """``-n log(V_n^2(beta' X, Y) + 1e-12) + log(n) * d * |active rows|`` on the truncated fit."""
    if B is None:
        B = double_center(pairwise_distances(data.Y)).B
    n = data.n
    fit_value = dcov_sq(result.beta_truncated, data.X, B)
    return float(-n * np.log(max(fit_value, 0.0) + BIC_LOG_FLOOR)
                 + np.log(n) * d * len(result.active_rows))


def default_lambda_grid(data: SampleSet, num: int = 20, low: float = 1e-4, high: float = 1.0) -> np.ndarray:
    """Log-spaced grid on ``[low, high] * n^{-1} sum_kl |B_kl|``."""
    B = double_center(pairwise_distances(data.Y)).B
    scale = float(np.sum(np.abs(B))) / data.n
    return np.geomspace(low * scale, high * scale, num)


def bic_select(data: SampleSet, d: int, lambda_grid: Optional[Sequence[float]] = None,
               opts: Optional[FitOptions] = None, theta: Optional[np.ndarray] = None,
               adaptive: bool = True, truncation_tol: float = 1e-7,
               warm_start: bool = True) -> tuple[float, SparseFitResult, list[dict]]:
    """Fit along an increasing lambda path and keep the fit with the smallest BIC.

    Ties go to the larger lambda. With ``warm_start`` each fit starts from the
    previous solution; the first starts from the unpenalized pilot fit, which
    also supplies adaptive weights when ``theta`` is not given.

    Returns
    -------
    best_lambda, best_result, report
        ``report`` has one dict per grid point with keys ``lambda``, ``bic``,
        ``n_active``, ``active_rows``, ``dcov``, ``converged``, ``iterations``
        (or ``error`` when that fit failed).
    """
    opts = opts or FitOptions()
    _check_dims(data, d)
    grid = default_lambda_grid(data) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid < 0):
        raise ValueError("lambda values must be >= 0")
    grid = np.sort(grid)
    wd = whiten(data, center=opts.center, ridge_policy=opts.ridge_policy)
    B = double_center(pairwise_distances(data.Y)).B
    ties = tie_mask(wd.Z)
    pilot = fit_sdr(data, d, opts)
    if theta is None:
        theta = adaptive_weights(pilot) if adaptive else np.ones(data.p)
    init = pilot.gamma_hat
    best = None
    report = []
    for lam in grid:
        cfg = PenaltyConfig(lam=float(lam), theta=theta, truncation_tol=truncation_tol)
        try:
            if lam == 0:
                res = _sparse_result(pilot, cfg, cfg.theta)
            else:
                res = _fit_penalized(data, d, cfg, opts, wd, B, ties, init=init)
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            report.append({"lambda": float(lam), "error": str(exc)})
            continue
        res.bic_value = bic_value(data, res, d, B)
        report.append({
            "lambda": float(lam),
            "bic": res.bic_value,
            "n_active": len(res.active_rows),
            "active_rows": list(res.active_rows),
            "dcov": dcov_sq(res.beta_truncated, data.X, B),
            "converged": res.fit.converged,
            "iterations": res.fit.iterations,
        })
        if best is None or res.bic_value <= best.bic_value:
            best = res
        if warm_start:
            init = res.fit.gamma_hat
    if best is None:
        raise RuntimeError("every fit on the lambda grid failed")
    return best.lambda_used, best, report
