"""Simulation scenarios, accuracy metrics and a seeded replicate runner."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dcov import SampleSet

__all__ = [
    "FAMILIES",
    "PARTS",
    "ScenarioSpec",
    "GroundTruth",
    "MethodConfig",
    "ReplicateRecord",
    "BenchReport",
    "ar1_covariance",
    "replicate_rng",
    "generate",
    "delta_m",
    "tpr_fpr",
    "run_replicate",
    "run_benchmark",
    "default_threads",
]

FAMILIES = ("ModelA", "ModelB", "ModelC", "ToyCircle", "Study1", "Study2", "Study3", "Study4")
PARTS = ("normal", "nonnormal", "discrete")
_MODELS = FAMILIES[:3]
_STUDIES = FAMILIES[4:]
_PART_ALIASES = {"1": "normal", "2": "nonnormal", "3": "discrete"}

# Structural dimension of each family.
STRUCTURAL_DIM = {"ModelA": 2, "ModelB": 2, "ModelC": 1, "ToyCircle": 2,
                  "Study1": 1, "Study2": 2, "Study3": 2, "Study4": 2}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation setting.

    ``part`` applies to Models A-C only. Studies default to ``p = 24``; the
    toy circle model is fixed at ``p = 20``.
    """

    family: str
    n: int
    p: Optional[int] = None
    part: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        part = _PART_ALIASES.get(str(self.part), self.part)
        if self.family in _MODELS:
            if part is None:
                part = "normal"
            if part not in PARTS:
                raise ValueError(f"unknown part {self.part!r}")
        elif part is not None:
            raise ValueError(f"{self.family} does not take a predictor part")
        object.__setattr__(self, "part", part)
        p = self.p
        if p is None:
            p = {"ToyCircle": 20}.get(self.family, 24 if self.family in _STUDIES else 6)
        if self.family in _MODELS and p < 6:
            raise ValueError("Models A-C need p >= 6")
        if self.family in _STUDIES and p < 4:
            raise ValueError("Studies need p >= 4")
        if self.family == "ToyCircle" and p != 20:
            raise ValueError("the toy circle model has p = 20")
        if self.n < (10 if self.family in _STUDIES else 2):
            raise ValueError(f"n={self.n} too small for {self.family}")
        object.__setattr__(self, "p", int(p))
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def d(self) -> int:
        return STRUCTURAL_DIM[self.family]


@dataclass(frozen=True)
class GroundTruth:
    beta_true: np.ndarray
    active_set: tuple[int, ...]


def ar1_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _sqrtm_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def replicate_rng(seed: int, replicate: Optional[int] = None) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, replicate)``."""
    entropy = [int(seed)] if replicate is None else [int(seed), int(replicate)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _unit(p: int, head: Sequence[float]) -> np.ndarray:
    v = np.zeros(p)
    v[: len(head)] = head
    return v


def _model_predictors(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    n, p = spec.n, spec.p
    if spec.part == "normal":
        return rng.standard_normal((p, n))
    if spec.family == "ModelA":
        if spec.part == "nonnormal":
            return 5.0 * rng.beta(0.75, 1.0, size=(p, n)) - 2.0
        return rng.poisson(1.0, size=(p, n)).astype(float)
    if spec.family == "ModelB":
        if spec.part == "nonnormal":
            return rng.uniform(-2.0, 2.0, size=(p, n))
        return rng.binomial(10, 0.1, size=(p, n)).astype(float)
    if spec.part == "nonnormal":
        return 2.0 * rng.beta(1.5, 1.0, size=(p, n)) - 1.0
    X = rng.poisson(1.0, size=(p, n)).astype(float)
    X[5] = rng.binomial(10, 0.3, size=n)
    return X


def generate(spec: ScenarioSpec) -> tuple[SampleSet, GroundTruth]:
    """Draw one data set; identical ``spec`` (seed included) gives identical bits."""
    rng = replicate_rng(spec.seed)
    n, p = spec.n, spec.p
    fam = spec.family
    if fam in _MODELS:
        X = _model_predictors(spec, rng)
        b1 = _unit(p, [1, 0, 0, 0, 0, 0])
        b2 = _unit(p, [0, 1, 0, 0, 0, 0])
        b3 = _unit(p, [1, 0.5, 1, 0, 0, 0])
        if fam == "ModelA":
            Y = (b1 @ X) ** 2 + b2 @ X + 0.1 * rng.standard_normal(n)
            beta = np.column_stack([b1, b2])
        elif fam == "ModelB":
            e1 = rng.standard_normal(n)
            e2 = rng.standard_normal(n)
            Y = np.sign(2 * (b1 @ X) + e1) * np.log(np.abs(2 * (b2 @ X) + 4 + e2))
            beta = np.column_stack([b1, b2])
        else:
            Y = np.exp(b3 @ X) * rng.standard_normal(n)
            beta = b3[:, None]
        Y = Y[None, :]
    elif fam == "ToyCircle":
        Gamma = np.column_stack([np.ones(p), np.where(np.arange(p) % 2 == 0, 1.0, -1.0)])
        y = rng.uniform(0.0, 1.0, size=n)
        F = np.vstack([np.cos(2 * np.pi * y), np.sin(2 * np.pi * y)])
        noise = _sqrtm_psd(ar1_covariance(p)) @ rng.standard_normal((p, n))
        X = Gamma @ F + 0.1 * noise
        Y = y[None, :]
        beta = Gamma
    else:
        half = _unit(p, [0.5, 0.5, 0.5, 0.5])
        alt = _unit(p, [0.5, -0.5, 0.5, -0.5])
        if fam == "Study3":
            tail = _sqrtm_psd(ar1_covariance(p - 1)) @ rng.standard_normal((p - 1, n))
            x1 = np.abs(tail[0] + tail[1]) + rng.standard_normal(n)
            X = np.vstack([x1, tail])
        else:
            X = _sqrtm_psd(ar1_covariance(p)) @ rng.standard_normal((p, n))
        eps = rng.standard_normal(n)
        if fam == "Study1":
            Y = ((half @ X + 0.5) ** 2 + 0.5 * eps)[None, :]
            beta = half[:, None]
        elif fam == "Study2":
            b1 = _unit(p, [1, 0])
            b2 = _unit(p, [0, 1])
            Y = ((b1 @ X) / (0.5 + (b2 @ X + 1.5) ** 2) + 0.2 * eps)[None, :]
            beta = np.column_stack([b1, b2])
        elif fam == "Study3":
            Y = ((half @ X) ** 2 + np.abs(alt @ X) + 0.5 * eps)[None, :]
            beta = np.column_stack([half, alt])
        else:
            e2 = rng.standard_normal(n)
            Y = np.vstack([half @ X + eps, (alt @ X + 0.5) ** 2 + e2])
            beta = np.column_stack([half, alt])
    active = tuple(int(i) for i in np.flatnonzero(np.any(beta != 0, axis=1)))
    return SampleSet(X, Y), GroundTruth(beta_true=beta, active_set=active)


def _projection(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if np.linalg.matrix_rank(M) < M.shape[1]:
        raise ValueError("basis matrix is rank deficient")
    Q, _ = np.linalg.qr(M)
    return Q @ Q.T


def delta_m(beta_hat: np.ndarray, beta_true: np.ndarray) -> float:
    """Spectral norm of the difference of the two orthogonal projections."""
    P1 = _projection(beta_hat)
    P2 = _projection(beta_true)
    if P1.shape != P2.shape:
        raise ValueError("bases live in spaces of different dimension")
    return float(min(np.linalg.norm(P1 - P2, 2), 1.0))


def tpr_fpr(active_estimated, active_true, p: int) -> tuple[float, float]:
    est = set(int(i) for i in active_estimated)
    true = set(int(i) for i in active_true)
    if not true:
        raise ValueError("true active set is empty")
    if not (est | true) <= set(range(p)):
        raise ValueError("indices outside 0..p-1")
    tpr = len(est & true) / len(true)
    inactive = p - len(true)
    fpr = len(est - true) / inactive if inactive else 0.0
    return tpr, fpr


# --------------------------------------------------------------------------
# Runner
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodConfig:
    """How each replicate is fitted.

    ``method="auto"`` runs SDR for Models A-C and the toy model and BIC-tuned
    SVS for the Studies. ``restarts`` extra random starts are combined with
    the SIR start.
    """

    method: str = "auto"
    d: Optional[int] = None
    eps: float = 1e-10
    sigma: float = 0.5
    alpha: float = 1e-20
    rel_tol: float = 1e-7
    max_iter: int = 1000
    restarts: int = 5
    lambda_grid: Optional[tuple[float, ...]] = None

    def resolve(self, spec: ScenarioSpec) -> str:
        if self.method == "auto":
            return "svs" if spec.family in _STUDIES else "sdr"
        if self.method not in ("sdr", "svs"):
            raise ValueError(f"unknown method {self.method!r}")
        return self.method


@dataclass
class ReplicateRecord:
    replicate: int
    seed: int
    metrics: dict
    wall_ms: float
    iterations: int
    converged: bool
    error: Optional[str] = None


@dataclass
class BenchReport:
    spec: ScenarioSpec
    method: MethodConfig
    records: list[ReplicateRecord] = field(default_factory=list)

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for r in self.records:
            for k in r.metrics:
                if k not in names:
                    names.append(k)
        return names

    def aggregate(self) -> dict:
        """Mean, sample sd and standard error of each metric over successful replicates."""
        out = {}
        for name in self.metric_names():
            vals = np.array([r.metrics[name] for r in self.records if name in r.metrics])
            k = vals.size
            sd = float(vals.std(ddof=1)) if k > 1 else 0.0
            out[name] = {"mean": float(vals.mean()), "sd": sd,
                         "se": sd / math.sqrt(k) if k else float("nan"), "count": int(k)}
        return out

    def failures(self) -> int:
        return sum(r.error is not None for r in self.records)

    def to_json_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "method": asdict(self.method),
            "replicates": len(self.records),
            "failures": self.failures(),
            "aggregate": self.aggregate(),
            "mean_wall_ms": float(np.mean([r.wall_ms for r in self.records])) if self.records else 0.0,
        }

    def write_csv(self, path) -> None:
        """Long format: ``replicate,seed,metric_name,metric_value,wall_ms,iterations,converged``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "seed", "metric_name", "metric_value",
                        "wall_ms", "iterations", "converged"])
            for r in self.records:
                items = r.metrics.items() if r.error is None else [("error", float("nan"))]
                for name, value in items:
                    w.writerow([r.replicate, r.seed, name, repr(float(value)),
                                repr(float(r.wall_ms)), r.iterations, str(r.converged).lower()])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)


def _replicate_seed(master: int, r: int) -> int:
    return int(np.random.SeedSequence([int(master), r]).generate_state(1, np.uint64)[0])


def run_replicate(spec: ScenarioSpec, method: MethodConfig, replicate: int) -> ReplicateRecord:
    from .mmcore import FitOptions, fit_sdr
    from .svs import bic_select

    seed = _replicate_seed(spec.seed, replicate)
    rspec = ScenarioSpec(family=spec.family, n=spec.n, p=spec.p, part=spec.part, seed=seed)
    t0 = time.perf_counter()
    try:
        data, truth = generate(rspec)
        d = method.d or rspec.d
        opts = FitOptions(eps=method.eps, sigma=method.sigma, alpha=method.alpha,
                          rel_tol=method.rel_tol, max_iter=method.max_iter,
                          restarts=method.restarts, seed=seed % 2**32)
        if method.resolve(rspec) == "sdr":
            fit = fit_sdr(data, d, opts)
            metrics = {"delta_m": delta_m(fit.beta_hat, truth.beta_true)}
            iters, conv = fit.iterations, fit.converged
        else:
            grid = None if method.lambda_grid is None else list(method.lambda_grid)
            lam, res, _ = bic_select(data, d, grid, opts)
            tpr, fpr = tpr_fpr(res.active_rows, truth.active_set, rspec.p)
            metrics = {"tpr": tpr, "fpr": fpr, "lambda": lam,
                       "delta_m": delta_m(res.beta_hat, truth.beta_true)}
            iters, conv = res.fit.iterations, res.fit.converged
        err = None
    except Exception as exc:  # failures are recorded per replicate
        metrics, iters, conv, err = {}, 0, False, f"{type(exc).__name__}: {exc}"
    wall = 1000.0 * (time.perf_counter() - t0)
    return ReplicateRecord(replicate=replicate, seed=seed, metrics=metrics, wall_ms=wall,
                           iterations=iters, converged=conv, error=err)


def default_threads() -> int:
    env = os.environ.get("MMRN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_benchmark(spec: ScenarioSpec, replicates: int, method: Optional[MethodConfig] = None,
                  threads: Optional[int] = None) -> BenchReport:
    """Run ``replicates`` independent data sets derived from ``spec.seed``.

    Replicate ``r`` uses a seed drawn from ``SeedSequence([spec.seed, r])``, so
    results do not depend on scheduling. Replicates run in worker processes
    when ``threads > 1``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    method = method or MethodConfig()
    method.resolve(spec)
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1 or replicates == 1:
        records = [run_replicate(spec, method, r) for r in range(replicates)]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, replicates)) as pool:
            records = list(pool.map(run_replicate, [spec] * replicates,
                                    [method] * replicates, range(replicates)))
    return BenchReport(spec=spec, method=method, records=records)
