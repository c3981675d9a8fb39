"""Command-line front end: ``fit-sdr``, ``fit-svs``, ``simulate`` and ``benchmark``.

Data files are CSV with one sample per row and a header naming predictor
columns ``x1..xp`` and response columns ``y1..yq``. Results are JSON with
floats written in shortest round-trip form.

Exit codes: 0 success, 1 usage or input error, 2 valid output from a fit that
hit the iteration limit.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dcov import SampleSet
from .mmcore import FitOptions, fit_sdr
from .simbench import FAMILIES, PARTS, MethodConfig, ScenarioSpec, generate, run_benchmark
from .svs import PenaltyConfig, bic_select, fit_svs

log = logging.getLogger("mmrn")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

PAPER_DEFAULTS = {"eps": 1e-10, "sigma": 0.5, "alpha": 1e-20, "rel_tol": 1e-7, "max_iter": 1000}

_FIT_DEFAULTS = dict(PAPER_DEFAULTS, d=None, seed=0, init="sir", restarts=0, slices=10,
                     ridge_policy="ridge", input=None, config=None, out=None, paper_defaults=False)
DEFAULTS = {
    "fit-sdr": dict(_FIT_DEFAULTS),
    "fit-svs": dict(_FIT_DEFAULTS, lam=None, lambda_grid=None, adaptive=True, truncation_tol=1e-7),
    "simulate": dict(family=None, part=None, n=None, p=None, seed=0, out=None, truth=None, config=None),
    "benchmark": dict(PAPER_DEFAULTS, family=None, part=None, n=None, p=None, seed=0, reps=None,
                      method="auto", d=None, restarts=5, lambda_grid=None, threads=None,
                      out=None, json=None, wide=False, config=None, paper_defaults=False),
}


class UsageError(Exception):
    """Bad flags, config or input data; reported with exit code 1."""


# --------------------------------------------------------------------------
# IO
# --------------------------------------------------------------------------

_COL = re.compile(r"^([xy])(\d+)$")


def read_samples(path) -> SampleSet:
    """Parse a row-per-sample CSV into a :class:`SampleSet`."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    kinds = []
    for h in header:
        m = _COL.match(h)
        if not m:
            raise UsageError(f"{path}:1: header column {h!r} is not of the form x<k> or y<k>")
        kinds.append(m.group(1))
    xi = [i for i, k in enumerate(kinds) if k == "x"]
    yi = [i for i, k in enumerate(kinds) if k == "y"]
    if not xi or not yi:
        raise UsageError(f"{path}:1: need at least one x and one y column")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise UsageError(f"{path}:{lineno}: non-finite value")
        values.append(vals)
    if len(values) < 2:
        raise UsageError(f"{path}: need at least two data rows")
    M = np.array(values)
    return SampleSet(M[:, xi].T, M[:, yi].T)


def write_samples(path, data: SampleSet) -> None:
    header = [f"x{i + 1}" for i in range(data.p)] + [f"y{j + 1}" for j in range(data.q)]
    M = np.vstack([data.X, data.Y]).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def _dump_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, allow_nan=True)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _check_out_path(path: Optional[str]) -> None:
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def resolve_config(command: str, flags: dict) -> dict:
    """Defaults, then config file, then explicit flags; ``paper_defaults`` pins the solver constants."""
    defaults = DEFAULTS[command]
    file_cfg = _load_config(flags.get("config"))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(defaults)
    cfg.update(file_cfg)
    cfg.update(flags)
    if cfg.get("paper_defaults"):
        cfg.update(PAPER_DEFAULTS)
    return cfg


def _fit_options(cfg: dict) -> FitOptions:
    try:
        return FitOptions(eps=float(cfg["eps"]), sigma=float(cfg["sigma"]), alpha=float(cfg["alpha"]),
                          rel_tol=float(cfg["rel_tol"]), max_iter=int(cfg["max_iter"]),
                          init=cfg["init"], seed=int(cfg["seed"]), restarts=int(cfg["restarts"]),
                          slices=int(cfg["slices"]), ridge_policy=cfg["ridge_policy"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _require(cfg: dict, *keys) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _check_d(data: SampleSet, d) -> int:
    d = int(d)
    if not 1 <= d < data.p:
        raise UsageError(f"need 1 <= d < p, got d={d}, p={data.p}")
    if data.n < d + 2:
        raise UsageError(f"need n >= d + 2, got n={data.n}")
    return d


def _fit_json(fit) -> dict:
    return {
        "betaHat": fit.beta_hat.tolist(),
        "betaHatShape": list(fit.beta_hat.shape),
        "betaHatVec": fit.beta_hat.reshape(-1, order="F").tolist(),
        "gammaHat": fit.gamma_hat.gamma.tolist(),
        "objective": fit.objective,
        "objectiveTrace": list(fit.objective_trace),
        "gradNorms": list(fit.grad_norms),
        "iterations": fit.iterations,
        "lineSearchCounts": list(fit.line_search_counts),
        "fallbackSteps": fit.fallback_steps,
        "converged": fit.converged,
        "message": fit.message,
    }


def _scenario(cfg: dict) -> ScenarioSpec:
    _require(cfg, "family", "n")
    try:
        return ScenarioSpec(family=cfg["family"], n=int(cfg["n"]),
                            p=None if cfg["p"] is None else int(cfg["p"]),
                            part=cfg["part"], seed=int(cfg["seed"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_fit_sdr(cfg: dict) -> int:
    _require(cfg, "input", "d")
    _check_out_path(cfg["out"])
    data = read_samples(cfg["input"])
    d = _check_d(data, cfg["d"])
    fit = fit_sdr(data, d, _fit_options(cfg))
    _dump_json(_fit_json(fit), cfg["out"])
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_fit_svs(cfg: dict) -> int:
    _require(cfg, "input", "d")
    _check_out_path(cfg["out"])
    if cfg["lam"] is not None and not float(cfg["lam"]) >= 0:
        raise UsageError(f"lambda must be >= 0, got {cfg['lam']}")
    grid = cfg["lambda_grid"]
    if grid is not None:
        grid = [float(v) for v in grid]
        if not grid or min(grid) < 0:
            raise UsageError("lambda grid must be non-empty with values >= 0")
    data = read_samples(cfg["input"])
    d = _check_d(data, cfg["d"])
    opts = _fit_options(cfg)
    tol = float(cfg["truncation_tol"])
    if cfg["lam"] is not None:
        res = fit_svs(data, d, PenaltyConfig(lam=float(cfg["lam"]), adaptive=bool(cfg["adaptive"]),
                                             truncation_tol=tol), opts)
        report = None
    else:
        _, res, report = bic_select(data, d, grid, opts, adaptive=bool(cfg["adaptive"]),
                                    truncation_tol=tol)
    out = _fit_json(res.fit)
    out.update(
        lambda_=res.lambda_used,
        activeRows=[i + 1 for i in res.active_rows],
        rowNorms=res.row_norms.tolist(),
        betaTruncated=res.beta_truncated.tolist(),
        bic=res.bic_value,
    )
    out["lambda"] = out.pop("lambda_")
    if report is not None:
        out["bicReport"] = [
            {**r, "active_rows": [i + 1 for i in r["active_rows"]]} if "active_rows" in r else r
            for r in report
        ]
    _dump_json(out, cfg["out"])
    return EXIT_OK if res.fit.converged else EXIT_NOT_CONVERGED


def cmd_simulate(cfg: dict) -> int:
    _require(cfg, "out")
    spec = _scenario(cfg)
    _check_out_path(cfg["out"])
    truth_path = cfg["truth"] or str(Path(cfg["out"]).with_suffix("")) + ".truth.json"
    _check_out_path(truth_path)
    data, truth = generate(spec)
    write_samples(cfg["out"], data)
    _dump_json({
        "family": spec.family, "part": spec.part, "n": spec.n, "p": spec.p, "seed": spec.seed,
        "betaTrue": truth.beta_true.tolist(),
        "activeSet": [i + 1 for i in truth.active_set],
    }, truth_path)
    return EXIT_OK


def _write_wide_csv(report, path) -> None:
    names = report.metric_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "seed", *names, "wall_ms", "iterations", "converged", "error"])
        for r in report.records:
            w.writerow([r.replicate, r.seed,
                        *[repr(float(r.metrics[k])) if k in r.metrics else "" for k in names],
                        repr(float(r.wall_ms)), r.iterations, str(r.converged).lower(), r.error or ""])


def cmd_benchmark(cfg: dict) -> int:
    _require(cfg, "reps", "out")
    reps = int(cfg["reps"])
    if reps < 1:
        raise UsageError("--reps must be >= 1")
    spec = _scenario(cfg)
    _check_out_path(cfg["out"])
    _check_out_path(cfg["json"])
    try:
        method = MethodConfig(method=cfg["method"], d=cfg["d"], eps=float(cfg["eps"]),
                              sigma=float(cfg["sigma"]), alpha=float(cfg["alpha"]),
                              rel_tol=float(cfg["rel_tol"]), max_iter=int(cfg["max_iter"]),
                              restarts=int(cfg["restarts"]),
                              lambda_grid=None if cfg["lambda_grid"] is None
                              else tuple(float(v) for v in cfg["lambda_grid"]))
        method.resolve(spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    threads = None if cfg["threads"] is None else int(cfg["threads"])
    report = run_benchmark(spec, reps, method, threads=threads)
    if cfg["wide"]:
        _write_wide_csv(report, cfg["out"])
    else:
        report.write_csv(cfg["out"])
    summary = report.to_json_dict()
    if cfg["json"]:
        report.write_json(cfg["json"])
    else:
        _dump_json(summary, None)
    if report.failures():
        log.warning("%d of %d replicates failed", report.failures(), reps)
    return EXIT_OK


COMMANDS = {"fit-sdr": cmd_fit_sdr, "fit-svs": cmd_fit_svs,
            "simulate": cmd_simulate, "benchmark": cmd_benchmark}


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _solver_flags(sp) -> None:
    sp.add_argument("--eps", type=float, help="perturbation constant (default 1e-10)")
    sp.add_argument("--sigma", type=float, help="step shrink factor (default 0.5)")
    sp.add_argument("--alpha", type=float, help="Armijo constant (default 1e-20)")
    sp.add_argument("--rel-tol", type=float, help="relative objective change to stop (default 1e-7)")
    sp.add_argument("--max-iter", type=int, help="iteration cap (default 1000)")
    sp.add_argument("--paper-defaults", action="store_true",
                    help="pin eps, sigma, alpha, rel-tol and max-iter to the reference constants")
    sp.add_argument("--config", help="JSON file of option values; explicit flags take precedence")


def _scenario_flags(sp) -> None:
    sp.add_argument("--family", choices=FAMILIES)
    sp.add_argument("--part", choices=PARTS + ("1", "2", "3"), help="predictor part (Models A-C)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmrn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("fit-sdr", "estimate a central subspace basis"),
                        ("fit-svs", "sparse fit with row-wise penalty; BIC path when --lam is unset")):
        sp = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        sp.add_argument("input", help="CSV data file")
        sp.add_argument("--d", type=int, help="structural dimension")
        sp.add_argument("--out", help="JSON output path (stdout when omitted)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--init", choices=("sir", "random"))
        sp.add_argument("--restarts", type=int, help="extra random starts")
        sp.add_argument("--slices", type=int)
        sp.add_argument("--ridge-policy", choices=("ridge", "strict"))
        _solver_flags(sp)
        if name == "fit-svs":
            sp.add_argument("--lam", type=float, help="penalty level; omit for BIC selection")
            sp.add_argument("--lambda-grid", type=float, nargs="+")
            sp.add_argument("--no-adaptive", dest="adaptive", action="store_false")
            sp.add_argument("--truncation-tol", type=float)

    sp = sub.add_parser("simulate", help="generate a scenario data set",
                        argument_default=argparse.SUPPRESS)
    _scenario_flags(sp)
    sp.add_argument("--out", help="CSV output path")
    sp.add_argument("--truth", help="ground-truth JSON path (default <out>.truth.json)")
    sp.add_argument("--config")

    sp = sub.add_parser("benchmark", help="replicate a scenario and score the fits",
                        argument_default=argparse.SUPPRESS)
    _scenario_flags(sp)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--method", choices=("auto", "sdr", "svs"))
    sp.add_argument("--d", type=int)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--lambda-grid", type=float, nargs="+")
    sp.add_argument("--threads", type=int, help="worker processes (default $MMRN_THREADS or CPU count)")
    sp.add_argument("--out", help="per-replicate CSV path")
    sp.add_argument("--json", help="aggregate JSON path (stdout when omitted)")
    sp.add_argument("--wide", action="store_true", help="one CSV row per replicate")
    _solver_flags(sp)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
        logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        command = args.pop("command")
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except UsageError as exc:
        sys.stderr.write(f"mmrn: error: {exc}\n")
        return EXIT_USAGE
    except (ValueError, np.linalg.LinAlgError, ArithmeticError, OSError) as exc:
        sys.stderr.write(f"mmrn: error: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
