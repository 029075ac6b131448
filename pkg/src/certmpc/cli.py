"""Command-line entry point: ``certmpc {certify,run,sweep} CONFIG``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certification failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .benchmark import load_grid, make_grid
from .certify import Certificate, check_assumption_ball, estimate_gamma
from .config import BUILTIN_GRID, ExperimentConfig, load_config
from .errors import (
    CertificationFailure,
    ConfigParseError,
    DimensionMismatch,
    EmptyGrid,
    FactorizationFailure,
    InvalidSpec,
    KappaNotContractive,
    NonConvergence,
    NonFiniteIterate,
    SingularSystem,
)
from .model import condense
from .simulate import (
    ClosedLoopTrace,
    Controller,
    iteration_reduction,
    run_closed_loop,
    summarize,
    sweep_initial_conditions,
)

log = logging.getLogger("certmpc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CERT = 0, 2, 3, 4
SUMMARY_FIELDS = ("label", "m_avg", "m_max", "m_total", "delta_avg", "delta_max",
                  "n_runs", "n_steps", "n_delta")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _header(cfg: ExperimentConfig) -> List[str]:
    return [f"certmpc {__version__}", f"config_sha256 {cfg.sha256}"]


def _write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"generator": f"certmpc {__version__}", "config_sha256": cfg.sha256}
    doc.update(payload)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _write_table(path: Path, cfg: ExperimentConfig, rows: List[dict], fields) -> None:
    buf = io.StringIO()
    for line in _header(cfg):
        buf.write(f"# {line}\n")
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    path.write_text(buf.getvalue())


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.override_m_bar is not None:
        if args.override_m_bar < 1:
            raise ConfigParseError("--override-m-bar must be positive", field="--override-m-bar")
        for c in cfg.certify.values():
            c.m_bar_override = args.override_m_bar
    if args.warm_start:
        cfg.warm_start = True
    if args.seed is not None:
        cfg.seed = args.seed
        if "n_points" in cfg.grid:
            cfg.grid["seed"] = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _grid(cfg: ExperimentConfig) -> np.ndarray:
    g = cfg.grid
    if "points" in g:
        pts = np.asarray(g["points"], dtype=float)
        if pts.size == 0:
            raise EmptyGrid("simulate.grid.points is empty")
        return pts
    if g.get("file") == BUILTIN_GRID:
        return load_grid()
    if "file" in g:
        data = np.loadtxt(g["file"], delimiter=",", comments="#", skiprows=1, ndmin=2)
        if data.size == 0:
            raise EmptyGrid(f"grid file {g['file']} has no points")
        return data
    seed = g.get("seed") if g.get("seed") is not None else cfg.seed
    return make_grid(cfg.spec, n_points=g["n_points"], box=g["box"], seed=seed,
                     n_steps=cfg.n_steps)


def _certificates(cfg: ExperimentConfig, qp) -> Dict[str, Certificate]:
    certs = cfg.certificates(qp)
    for name, c in certs.items():
        if c.beta >= 1.0 and "m_bar" not in c.overrides:
            raise CertificationFailure(f"{name}: beta = {c.beta:.4g} >= 1")
    return certs


def cmd_certify(cfg: ExperimentConfig) -> Path:
    """Write ``certificate.json`` with one certificate per method."""
    qp = condense(cfg.spec)
    certs = _certificates(cfg, qp)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(cfg)
    gam = estimate_gamma(qp, [x for x in grid if np.any(x != 0)], safety=cfg.gamma_safety)
    report = {
        "certificates": {k: dict(c.to_dict(), discrepancies=c.discrepancies())
                         for k, c in certs.items()},
        "gamma_estimate": {"gamma": gam.gamma, "ratio_max": gam.ratio_max,
                           "argmax": gam.argmax, "safety": gam.safety,
                           "n_samples": gam.n_samples,
                           "note": "sampled estimate; reported, not substituted"},
        "P": cfg.spec.P,
    }
    if cfg.seed is not None:
        ball = check_assumption_ball(qp, n_samples=256, rng=cfg.seed)
        report["unit_ball_check"] = dict(dataclasses.asdict(ball), seed=cfg.seed,
                                         note="sampling-based necessary check")
    else:
        report["unit_ball_check"] = {"skipped": "no seed configured"}
    path = out / "certificate.json"
    _write_json(path, cfg, report)
    for k, c in certs.items():
        log.info("%s: kappa=%.6g m_bar=%d (formula %d) beta=%.4g", k, c.kappa, c.m_bar,
                 c.m_bar_formula, c.beta)
    return path


def _reductions(rows_by_label) -> dict:
    out = {}
    for name in ("ADMM", "PGDM"):
        if name in rows_by_label and f"{name}(m_bar)" in rows_by_label:
            out[name] = iteration_reduction(rows_by_label[name], rows_by_label[f"{name}(m_bar)"])
    return out


def cmd_run(cfg: ExperimentConfig) -> List[Path]:
    """Single closed-loop run from ``x_init`` for every controller."""
    qp = condense(cfg.spec)
    certs = _certificates(cfg, qp)
    controllers = [Controller("oracle", "oracle")] + cfg.controllers(certs)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces: Dict[str, ClosedLoopTrace] = {}
    paths = []
    for c in controllers:
        tr = run_closed_loop(cfg.spec, qp, c, cfg.x_init, cfg.n_steps)
        traces[c.label] = tr
        if "csv" in cfg.formats:
            p = out / f"trace_{_slug(c.label)}.csv"
            p.write_text(tr.to_csv(_header(cfg) + [f"controller {c.label}",
                                                   f"policy {c.policy.describe() if c.policy else 'exact'}"]))
            paths.append(p)
    rows = {lbl: summarize(lbl, [t]) for lbl, t in traces.items() if lbl != "oracle"}
    # per-step gap and bound of the m_bar-bounded controllers, for plotting
    bounded = [lbl for lbl in traces if lbl.endswith("(m_bar)")]
    series = []
    for j in range(cfg.n_steps):
        row = {"step": j}
        for lbl in bounded:
            s = traces[lbl].steps[j]
            row[f"gap_{_slug(lbl)}"] = s.lyapunov_gap
            row[f"bound_{_slug(lbl)}"] = s.bound_rhs
        series.append(row)
    series_fields = ["step"] + [f"{k}_{_slug(l)}" for l in bounded for k in ("gap", "bound")]
    if "csv" in cfg.formats:
        p = out / "run_summary.csv"
        _write_table(p, cfg, [r.as_dict() for r in rows.values()], SUMMARY_FIELDS)
        q = out / "gap_bound_series.csv"
        _write_table(q, cfg, series, series_fields)
        paths += [p, q]
    if "json" in cfg.formats:
        p = out / "run_summary.json"
        _write_json(p, cfg, {
            "x_init": cfg.x_init, "n_steps": cfg.n_steps,
            "rows": [r.as_dict() for r in rows.values()],
            "iteration_reduction_percent": _reductions(rows),
            "bound_violations": {lbl: int(sum(s.lyapunov_gap > s.bound_rhs
                                              for s in traces[lbl].steps)) for lbl in bounded},
            "final_state_norm": {lbl: float(np.linalg.norm(t.x_final)) for lbl, t in traces.items()},
        })
        paths.append(p)
    return paths


def cmd_sweep(cfg: ExperimentConfig) -> List[Path]:
    """Table-style statistics over the configured grid of initial conditions."""
    qp = condense(cfg.spec)
    certs = _certificates(cfg, qp)
    grid = _grid(cfg)
    if len(grid) == 0:
        raise EmptyGrid("the grid of initial conditions is empty")
    if grid.shape[1] != cfg.spec.nx:
        raise DimensionMismatch(f"grid points have {grid.shape[1]} entries, expected {cfg.spec.nx}")
    controllers = cfg.controllers(certs)
    res = sweep_initial_conditions(cfg.spec, qp, controllers, grid, cfg.n_steps,
                                   n_workers=cfg.workers)
    rows = {r.label: r for r in res.rows}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in cfg.formats:
        p = out / "sweep_summary.csv"
        _write_table(p, cfg, [r.as_dict() for r in res.rows], SUMMARY_FIELDS)
        paths.append(p)
    if "json" in cfg.formats:
        p = out / "sweep_summary.json"
        _write_json(p, cfg, {"n_points": len(grid), "n_steps": cfg.n_steps,
                             "rows": [r.as_dict() for r in res.rows],
                             "iteration_reduction_percent": _reductions(rows)})
        paths.append(p)
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certmpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"certmpc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("certify", "compute certified iteration counts"),
                           ("run", "closed-loop run from x_init"),
                           ("sweep", "statistics over the initial-condition grid")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="experiment configuration (YAML)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="seed for sampled grids and checks")
        p.add_argument("--override-m-bar", type=int, dest="override_m_bar",
                       help="use this iteration count for every method")
        p.add_argument("--warm-start", action="store_true",
                       help="seed each solve with the shifted previous solution")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {"certify": cmd_certify, "run": cmd_run, "sweep": cmd_sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except (ConfigParseError, DimensionMismatch, InvalidSpec, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = COMMANDS[args.command](cfg)
    except (CertificationFailure, KappaNotContractive) as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (ConfigParseError, EmptyGrid, DimensionMismatch, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, NonFiniteIterate, FactorizationFailure, SingularSystem,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in (result if isinstance(result, list) else [result]):
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
