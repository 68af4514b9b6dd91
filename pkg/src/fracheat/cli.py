"""Command-line entry point: ``fracheat <subcommand> --config FILE [--out DIR]``.

Each run writes ``report.json``, ``data.csv`` and ``meta.json`` into a fresh
output directory (an existing non-empty directory is never reused), plus
per-figure CSVs from :func:`emit_plotdata`.

Exit status: 0 when every verdict holds (or the run is purely
computational), 1 when a verdict fails or an error was recorded, 2 for
usage and configuration errors.
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass, field
import math
from pathlib import Path
import platform
import re
import sys
import time
import traceback

import numpy as np
import scipy

from . import __version__
from .config import (ExperimentConfig, build_coefficients, build_grid, build_perturbation,
                     build_quadrature, build_scan, build_stable, describe_keys, load_config,
                     validate, KINDS)
from .errors import ConfigError
from .reports import csv_text, dumps_json

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["experiment", "constants", "witnesses", "verdict", "timings"],
    "properties": {
        "experiment": {"type": "string", "enum": list(KINDS)},
        "constants": {"type": "object"},
        "witnesses": {"type": "object"},
        "verdict": {"type": ["boolean", "null"]},
        "timings": {"type": "object", "required": ["wall_seconds"],
                    "properties": {"wall_seconds": {"type": "number", "minimum": 0}}},
        "exponents": {"type": "object"},
        "residuals": {"type": "object"},
        "reports": {"type": "array", "items": {"type": "object"}},
        "diagnostics": {"type": "object"},
        "errors": {"type": "array", "items": {"type": "string"}},
        "failed_points": {"type": "integer", "minimum": 0},
        "exit_status": {"type": "integer", "enum": [0, 1]},
    },
}


@dataclass
class Bundle:
    """Everything a run produces before it is written to disk."""

    kind: str
    verdict: bool | None = None
    computational: bool = False
    constants: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    exponents: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    failed_points: int = 0
    columns: tuple = ()
    rows: list = field(default_factory=list)
    figures: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def exit_status(self) -> int:
        if self.errors or self.failed_points:
            return 1
        if self.computational:
            return 0
        return 0 if self.verdict else 1

    def report(self) -> dict:
        return {
            "experiment": self.kind,
            "constants": self.constants,
            "witnesses": self.witnesses,
            "exponents": self.exponents,
            "residuals": self.residuals,
            "verdict": self.verdict,
            "reports": self.reports,
            "diagnostics": self.diagnostics,
            "errors": self.errors,
            "failed_points": self.failed_points,
            "timings": {"wall_seconds": self.wall_seconds},
            "exit_status": self.exit_status,
        }


# --------------------------------------------------------------------------
# experiments

def _kernel_source(cfg):
    from .subordination import FreeSpaceKernel, GridKernel
    from .base_kernel import assemble_operator
    params, quad = build_stable(cfg), build_quadrature(cfg)
    if cfg.grid.domain == "free":
        return FreeSpaceKernel(params, cfg.grid.dim, quad), None, cfg.grid.dim
    grid = build_grid(cfg)
    op = assemble_operator(grid, build_coefficients(cfg, grid))
    return GridKernel(op, params, quad), grid, grid.dim


def _absorb(bundle, rep, figure, figure_columns):
    bundle.verdict = rep.verdict
    bundle.constants.update(rep.constants)
    bundle.witnesses.update(rep.witnesses)
    bundle.exponents.update(rep.exponents)
    bundle.residuals.update(rep.residuals)
    if rep.drift is not None:
        bundle.residuals["refinement_drift"] = rep.drift
    bundle.reports.append(rep.to_dict())
    bundle.columns, bundle.rows = rep.columns, rep.rows
    if rep.name != "stability":
        # skipped epsilons are reported in the notes; failed scan points count as errors
        bundle.failed_points += rep.n_failed
    idx = [rep.columns.index(c) for c in figure_columns]
    bundle.figures[figure] = (figure_columns, [tuple(r[i] for i in idx) for r in rep.rows])


def _run_density(cfg, b):
    from .subordinator import density, small_s_asymptotic, tail_asymptotic
    p = build_stable(cfg)
    s = np.geomspace(cfg.scan.s_min, cfg.scan.s_max, cfg.scan.s_count)
    g = density(p, s)
    small = small_s_asymptotic(p, s)
    tail = tail_asymptotic(p, s)
    b.computational = True
    b.columns = ("s", "g", "small_asymptotic", "tail_asymptotic")
    b.rows = list(zip(s.tolist(), np.atleast_1d(g).tolist(), np.atleast_1d(small).tolist(),
                      np.atleast_1d(tail).tolist()))
    b.constants = {"A": p.A, "K": p.K, "B": p.B, "s_lo": p.s_lo, "s_hi": p.s_hi}
    lo, hi = p.switch_mismatch()
    b.residuals = {"switch_mismatch_lo": lo, "switch_mismatch_hi": hi}
    b.figures["density"] = (b.columns, b.rows)


def _run_laplace(cfg, b):
    from .subordinator import laplace_check
    p = build_stable(cfg)
    u = np.asarray(cfg.scan.u)
    vals = np.atleast_1d(laplace_check(p, u))
    exact = np.exp(-u ** p.alpha)
    err = np.abs(vals - exact)
    b.columns = ("u", "computed", "exact", "abs_error")
    b.rows = list(zip(u.tolist(), vals.tolist(), exact.tolist(), err.tolist()))
    k = int(np.argmax(err))
    b.constants = {"max_abs_error": float(err.max()), "tolerance": cfg.experiment.tolerance}
    b.witnesses = {"max_abs_error": {"u": float(u[k])}}
    b.verdict = bool(err.max() <= cfg.experiment.tolerance)
    b.figures["laplace"] = (b.columns, b.rows)


def _run_kernel(cfg, b):
    from .subordination import subordinate_matrix
    from .base_kernel import KernelField, assemble_operator
    from .reports import fmt_float
    if cfg.grid.domain != "grid":
        raise ConfigError("kernel experiments need grid.domain = grid")
    grid = build_grid(cfg)
    op = assemble_operator(grid, build_coefficients(cfg, grid))
    params, quad = build_stable(cfg), build_quadrature(cfg)
    mats, diags = [], {}
    for t in cfg.scan.t_list:
        field_t, info = subordinate_matrix(op, params, quad, t, return_info=True)
        mats.append(field_t.values[0])
        diags[fmt_float(t)] = info
    kf = KernelField(np.stack(mats), cfg.scan.t_list, grid.coordinates, grid.coordinates,
                     "kernel", params.alpha, op.volume)
    b.computational = True
    b.diagnostics["quadrature"] = diags
    row_mass = [float((m * op.volume).sum(axis=1).max()) for m in mats]
    b.constants = {"max_row_mass": max(row_mass)}
    b.columns = ("t", "x_index", "y_index", "value")
    n = grid.size
    b.rows = [(float(t), i, j, float(kf.values[k, i, j]))
              for k, t in enumerate(kf.t) for i in range(n) for j in range(n)]
    b.figures["kernel_diagonal"] = (("t", "x", "q_xx"), [
        (t, float(x[0]), float(m[i, i]))
        for t, m in zip(cfg.scan.t_list, mats) for i, x in enumerate(grid.coordinates)])


def _run_gradient(cfg, b, threads):
    from .verify import gradient_ratio_scan
    ev, grid, d = _kernel_source(cfg)
    ell = cfg.scan.ell if cfg.scan.ell is not None else d + 1
    rep = gradient_ratio_scan(ev, cfg.stable.alpha, ell, build_scan(cfg, grid), threads=threads)
    _absorb(b, rep, "gradient_ratio", ("t", "r", "grad_magnitude", "bound", "ratio"))


def _run_two_sided(cfg, b, threads):
    from .verify import two_sided_ratio_scan
    ev, grid, d = _kernel_source(cfg)
    rep = two_sided_ratio_scan(ev, cfg.stable.alpha, d, build_scan(cfg, grid), threads=threads)
    _absorb(b, rep, "two_sided_ratio", ("t", "r", "q", "bound", "ratio"))


def _run_holder(cfg, b, threads):
    from .verify import holder_fit
    ev, grid, d = _kernel_source(cfg)
    offsets = cfg.scan.offsets
    if offsets is None:
        lo = grid.spacing[0] if grid is not None else 1e-4
        offsets = tuple(lo * np.unique(np.round(np.geomspace(1, 100, 15))))
    rep = holder_fit(ev, cfg.stable.alpha, d, cfg.scan.t_list, offsets,
                     x0=cfg.scan.x0, y0=cfg.scan.y0, threads=threads)
    _absorb(b, rep, "holder_difference", ("t", "delta", "difference", "bound", "ratio"))


def _run_stability(cfg, b, threads):
    from .base_kernel import CoefficientField
    from .verify import stability_experiment
    grid = build_grid(cfg)
    if cfg.stability.base == "identity":
        base = CoefficientField(np.ones((grid.size, 1, 1)) * np.eye(grid.dim),
                                cfg.stability.base_lam)
    else:
        field_ = build_coefficients(cfg, grid)
        base = CoefficientField(field_.values, max(cfg.stability.base_lam, field_.lam))
    rep = stability_experiment(base, build_perturbation(cfg, grid), cfg.stability.epsilons,
                               cfg.stable.alpha, cfg.scan.t_list, cfg.stability.p, grid=grid,
                               quad=build_quadrature(cfg))
    _absorb(b, rep, "stability_distance", ("epsilon", "z", "t", "norm", "distance", "envelope"))


def _run_oracle(cfg, b):
    from .subordination import spectral_oracle, subordinate_matrix
    from .base_kernel import assemble_operator
    grid = build_grid(cfg)
    op = assemble_operator(grid, build_coefficients(cfg, grid))
    params, quad = build_stable(cfg), build_quadrature(cfg)
    b.columns = ("t", "max_abs_difference", "max_abs_oracle", "max_row_mass")
    worst, arg = 0.0, None
    for t in cfg.scan.t_list:
        Q, info = subordinate_matrix(op, params, quad, t, return_info=True)
        O = spectral_oracle(op, params.alpha, t)
        diff = np.abs(Q.values[0] - O.values[0])
        d = float(diff.max())
        mass = float((Q.values[0] * op.volume).sum(axis=1).max())
        b.rows.append((float(t), d, float(np.abs(O.values[0]).max()), mass))
        b.diagnostics.setdefault("quadrature", {})[format(t, ".17g")] = info
        if arg is None or d > worst:
            i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
            worst, arg = d, {"t": float(t), "x": grid.coordinates[i].tolist(),
                             "y": grid.coordinates[j].tolist()}
    b.constants = {"max_abs_difference": worst, "tolerance": cfg.experiment.tolerance}
    b.witnesses = {"max_abs_difference": arg}
    b.verdict = worst <= cfg.experiment.tolerance
    b.figures["oracle_difference"] = (b.columns, b.rows)


def _dispatch(cfg, b, threads):
    kind = cfg.kind
    if kind == "density":
        _run_density(cfg, b)
    elif kind == "laplace-check":
        _run_laplace(cfg, b)
    elif kind == "kernel":
        _run_kernel(cfg, b)
    elif kind == "gradient-verify":
        _run_gradient(cfg, b, threads)
    elif kind == "two-sided-verify":
        _run_two_sided(cfg, b, threads)
    elif kind == "holder-verify":
        _run_holder(cfg, b, threads)
    elif kind == "stability":
        _run_stability(cfg, b, threads)
    else:
        _run_oracle(cfg, b)


# --------------------------------------------------------------------------
# files

def _prepare_dir(path: Path):
    if path.exists():
        if not path.is_dir():
            raise FileExistsError(f"{path} exists and is not a directory")
        if any(path.iterdir()):
            raise FileExistsError(f"refusing to overwrite non-empty directory {path}")
    path.mkdir(parents=True, exist_ok=True)


def _meta(cfg: ExperimentConfig, wall):
    return {
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
        "versions": {"fracheat": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_seconds": wall,
    }


def emit_plotdata(bundle: Bundle, out_dir) -> list[Path]:
    """Write one CSV per figure; floats use 17 significant digits."""
    if not bundle.rows or not any(rows for _, rows in bundle.figures.values()):
        raise ValueError("scan produced no rows")
    out = Path(out_dir)
    written = []
    for name in sorted(bundle.figures):
        cols, rows = bundle.figures[name]
        path = out / f"plot_{name}.csv"
        path.write_text(csv_text(cols, rows), encoding="utf-8")
        written.append(path)
    return written


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> Bundle:
    """Run ``cfg``, write its files and return the bundle.

    Errors raised by the computation are captured in ``report.json``; any
    partially written CSV is removed.
    """
    out = Path(out_dir or cfg.experiment.out or f"fracheat-{cfg.kind}")
    _prepare_dir(out)
    threads = threads or cfg.experiment.threads
    b = Bundle(cfg.kind)
    t0 = time.perf_counter()
    try:
        _dispatch(cfg, b, threads)
    except Exception as exc:  # recorded in report.json, nonzero exit
        b.errors.append(f"{type(exc).__name__}: {exc}")
        b.diagnostics["traceback"] = traceback.format_exc()
        b.verdict = False if not b.computational else None
    b.wall_seconds = time.perf_counter() - t0
    data = out / "data.csv"
    try:
        if not b.errors:
            data.write_text(csv_text(b.columns, b.rows), encoding="utf-8")
            if b.rows:
                emit_plotdata(b, out)
    except Exception as exc:
        b.errors.append(f"{type(exc).__name__}: {exc}")
    if b.errors:
        for p in [data, *out.glob("plot_*.csv")]:
            p.unlink(missing_ok=True)
    (out / "report.json").write_text(dumps_json(b.report()), encoding="utf-8")
    (out / "meta.json").write_text(dumps_json(_meta(cfg, b.wall_seconds)), encoding="utf-8")
    return b


# --------------------------------------------------------------------------
# argument parsing

def _parser():
    epilog = "configuration keys (INI sections):\n" + describe_keys()
    parser = argparse.ArgumentParser(
        prog="fracheat", description="Heat kernels of fractional powers of elliptic operators.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fracheat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment", epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="INI configuration file (defaults if omitted)")
        p.add_argument("--out", help="output directory (must be new or empty)")
        p.add_argument("--threads", type=int, help="worker threads for scans")
    p = sub.add_parser("selftest", help="run the acceptance checks")
    p.add_argument("--out", help="directory for the per-criterion data files")
    p.add_argument("--threads", type=int, help="ignored; accepted for symmetry")
    p.add_argument("--config", help="ignored; accepted for symmetry")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.command == "selftest":
        from .acceptance import run_selftest
        out = Path(args.out or "fracheat-selftest")
        try:
            _prepare_dir(out)
        except FileExistsError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        results = run_selftest(out)
        return 0 if all(r.passed for r in results) else 1
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.config and cfg.kind != args.command and _kind_given(args.config):
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        cfg = cfg.with_overrides(kind=args.command)
        validate(cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        bundle = run_experiment(cfg, args.out, args.threads)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    status = "ok" if bundle.exit_status == 0 else "FAILED"
    print(f"{cfg.kind}: verdict={bundle.verdict} status={status}")
    for err in bundle.errors:
        print(f"  error: {err}", file=sys.stderr)
    return bundle.exit_status


def _kind_given(path) -> bool:
    text = Path(path).read_text(encoding="utf-8")
    return re.search(r"^\s*kind\s*[=:]", text, re.MULTILINE) is not None


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
