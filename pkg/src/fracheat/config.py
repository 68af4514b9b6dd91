"""INI-style experiment configuration.

A document has up to six sections; every key is optional and falls back to
the default listed in :func:`describe_keys` (which also feeds ``--help``)::

    [experiment]
    kind = oracle-compare
    out = runs/oracle

    [stable]
    alpha = 0.5

    [grid]
    points = 64
    coefficients = checkerboard
    lam = 2

Unknown sections or keys, unparsable values and violated invariants raise
:class:`~fracheat.errors.ConfigError` carrying the offending line number.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
import math
import re

import numpy as np

from .errors import ConfigError, DomainError

KINDS = ("density", "laplace-check", "kernel", "gradient-verify", "two-sided-verify",
         "holder-verify", "stability", "oracle-compare")
PRESETS = ("identity", "checkerboard", "smooth-bump", "inline")
PERTURBATIONS = ("checkerboard-blocks", "checkerboard-sign", "random-blocks")


# --------------------------------------------------------------------------
# value parsers / formatters

def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else _float(text)


def _int(text):
    return int(text)


def _floats(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(_float(p) for p in parts)


def _opt_floats(text):
    return None if text.strip().lower() in ("", "none", "auto") else _floats(text)


def _norms(text):
    out = []
    for p in re.split(r"[,\s]+", text.strip()):
        if not p:
            continue
        p = p.lower()
        if p in ("inf", "infinity"):
            out.append("inf")
        elif p in ("1", "2"):
            out.append(p)
        else:
            raise ValueError(f"norm {p!r} is not one of 1, 2, inf")
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _choice(options):
    def parse(text):
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _str(text):
    return text.strip()


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)  # shortest string that round-trips
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _key(default, doc, parse, check=None, message=None):
    return field(default=default, metadata={"doc": doc, "parse": parse, "check": check,
                                            "message": message})


def _positive(v):
    return v > 0


def _all_positive(v):
    return v is None or all(x > 0 for x in v)


# --------------------------------------------------------------------------
# sections

@dataclass(frozen=True)
class ExperimentSection:
    kind: str = _key("oracle-compare", "experiment kind: " + ", ".join(KINDS), _choice(KINDS))
    out: str = _key("", "output directory (overridden by --out)", _str)
    seed: int = _key(0, "random seed for the random-blocks perturbation", _int,
                     lambda v: v >= 0, "seed must be >= 0")
    threads: int = _key(1, "worker threads for scans (overridden by --threads)", _int,
                        lambda v: v >= 1, "threads must be >= 1")
    tolerance: float = _key(1e-6, "pass threshold for laplace-check and oracle-compare", _float,
                            _positive, "tolerance must be positive")


@dataclass(frozen=True)
class StableSection:
    alpha: float = _key(0.5, "stability index α in (0,1)", _float,
                        lambda v: 0 < v < 1, "alpha must lie in (0,1)")
    s_lo: float | None = _key(None, "small-s switch point (none = calibrated)", _opt_float,
                              lambda v: v is None or v > 0, "s_lo must be positive")
    s_hi: float | None = _key(None, "large-s switch point (none = calibrated)", _opt_float,
                              lambda v: v is None or v > 0, "s_hi must be positive")
    rel_tol: float = _key(1e-9, "relative tolerance of the direct density evaluation", _float,
                          lambda v: 0 < v < 1, "rel_tol must lie in (0,1)")


@dataclass(frozen=True)
class GridSection:
    domain: str = _key("grid", "grid (finite-volume operator) or free (Gaussian base)",
                       _choice(("grid", "free")))
    dim: int = _key(1, "space dimension (1 or 2)", _int, lambda v: v in (1, 2),
                    "dim must be 1 or 2")
    extent: tuple = _key((1.0,), "domain side length(s)", _floats, _all_positive,
                         "extent must be positive")
    points: tuple = _key((64.0,), "nodes per axis", _floats,
                         lambda v: all(p >= 2 and p == int(p) for p in v),
                         "points must be integers >= 2")
    boundary: str = _key("dirichlet", "dirichlet or neumann", _choice(("dirichlet", "neumann")))
    coefficients: str = _key("checkerboard", "preset: " + ", ".join(PRESETS), _choice(PRESETS))
    lam: float = _key(2.0, "ellipticity constant λ >= 1", _float, lambda v: v >= 1,
                      "lam must be >= 1")
    cells: int = _key(8, "checkerboard blocks per axis", _int, lambda v: v >= 1,
                      "cells must be >= 1")
    width: float = _key(0.1, "smooth-bump width", _float, _positive, "width must be positive")
    values: tuple | None = _key(None, "inline scalar coefficient per node (coefficients=inline)",
                                _opt_floats, _all_positive, "values must be positive")


@dataclass(frozen=True)
class ScanSection:
    t_min: float = _key(0.01, "smallest scan time", _float, _positive, "t_min must be positive")
    t_max: float = _key(10.0, "largest scan time", _float, _positive, "t_max must be positive")
    t_count: int = _key(7, "number of log-spaced scan times", _int, lambda v: v >= 2,
                        "t_count must be >= 2")
    r_max: float = _key(100.0, "largest offset |x-y|", _float, _positive,
                        "r_max must be positive")
    r_count: int = _key(25, "number of offsets including r=0", _int, lambda v: v >= 20,
                        "r_count must be >= 20")
    r_min: float | None = _key(None, "smallest positive offset (log spacing); none = uniform",
                               _opt_float, lambda v: v is None or v > 0,
                               "r_min must be positive")
    base_points: tuple = _key((0.0,), "first coordinates of the base points x", _floats)
    t_list: tuple = _key((0.1, 1.0, 10.0), "times for kernel, holder, oracle and stability runs",
                         _floats, _all_positive, "t_list entries must be positive")
    offsets: tuple | None = _key(None, "holder pair offsets (none = 15 log-spaced over 2 decades)",
                                 _opt_floats, _all_positive, "offsets must be positive")
    x0: float = _key(0.0, "holder base point x", _float)
    y0: float = _key(-1.0, "holder partner point y", _float)
    ell: float | None = _key(None, "gradient decay exponent ℓ (none = d+1)", _opt_float,
                             lambda v: v is None or v >= 0, "ell must be >= 0")
    s_min: float = _key(0.01, "density grid start", _float, _positive, "s_min must be positive")
    s_max: float = _key(100.0, "density grid end", _float, _positive, "s_max must be positive")
    s_count: int = _key(100, "density grid points", _int, lambda v: v >= 1,
                        "s_count must be >= 1")
    u: tuple = _key((0.5, 1.0, 2.0, 5.0), "Laplace-check arguments", _floats, _all_positive,
                    "u entries must be positive")


@dataclass(frozen=True)
class QuadratureSection:
    s_min: float | None = _key(None, "lower truncation of the s-integral (none = automatic)",
                               _opt_float, lambda v: v is None or v > 0, "s_min must be positive")
    s_max: float = _key(1e12, "upper truncation of the s-integral", _float, _positive,
                        "s_max must be positive")
    panels: int = _key(64, "initial Gauss-Legendre panels", _int, lambda v: v >= 8,
                       "panels must be >= 8")
    tail_order: int = _key(8, "terms of the power-law tail correction", _int, lambda v: v >= 2,
                           "tail_order must be >= 2")
    abs_tol: float = _key(1e-13, "absolute tolerance", _float, _positive,
                          "abs_tol must be positive")
    rel_tol: float = _key(1e-10, "relative tolerance", _float, _positive,
                          "rel_tol must be positive")


@dataclass(frozen=True)
class StabilitySection:
    epsilons: tuple = _key((0.4, 0.2, 0.1, 0.05, 0.025), "perturbation sizes ε", _floats,
                           lambda v: all(e >= 0 for e in v), "epsilons must be >= 0")
    p: tuple = _key(("1", "2", "inf"), "operator norms (subset of 1, 2, inf)", _norms)
    perturbation: str = _key("checkerboard-blocks", "direction: " + ", ".join(PERTURBATIONS),
                             _choice(PERTURBATIONS))
    base: str = _key("identity", "base coefficients: identity or the [grid] preset",
                     _choice(("identity", "grid")))
    base_lam: float = _key(2.0, "ellipticity constant admitted for the perturbed fields", _float,
                           lambda v: v >= 1, "base_lam must be >= 1")


SECTIONS = {
    "experiment": ExperimentSection,
    "stable": StableSection,
    "grid": GridSection,
    "scan": ScanSection,
    "quadrature": QuadratureSection,
    "stability": StabilitySection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = ExperimentSection()
    stable: StableSection = StableSection()
    grid: GridSection = GridSection()
    scan: ScanSection = ScanSection()
    quadrature: QuadratureSection = QuadratureSection()
    stability: StabilitySection = StabilitySection()

    @property
    def kind(self) -> str:
        return self.experiment.kind

    def with_overrides(self, **experiment) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, **experiment))

    def to_ini(self) -> str:
        """Every key with its effective value; :func:`parse_config` inverts this."""
        lines = []
        for name in SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                lines.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {name: {f.name: getattr(getattr(self, name), f.name)
                       for f in fields(getattr(self, name))} for name in SECTIONS}


def describe_keys() -> str:
    """Plain-text reference of every section, key, default and meaning."""
    out = []
    for name, cls in SECTIONS.items():
        out.append(f"[{name}]")
        for f in fields(cls):
            out.append(f"  {f.name} = {_fmt(f.default)}  -- {f.metadata['doc']}")
    return "\n".join(out)


# --------------------------------------------------------------------------
# parsing

def _line_index(text):
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    where = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def _cross_checks(cfg: ExperimentConfig):
    """Invariants spanning several keys; yields ``(section, key, message)``."""
    s, g, q, st = cfg.scan, cfg.grid, cfg.quadrature, cfg.stable
    if s.t_max / s.t_min < 1e3 * (1 - 1e-12):
        yield "scan", "t_max", "scan times must cover at least 3 decades (t_max/t_min >= 1000)"
    if s.s_max <= s.s_min:
        yield "scan", "s_max", "need s_min < s_max"
    if s.r_min is not None and s.r_min >= s.r_max:
        yield "scan", "r_min", "need r_min < r_max"
    if q.s_min is not None and q.s_min >= q.s_max:
        yield "quadrature", "s_max", "need s_min < s_max"
    if st.s_lo is not None and st.s_hi is not None and st.s_lo >= st.s_hi:
        yield "stable", "s_hi", "need s_lo < s_hi"
    if len(g.extent) not in (1, g.dim):
        yield "grid", "extent", "extent needs 1 or dim entries"
    if len(g.points) not in (1, g.dim):
        yield "grid", "points", "points needs 1 or dim entries"
    if g.coefficients == "inline":
        n = int(np.prod([int(p) for p in _expand(g.points, g.dim)]))
        if g.values is None or len(g.values) != n:
            yield "grid", "values", f"inline coefficients need {n} values"
        elif not all(1 / g.lam - 1e-12 <= v <= g.lam + 1e-12 for v in g.values):
            yield "grid", "values", f"inline values must lie in [1/lam, lam] = [{1 / g.lam}, {g.lam}]"
    if s.offsets is not None and max(s.offsets) / min(s.offsets) < 100 * (1 - 1e-12):
        yield "scan", "offsets", "pair offsets must span at least 2 decades"


def _expand(values, dim):
    return tuple(values) * dim if len(values) == 1 else tuple(values)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises
    ------
    ConfigError
        With the 1-based line of the offending key (or section header).
    """
    where = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from None

    built = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", where.get((name, None)))
    for name, cls in SECTIONS.items():
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        if cp.has_section(name):
            for key, raw in cp.items(name):
                line = where.get((name, key))
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]", line)
                meta = known[key].metadata
                try:
                    value = meta["parse"](raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{name}.{key}: cannot parse {raw!r} ({exc})", line) from None
                if meta["check"] is not None and not meta["check"](value):
                    raise ConfigError(meta["message"], line)
                kwargs[key] = value
        built[name] = cls(**kwargs)
    cfg = ExperimentConfig(**built)
    for section, key, message in _cross_checks(cfg):
        line = where.get((section, key)) or where.get((section, None))
        raise ConfigError(message, line)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# builders for domain objects

def build_grid(cfg: ExperimentConfig):
    from .base_kernel import Grid
    g = cfg.grid
    ext = _expand(g.extent, g.dim)
    pts = tuple(int(p) for p in _expand(g.points, g.dim))
    return Grid(ext, pts, g.boundary)


def build_coefficients(cfg: ExperimentConfig, grid):
    from .base_kernel import (CoefficientField, checkerboard_field, identity_field,
                              smooth_bump_field)
    g = cfg.grid
    if g.coefficients == "identity":
        return identity_field(grid)
    if g.coefficients == "checkerboard":
        return checkerboard_field(grid, g.lam, g.cells)
    if g.coefficients == "smooth-bump":
        return smooth_bump_field(grid, g.lam, g.width)
    vals = np.asarray(g.values, dtype=float)
    return CoefficientField(vals[:, None, None] * np.eye(grid.dim), g.lam)


def build_perturbation(cfg: ExperimentConfig, grid) -> np.ndarray:
    """Matrix-valued direction ``P`` for the stability family ``a + εP``."""
    from .base_kernel import checkerboard_sign, scalar_perturbation
    kind = cfg.stability.perturbation
    sign = checkerboard_sign(grid, cfg.grid.cells)
    if kind == "checkerboard-blocks":
        pattern = (1.0 + sign) / 2.0
    elif kind == "checkerboard-sign":
        pattern = sign
    else:
        rng = np.random.default_rng(cfg.experiment.seed)
        cells = cfg.grid.cells
        draws = rng.choice([-1.0, 1.0], size=(cells,) * grid.dim)
        X = grid.coordinates
        idx = tuple(np.clip(np.floor(X[:, ax] / grid.extent[ax] * cells).astype(int), 0, cells - 1)
                    for ax in range(grid.dim))
        pattern = draws[idx]
    return scalar_perturbation(grid, pattern)


def build_stable(cfg: ExperimentConfig):
    from .subordinator import StableParams
    s = cfg.stable
    return StableParams(s.alpha, s_lo=s.s_lo, s_hi=s.s_hi, rel_tol=s.rel_tol)


def build_quadrature(cfg: ExperimentConfig):
    from .subordination import QuadratureSpec
    q = cfg.quadrature
    return QuadratureSpec(s_min=q.s_min, s_max=q.s_max, panels=q.panels,
                          tail_order=q.tail_order, abs_tol=q.abs_tol, rel_tol=q.rel_tol)


def build_scan(cfg: ExperimentConfig, grid=None):
    """Scan grid; on a grid domain the offsets are every node spacing up to ``r_max``."""
    from .verify import ScanGrid
    s = cfg.scan
    if grid is None:
        return ScanGrid.logspaced(s.t_min, s.t_max, s.t_count, s.r_max, s.r_count,
                                  x=s.base_points, r_min=s.r_min)
    h = grid.spacing[0]
    n = max(int(math.floor(min(s.r_max, grid.extent[0]) / h + 1e-9)), s.r_count - 1)
    x = [tuple([p] + [grid.extent[ax] / 2 for ax in range(1, grid.dim)]) for p in s.base_points]
    return ScanGrid(tuple(np.geomspace(s.t_min, s.t_max, s.t_count)),
                    tuple(h * np.arange(n + 1)), x)


def validate(cfg: ExperimentConfig) -> None:
    """Construct every domain object the experiment needs, mapping failures to ConfigError."""
    try:
        build_stable(cfg)
        build_quadrature(cfg).validate(build_stable(cfg))
        if cfg.grid.domain == "grid":
            grid = build_grid(cfg)
            build_coefficients(cfg, grid)
            build_scan(cfg, grid)
        else:
            build_scan(cfg)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
