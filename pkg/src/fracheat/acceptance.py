"""Acceptance checks shared by ``fracheat selftest`` and the test suite.

Each ``criterion_N`` function runs one check at its stated tolerance and
returns a :class:`CriterionResult`: one boolean per sub-check plus the
sampled numbers as CSV rows, so the selftest leaves a reproducible data
file per criterion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from pathlib import Path
import time

import numpy as np

from .base_kernel import (CoefficientField, GaussianBase, Grid, assemble_operator,
                          checkerboard_field, checkerboard_sign, scalar_perturbation)
from .quadrature import adaptive_gauss_legendre
from .reports import csv_text, dumps_json
from .subordination import (FreeSpaceKernel, GridKernel, QuadratureSpec, generator_apply,
                            spectral_oracle, subordinate_matrix, subordinate_pointwise)
from .subordinator import (StableParams, default_s_min, density, envelope_constant,
                           laplace_check, tail_series_coefficients)
from .verify import (ScanGrid, gradient_ratio_scan, holder_fit, stability_experiment,
                     two_sided_ratio_scan)

ALPHAS = (0.3, 0.5, 0.7, 0.9)


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list[tuple[str, bool, float]] = field(default_factory=list)
    columns: tuple[str, ...] = ()
    rows: list[tuple] = field(default_factory=list)
    seconds: float = 0.0
    budget: float | None = None

    @property
    def passed(self) -> bool:
        timely = self.budget is None or self.seconds <= self.budget
        return timely and all(ok for _, ok, _ in self.checks)

    def check(self, label: str, ok, value=math.nan):
        self.checks.append((label, bool(ok), float(value)))

    def failures(self) -> list[str]:
        out = [f"{label} (value {value:.6g})" for label, ok, value in self.checks if not ok]
        if self.budget is not None and self.seconds > self.budget:
            out.append(f"runtime {self.seconds:.1f}s exceeds {self.budget:g}s")
        return out

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"criterion {self.number:2d} [{status}] {self.title}"
        fails = self.failures()
        if fails:
            msg += ": " + "; ".join(fails)
        return msg


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def checkerboard_operator(points=64, boundary="dirichlet", lam=2.0):
    g = Grid(1.0, points, boundary)
    return assemble_operator(g, checkerboard_field(g, lam))


@_timed
def criterion_1() -> CriterionResult:
    """Laplace transform of the density equals ``exp(-u^α)``."""
    res = CriterionResult(1, "Laplace identity", columns=("alpha", "u", "computed", "exact",
                                                          "abs_error"), budget=10.0)
    u = np.array([0.5, 1.0, 2.0, 5.0])
    for a in ALPHAS:
        vals = laplace_check(StableParams(a), u)
        for ui, v in zip(u, vals):
            ex = math.exp(-ui ** a)
            res.rows.append((a, float(ui), float(v), ex, abs(float(v) - ex)))
            res.check(f"alpha={a} u={ui}", abs(v - ex) <= 1e-6, abs(v - ex))
    return res


@_timed
def criterion_2() -> CriterionResult:
    """α = 1/2 density against the Lévy closed form."""
    res = CriterionResult(2, "Levy oracle", columns=("s", "computed", "exact", "rel_error"),
                          budget=10.0)
    s = np.geomspace(0.01, 100.0, 200)
    g = density(StableParams(0.5), s)
    exact = (2 * math.sqrt(math.pi)) ** -1 * s ** -1.5 * np.exp(-1 / (4 * s))
    rel = np.abs(g - exact) / exact
    res.rows = list(zip(s.tolist(), g.tolist(), exact.tolist(), rel.tolist()))
    res.check("max relative error <= 1e-8", rel.max() <= 1e-8, rel.max())
    return res


@_timed
def criterion_3() -> CriterionResult:
    """Unit mass, bounded ``g s^{1+α}`` and the tail ratio to ``B`` at ``s = 1e4``."""
    res = CriterionResult(3, "normalization and envelope",
                          columns=("alpha", "mass", "envelope", "tail_ratio"))
    for a in ALPHAS:
        p = StableParams(a)
        lo, hi = math.log(default_s_min(a)), math.log(1e8)
        body, _, _ = adaptive_gauss_legendre(lambda u: density(p, np.exp(u)) * np.exp(u),
                                             lo, hi, rel_tol=1e-12, abs_tol=1e-14, order=20)
        b = tail_series_coefficients(a, 12)
        k = np.arange(1, b.size + 1)
        mass = body + float((b * 1e8 ** (-k * a) / (k * a)).sum())
        env = envelope_constant(p, np.geomspace(1e-3, 1e8, 400))
        ratio = float(density(p, 1e4)) * 1e4 ** (1 + a) / p.B
        res.rows.append((a, mass, env, ratio))
        res.check(f"alpha={a} mass", abs(mass - 1) <= 1e-6, mass - 1)
        res.check(f"alpha={a} envelope finite", math.isfinite(env), env)
        res.check(f"alpha={a} tail ratio within 1e-3", abs(ratio - 1) <= 1e-3, ratio - 1)
    return res


@_timed
def criterion_4() -> CriterionResult:
    """Subordinated Gaussian at α = 1/2 against the Poisson kernel."""
    res = CriterionResult(4, "Poisson oracle", columns=("t", "r", "computed", "exact",
                                                        "rel_error"), budget=30.0)
    params, quad, base = StableParams(0.5), QuadratureSpec(), GaussianBase(1)
    worst = 0.0
    for t in (0.1, 1.0, 10.0):
        for r in np.linspace(0.0, 10.0, 20):
            v = subordinate_pointwise(base, params, quad, t, np.array([r]), np.array([0.0]))
            ex = t / (math.pi * (t * t + r * r))
            rel = abs(v - ex) / ex
            worst = max(worst, rel)
            res.rows.append((t, float(r), v, ex, rel))
    res.check("max relative error <= 1e-6", worst <= 1e-6, worst)
    return res


@_timed
def criterion_5() -> CriterionResult:
    """Quadrature semigroup matrices against the spectral oracle."""
    res = CriterionResult(5, "spectral-oracle equivalence",
                          columns=("alpha", "t", "max_abs_difference"), budget=60.0)
    op = checkerboard_operator()
    quad = QuadratureSpec()
    for a in (0.3, 0.5, 0.7):
        for t in (0.1, 1.0, 10.0):
            Q = subordinate_matrix(op, StableParams(a), quad, t).values
            O = spectral_oracle(op, a, t).values
            d = float(np.abs(Q - O).max())
            res.rows.append((a, t, d))
            res.check(f"alpha={a} t={t}", d <= 1e-6, d)
    return res


@_timed
def criterion_6() -> CriterionResult:
    """Generator quadrature against ``-(-H)^α f``."""
    res = CriterionResult(6, "generator formula", columns=("alpha", "function", "max_abs_error"),
                          budget=30.0)
    op = checkerboard_operator()
    sp = op.spectrum()
    rng = np.random.default_rng(12345)
    funcs = {f"eigvec{k}": sp.vectors[:, k] for k in (0, 1, 7, 31, 63)}
    funcs.update({f"random{k}": rng.standard_normal(op.size) for k in range(2)})
    quad = QuadratureSpec()
    mu = -sp.mu
    for a in (0.3, 0.5, 0.7):
        for name, f in funcs.items():
            exact = sp.vectors @ (-(mu ** a) * (sp.vectors.T @ f))
            err = float(np.abs(generator_apply(op, a, f, quad) - exact).max())
            res.rows.append((a, name, err))
            res.check(f"alpha={a} {name}", err <= 1e-6, err)
    return res


def _scan_rows(rep, tag):
    return [(tag,) + tuple(r) for r in rep.rows]


FREE_SCAN = ScanGrid.logspaced(1e-2, 10.0, 7, 100.0, 25, r_min=1e-2)


def grid_scan(op, t_min=1e-3, t_max=1.0, n_t=7, x=(0.25, 0.5)):
    h = op.grid.spacing[0]
    return ScanGrid(tuple(np.geomspace(t_min, t_max, n_t)),
                    tuple(h * np.arange(op.grid.points[0] // 2 + 1)), x)


@_timed
def criterion_7() -> CriterionResult:
    """Gradient constant: ``2/π`` in free space, refinement-stable on the grid."""
    res = CriterionResult(7, "gradient estimate",
                          columns=("case", "t", "x", "y", "r", "grad_magnitude", "bound", "ratio"),
                          budget=120.0)
    params = StableParams(0.5)
    free = gradient_ratio_scan(FreeSpaceKernel(params), 0.5, 2.0, FREE_SCAN)
    c1 = free.constants["c1"]
    res.check("free-space c1 within 2% of 2/pi", abs(c1 / (2 / math.pi) - 1) <= 0.02, c1)
    op = checkerboard_operator(boundary="neumann")
    grid = gradient_ratio_scan(GridKernel(op, params), 0.5, 2.0, grid_scan(op))
    res.check("grid c1 finite", math.isfinite(grid.constants["c1"]), grid.constants["c1"])
    res.check("grid refinement drift <= 5%", grid.drift <= 0.05, grid.drift)
    res.rows = _scan_rows(free, "free") + _scan_rows(grid, "grid")
    return res


@_timed
def criterion_8() -> CriterionResult:
    """Two-sided constant ``2π`` in free space; grid two-sided and Hölder fits."""
    res = CriterionResult(8, "two-sided and Holder bounds",
                          columns=("case", "t", "x", "y", "r", "q", "bound", "ratio"))
    params = StableParams(0.5)
    scan = ScanGrid(tuple(10.0 ** np.arange(-2.0, 1.01, 0.5)),
                    tuple([0.0] + list(10.0 ** np.arange(-2.0, 2.01, 0.2))))
    free = two_sided_ratio_scan(FreeSpaceKernel(params), 0.5, 1, scan)
    c = free.constants["c"]
    res.check("free-space c within 2% of 2*pi", abs(c / (2 * math.pi) - 1) <= 0.02, c)
    op = checkerboard_operator(boundary="neumann")
    grid = two_sided_ratio_scan(GridKernel(op, params), 0.5, 1, grid_scan(op))
    res.check("grid c finite", math.isfinite(grid.constants["c"]), grid.constants["c"])
    res.check("grid refinement drift <= 5%", grid.drift <= 0.05, grid.drift)
    fine = checkerboard_operator(points=256, boundary="neumann")
    h = fine.grid.spacing[0]
    offsets = h * np.unique(np.round(np.geomspace(1, 100, 15)))
    hold = holder_fit(GridKernel(fine, params), 0.5, 1, (0.01, 0.1, 1.0), offsets,
                      x0=0.5, y0=0.25)
    gamma = hold.exponents.get("gamma", math.nan)
    r2 = hold.residuals.get("r2", math.nan)
    res.check("holder gamma in (0,1]", 0 < gamma <= 1, gamma)
    res.check("holder R^2 >= 0.9", r2 >= 0.9, r2)
    res.rows = _scan_rows(free, "free") + _scan_rows(grid, "grid")
    res.rows += [("holder", t, "", "", dl, diff, b, q) for t, dl, diff, b, q in hold.rows]
    return res


STABILITY_EPSILONS = (0.4, 0.2, 0.1, 0.05, 0.025)
STABILITY_TIMES = (0.02, 0.05, 0.1, 0.2)


def stability_case(points=64, boundary="dirichlet"):
    """Base ``a ≡ 1`` and the direction ``χ`` of the even checkerboard blocks."""
    g = Grid(1.0, points, boundary)
    base = CoefficientField(np.ones((g.size, 1, 1)), 2.0)
    pert = scalar_perturbation(g, (1.0 + checkerboard_sign(g)) / 2.0)
    return g, base, pert


@_timed
def criterion_9() -> CriterionResult:
    """Stability: distances shrink with ε, fitted exponent, contraction ceiling."""
    res = CriterionResult(9, "stability", columns=("epsilon", "z", "t", "norm", "distance",
                                                   "envelope"), budget=180.0)
    g, base, pert = stability_case()
    rep = stability_experiment(base, pert, STABILITY_EPSILONS, 0.5, STABILITY_TIMES, grid=g)
    res.rows = list(rep.rows)
    dist = np.array([r[4] for r in rep.rows])
    res.check("distances monotone in epsilon (5% noise)", rep.residuals.get("monotone") == 1.0,
              rep.residuals.get("monotone", 0.0))
    for key, val in sorted(rep.exponents.items()):
        if key.startswith("delta["):
            res.check(f"{key} in (0, 1.05]", 0 < val <= 1.05, val)
    for key, val in sorted(rep.residuals.items()):
        if key.startswith("r2["):
            res.check(f"{key} >= 0.9", val >= 0.9, val)
    op_d = np.array([r[4] for r in rep.rows if r[3] != "kernel_sup"])
    res.check("operator distances <= 2", op_d.max() <= 2.0, op_d.max())
    res.check("report verdict", rep.verdict, float(bool(rep.verdict)))
    res.check("all distances finite", np.all(np.isfinite(dist)), float(np.isfinite(dist).all()))
    return res


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9)


def run_selftest(out_dir, echo=print) -> list[CriterionResult]:
    """Run criteria 1-9, writing ``criterion_NN.csv`` and ``summary.json`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for fn in CRITERIA:
        r = fn()
        results.append(r)
        (out / f"criterion_{r.number:02d}.csv").write_text(csv_text(r.columns, r.rows),
                                                           encoding="utf-8")
        if echo is not None:
            echo(r.line())
    summary = {
        "criteria": [{"number": r.number, "title": r.title, "passed": r.passed,
                      "failures": r.failures(),
                      "checks": [{"label": l, "passed": ok, "value": v} for l, ok, v in r.checks]}
                     for r in results],
        "all_passed": all(r.passed for r in results),
    }
    (out / "summary.json").write_text(dumps_json(summary), encoding="utf-8")
    (out / "timings.json").write_text(
        dumps_json({f"criterion_{r.number}": r.seconds for r in results}), encoding="utf-8")
    return results
