import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracheat.base_kernel import (CoefficientField, Grid, KernelField, assemble_operator,
                                  checkerboard_field, checkerboard_sign, scalar_perturbation)
from fracheat.errors import DomainError
from fracheat.subordination import FreeSpaceKernel, GridKernel
from fracheat.verify import (ScanGrid, gradient_ratio_scan, holder_fit, kernel_distance_sup,
                             l2loc_norm, semigroup_distance, stability_experiment,
                             stable_shape, two_sided_ratio_scan)

from conftest import poisson_kernel


class Poisson:
    """Closed-form α=1/2 kernel in d=1 with its x-gradient."""

    def __call__(self, t, x, y):
        return poisson_kernel(t, float(np.atleast_1d(x)[0] - np.atleast_1d(y)[0]))

    def gradient(self, t, x, y):
        r = float(np.atleast_1d(x)[0] - np.atleast_1d(y)[0])
        return np.array([-2 * t * r / (math.pi * (t * t + r * r) ** 2)])


FREE = ScanGrid.logspaced(1e-2, 10.0, 7, 100.0, 25, r_min=1e-2)


def scalar_field(values, lam=4.0):
    return CoefficientField(np.asarray(values, dtype=float)[:, None, None], lam)


def line_op(values, points=None, boundary="dirichlet", extent=1.0):
    values = np.asarray(values, dtype=float)
    g = Grid(extent, points or values.size, boundary)
    return assemble_operator(g, scalar_field(values, max(values.max(), 1 / values.min(), 1.0)))


class TestScanGrid:
    def test_requires_three_decades(self):
        with pytest.raises(DomainError, match="3 decades"):
            ScanGrid.logspaced(0.1, 10.0, 5, 1.0, 25)

    def test_requires_twenty_offsets_with_zero(self):
        with pytest.raises(DomainError):
            ScanGrid.logspaced(0.01, 10.0, 5, 1.0, 10)
        with pytest.raises(DomainError):
            ScanGrid((0.01, 10.0), tuple(np.linspace(0.1, 2, 25)))

    def test_refinement_doubles_and_nests(self):
        fine = FREE.refined()
        assert set(FREE.t) <= set(fine.t) and set(FREE.r) <= set(fine.r)
        assert len(fine.t) == 2 * len(FREE.t) - 1
        assert min(r for r in fine.r if r > 0) == pytest.approx(FREE.r[1] / 2)

    def test_points_are_distinct(self):
        pts = FREE.points()
        assert len(pts) == len(FREE.t) * len(FREE.r)

    def test_shape_at_origin_uses_first_branch(self):
        assert stable_shape(2.0, 0.0, 1, 0.5) == pytest.approx(0.5)


class TestGradientScan:
    def test_poisson_constant(self):
        rep = gradient_ratio_scan(Poisson(), 0.5, 2.0, FREE)
        assert rep.constants["c1"] == pytest.approx(2 / math.pi, rel=0.02)
        assert rep.drift < 0.05 and rep.verdict

    def test_zero_kernel(self):
        rep = gradient_ratio_scan(lambda t, x, y: np.zeros(1), 0.5, 2.0, FREE)
        assert rep.constants["c1"] == 0.0 and rep.verdict is True

    def test_failures_are_counted_not_fatal(self):
        def flaky(t, x, y):
            if t > 5:
                raise RuntimeError("boom")
            return Poisson().gradient(t, x, y)
        rep = gradient_ratio_scan(flaky, 0.5, 2.0, FREE)
        assert rep.n_failed > 0
        assert math.isfinite(rep.constants["c1"])

    def test_threads_do_not_change_result(self):
        a = gradient_ratio_scan(Poisson().gradient, 0.5, 2.0, FREE, threads=1)
        b = gradient_ratio_scan(Poisson().gradient, 0.5, 2.0, FREE, threads=3)
        assert a.constants == b.constants and a.rows == b.rows

    def test_subordinated_gaussian_matches_closed_form(self, stable):
        small = ScanGrid.logspaced(1e-1, 100.0, 4, 10.0, 20, r_min=1e-1)
        rep = gradient_ratio_scan(FreeSpaceKernel(stable(0.5)).gradient, 0.5, 2.0, small)
        ref = gradient_ratio_scan(Poisson().gradient, 0.5, 2.0, small)
        assert rep.constants["c1"] == pytest.approx(ref.constants["c1"], rel=1e-6)


class TestTwoSidedScan:
    def test_poisson_constant(self):
        scan = ScanGrid(tuple(10.0 ** np.arange(-2.0, 1.01, 0.5)),
                        tuple([0.0] + list(10.0 ** np.arange(-2.0, 2.01, 0.2))))
        rep = two_sided_ratio_scan(Poisson(), 0.5, 1, scan)
        assert rep.constants["c"] == pytest.approx(2 * math.pi, rel=0.02)
        assert rep.constants["sup_ratio"] == pytest.approx(1 / math.pi, rel=1e-3)
        assert rep.verdict

    @given(lam=st.floats(0.2, 5.0))
    def test_ratios_are_self_similar(self, lam):
        q = Poisson()
        for t, r in [(0.3, 0.0), (1.0, 1.0), (2.0, 7.0)]:
            a = q(t, r, 0.0) / stable_shape(t, r, 1, 0.5)
            b = q(lam * t, lam * r, 0.0) / stable_shape(lam * t, lam * r, 1, 0.5)
            assert b == pytest.approx(a, rel=1e-8)

    def test_checkerboard_grid(self, stable):
        g = Grid(1.0, 64, "neumann")
        op = assemble_operator(g, checkerboard_field(g, 2.0))
        h = g.spacing[0]
        scan = ScanGrid(tuple(np.geomspace(1e-3, 1.0, 7)), tuple(h * np.arange(33)), (0.25, 0.5))
        rep = two_sided_ratio_scan(GridKernel(op, stable(0.5)), 0.5, 1, scan)
        assert math.isfinite(rep.constants["c"])
        assert rep.drift < 0.05


class TestHolder:
    def test_poisson_is_lipschitz(self):
        rep = holder_fit(Poisson(), 0.5, 1, (0.1, 1.0, 10.0), np.geomspace(1e-4, 1e-2, 9),
                         x0=0.0, y0=-1.0)
        assert rep.exponents["gamma"] >= 0.99
        assert rep.verdict

    def test_identical_points_have_no_difference(self):
        q = Poisson()
        assert q(1.0, 0.3, 0.1) - q(1.0, 0.3, 0.1) == 0.0

    def test_flat_kernel_is_degenerate(self):
        rep = holder_fit(lambda t, x, y: 1.0, 0.5, 1, (1.0,), np.geomspace(1e-3, 1e-1, 5))
        assert rep.verdict is None
        assert any("degenerate" in n for n in rep.notes)

    def test_offsets_must_span_two_decades(self):
        with pytest.raises(DomainError):
            holder_fit(Poisson(), 0.5, 1, (1.0,), np.geomspace(1e-3, 1e-2, 5))


class TestL2Loc:
    def test_equal_fields(self):
        g = Grid(4.0, 41)
        a = scalar_field(np.ones(41))
        assert l2loc_norm(a, a, g) == 0.0

    @pytest.mark.parametrize("extent, points", [(4.0, 41), (8.0, 81)])
    def test_constant_difference_on_full_ball(self, extent, points):
        g = Grid(extent, points)
        eps = 0.1
        a, b = scalar_field(np.ones(points)), scalar_field(np.full(points, 1 + eps))
        assert l2loc_norm(a, b, g) == pytest.approx(2 * eps, rel=1e-12)

    def test_single_cell_perturbation(self):
        g = Grid(8.0, 81)
        vals = np.ones(81)
        vals[40] = 1.5
        h = g.spacing[0]
        assert l2loc_norm(scalar_field(np.ones(81)), scalar_field(vals), g) == pytest.approx(
            0.5 * math.sqrt(h), rel=1e-12)

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            l2loc_norm(scalar_field(np.ones(5)), scalar_field(np.ones(6)), Grid(1.0, 5))

    @given(seed=st.integers(0, 2 ** 16))
    def test_pseudometric(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid((3.0, 2.0), (7, 5))
        fields = [CoefficientField(rng.uniform(0.5, 2.0, g.size)[:, None, None] * np.eye(2), 2.0)
                  for _ in range(3)]
        a, b, c = fields
        assert l2loc_norm(a, b, g) == pytest.approx(l2loc_norm(b, a, g), rel=1e-14)
        assert l2loc_norm(a, c, g) <= l2loc_norm(a, b, g) + l2loc_norm(b, c, g) + 1e-12


class TestSemigroupDistance:
    def test_same_operator(self):
        op = line_op(np.ones(16))
        assert semigroup_distance(op, op, 0.5, 1.0) == 0.0

    @pytest.mark.parametrize("p", [1, 2, math.inf])
    def test_scalar_rates(self, p):
        # shared eigenvectors; eigenvalues (-1, -3) and (-4, -12)
        opA, opB = line_op([1.0, 1.0]), line_op([4.0, 4.0])
        expected = abs(math.exp(-1) - math.exp(-2))
        assert semigroup_distance(opA, opB, 0.5, 1.0, p) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(0.232544, abs=5e-7)

    def test_unknown_norm(self):
        op = line_op(np.ones(4))
        with pytest.raises(DomainError):
            semigroup_distance(op, op, 0.5, 1.0, 3)

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            semigroup_distance(line_op(np.ones(4)), line_op(np.ones(5)), 0.5, 1.0)

    @given(seed=st.integers(0, 2 ** 16), p=st.sampled_from([1, 2, math.inf]),
           t=st.floats(0.01, 5.0))
    def test_triangle_inequality_and_ceiling(self, seed, p, t):
        rng = np.random.default_rng(seed)
        ops = [line_op(rng.uniform(0.25, 4.0, 12)) for _ in range(3)]
        dab = semigroup_distance(ops[0], ops[1], 0.5, t, p)
        dbc = semigroup_distance(ops[1], ops[2], 0.5, t, p)
        dac = semigroup_distance(ops[0], ops[2], 0.5, t, p)
        assert dac <= dab + dbc + 1e-10
        assert max(dab, dbc, dac) <= 2 + 1e-8


class TestKernelDistance:
    def fields(self):
        x = np.linspace(0, 1, 4)[:, None]
        rng = np.random.default_rng(3)
        return (KernelField(rng.random((2, 4, 4)), (0.1, 1.0), x, x),
                KernelField(rng.random((2, 4, 4)), (0.1, 1.0), x, x))

    def test_zero_and_symmetric(self):
        a, b = self.fields()
        assert kernel_distance_sup(a, a)[0] == 0.0
        assert kernel_distance_sup(a, b)[0] == kernel_distance_sup(b, a)[0]

    def test_witness_locates_maximum(self):
        a, b = self.fields()
        val, w = kernel_distance_sup(a, b)
        k = a.t.index(w["t"])
        i = int(round(w["x"][0] * 3))
        j = int(round(w["y"][0] * 3))
        assert abs(a.values[k, i, j] - b.values[k, i, j]) == val

    def test_bounded_by_two_sided_envelopes(self, stable):
        g = Grid(1.0, 32, "neumann")
        p = stable(0.5)
        opA = assemble_operator(g, checkerboard_field(g, 2.0))
        opB = assemble_operator(g, CoefficientField(np.ones((32, 1, 1)), 2.0))
        qA, qB = GridKernel(opA, p), GridKernel(opB, p)
        h = g.spacing[0]
        scan = ScanGrid(tuple(np.geomspace(1e-3, 1.0, 4)), tuple(h * np.arange(32)), (0.0,))
        cA = two_sided_ratio_scan(qA, 0.5, 1, scan).constants["c"]
        cB = two_sided_ratio_scan(qB, 0.5, 1, scan).constants["c"]
        X = g.coordinates
        for t in scan.t:
            fa = KernelField(qA.matrix(t)[:1], (t,), X[:1], X)
            fb = KernelField(qB.matrix(t)[:1], (t,), X[:1], X)
            val, w = kernel_distance_sup(fa, fb)
            r = abs(w["x"][0] - w["y"][0])
            assert val <= (cA + cB) * float(stable_shape(t, r, 1, 0.5)) * (1 + 1e-9)

    def test_shape_mismatch(self):
        a, _ = self.fields()
        x = np.zeros((1, 1))
        with pytest.raises(DomainError):
            kernel_distance_sup(a, KernelField(np.zeros((1, 1, 1)), (1.0,), x, x))


def stability_inputs(points=32):
    g = Grid(1.0, points)
    base = CoefficientField(np.ones((g.size, 1, 1)), 2.0)
    return g, base, scalar_perturbation(g, (1.0 + checkerboard_sign(g)) / 2.0)


class TestStability:
    def test_zero_epsilon_gives_zero_distances(self):
        g, base, pert = stability_inputs()
        rep = stability_experiment(base, pert, (0.0,), 0.5, (0.1, 1.0), grid=g)
        assert all(row[4] == 0.0 for row in rep.rows)
        assert rep.verdict is True

    def test_non_elliptic_epsilon_is_skipped(self):
        g, base, pert = stability_inputs()
        rep = stability_experiment(base, pert, (5.0, 0.1, 0.05), 0.5, (0.05, 0.1), grid=g)
        assert rep.n_failed == 1
        assert all(row[0] != 5.0 for row in rep.rows)

    def test_distances_shrink_and_stay_under_envelope(self):
        g, base, pert = stability_inputs()
        eps = (0.4, 0.2, 0.1, 0.05, 0.025)
        rep = stability_experiment(base, pert, eps, 0.5, (0.02, 0.05, 0.1, 0.2), grid=g)
        for norm in ("1", "2", "inf", "kernel_sup"):
            for t in (0.02, 0.05, 0.1, 0.2):
                d = [row[4] for row in rep.rows if row[2] == t and str(row[3]) == norm]
                assert all(b <= a * 1.05 for a, b in zip(d, d[1:]))
        for row in rep.rows:
            assert row[4] <= row[5] * (1 + 1e-9)
            if row[3] != "kernel_sup":
                assert row[4] <= 2 + 1e-8
