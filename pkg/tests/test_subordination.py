import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracheat.base_kernel import (CoefficientField, GaussianBase, Grid, assemble_operator,
                                  checkerboard_field, heat_kernel_matrix, identity_field)
from fracheat.errors import DomainError
from fracheat.subordination import (FreeSpaceKernel, GridKernel, QuadratureSpec,
                                    generator_apply, spectral_factors, spectral_oracle,
                                    subordinate_gradient, subordinate_matrix,
                                    subordinate_pointwise)

from conftest import poisson_kernel

QUAD = QuadratureSpec()


def checker_op(points=64, boundary="dirichlet"):
    g = Grid(1.0, points, boundary)
    return assemble_operator(g, checkerboard_field(g, 2.0))


def two_point(scale=1.0):
    """Eigenvalues ``-scale`` and ``-3 scale`` with eigenvectors ``(1, ±1)/√2``."""
    g = Grid(1.0, 2)
    return assemble_operator(g, CoefficientField(scale * np.ones((2, 1, 1)), max(scale, 1 / scale)))


class TestQuadratureSpec:
    @pytest.mark.parametrize("kwargs", [dict(panels=4), dict(tail_order=1), dict(abs_tol=0.0),
                                        dict(s_min=1e13), dict(max_panels=8)])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            QuadratureSpec(**kwargs)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9])
    def test_default_truncation_within_tolerance(self, stable, alpha):
        est = QUAD.truncation_estimate(stable(alpha))
        assert est["head_mass"] <= QUAD.abs_tol
        assert est["tail_series_error"] <= QUAD.abs_tol
        QUAD.validate(stable(alpha))

    def test_coarse_truncation_is_reported(self, stable):
        with pytest.raises(DomainError, match="truncation"):
            QuadratureSpec(s_max=1e3, tail_order=2).validate(stable(0.3))


class TestPoisson:
    @pytest.mark.parametrize("t, r, expected", [(1.0, 0.0, 0.318310), (1.0, 1.0, 0.159155),
                                                (2.0, 0.0, 0.159155)])
    def test_examples(self, stable, t, r, expected):
        v = subordinate_pointwise(GaussianBase(1), stable(0.5), QUAD, t, [r], [0.0])
        assert v == pytest.approx(expected, abs=5e-7)

    @given(t=st.floats(0.1, 10.0), r=st.floats(0.0, 10.0))
    def test_closed_form(self, stable, t, r):
        v = subordinate_pointwise(GaussianBase(1), stable(0.5), QUAD, t, [r], [0.0])
        assert v == pytest.approx(poisson_kernel(t, r), rel=1e-6)

    def test_plain_callable_base(self, stable):
        base = GaussianBase(1)
        v = subordinate_pointwise(lambda tau, x, y: base.kernel(tau, x, y), stable(0.5), QUAD,
                                  1.0, [1.0], [0.0])
        assert v == pytest.approx(poisson_kernel(1.0, 1.0), rel=1e-6)

    def test_diagnostics(self, stable):
        _, info = subordinate_pointwise(GaussianBase(1), stable(0.5), QUAD, 1.0, [0.0], [0.0],
                                        return_info=True)
        assert info["panels"] >= QUAD.panels
        assert info["refinement_change"] <= max(QUAD.abs_tol, QUAD.rel_tol)

    def test_nonpositive_time(self, stable):
        with pytest.raises(DomainError):
            subordinate_pointwise(GaussianBase(1), stable(0.5), QUAD, 0.0, [0.0], [0.0])


class TestGradient:
    def test_zero_on_diagonal(self, stable):
        g = subordinate_gradient(GaussianBase(1), stable(0.5), QUAD, 1.0, [0.3], [0.3])
        np.testing.assert_array_equal(g, 0.0)

    def test_poisson_magnitude(self, stable):
        g = subordinate_gradient(GaussianBase(1), stable(0.5), QUAD, 1.0, [1.0], [0.0])
        assert abs(g[0]) == pytest.approx(0.159155, abs=5e-7)

    @pytest.mark.parametrize("alpha, t, r", [(0.7, 0.5, 2.0), (0.5, 1.0, 0.3), (0.3, 2.0, 5.0)])
    def test_finite_differences(self, stable, alpha, t, r):
        q = FreeSpaceKernel(stable(alpha))
        h = 1e-4 * max(r, 1.0)
        fd = (q(t, [r + h], [0.0]) - q(t, [r - h], [0.0])) / (2 * h)
        g = q.gradient(t, [r], [0.0])[0]
        assert abs(g - fd) <= max(1e-6, 1e-4 * abs(g))

    def test_two_dimensional_direction(self, stable):
        q = FreeSpaceKernel(stable(0.5), d=2)
        g = q.gradient(1.0, [1.0, 1.0], [0.0, 0.0])
        assert g[0] == pytest.approx(g[1], rel=1e-12) and g[0] < 0


class TestMatrix:
    def test_small_time_is_scaled_identity(self, stable):
        op = checker_op()
        Q = subordinate_matrix(op, stable(0.5), QUAD, 1e-6).values[0] * op.volume
        assert np.abs(Q - np.eye(op.size)).max() <= 1e-3

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
    def test_matches_oracle(self, stable, alpha, t):
        op = checker_op()
        Q = subordinate_matrix(op, stable(alpha), QUAD, t).values
        O = spectral_oracle(op, alpha, t).values
        assert np.abs(Q - O).max() <= 1e-6

    @given(t=st.floats(1e-3, 20.0))
    def test_contraction(self, stable, t):
        op = checker_op(32, "neumann")
        Q = subordinate_matrix(op, stable(0.5), QUAD, t).values[0]
        assert (np.abs(Q).sum(axis=1) * op.volume).max() <= 1 + 1e-8

    @given(t=st.floats(0.01, 3.0), s=st.floats(0.01, 3.0))
    def test_semigroup(self, stable, t, s):
        op = checker_op()
        p = stable(0.7)
        lhs = subordinate_matrix(op, p, QUAD, t + s).values[0]
        rhs = (subordinate_matrix(op, p, QUAD, t).values[0] * op.volume
               @ subordinate_matrix(op, p, QUAD, s).values[0])
        assert np.abs(lhs - rhs).max() <= 1e-7

    def test_eigen_factor(self, stable):
        phi, _ = spectral_factors(np.array([1.0]), stable(0.5), QUAD, 1.0)
        assert phi[0] == pytest.approx(0.367879, abs=5e-7)

    def test_result_is_tagged(self, stable):
        field = subordinate_matrix(checker_op(8), stable(0.3), QUAD, 1.0)
        assert field.alpha == 0.3 and field.kind == "kernel"


class TestOracle:
    def test_alpha_one_is_heat_kernel(self):
        op = checker_op(32)
        np.testing.assert_allclose(spectral_oracle(op, 1.0, 0.7).values,
                                   heat_kernel_matrix(op, 0.7).values, rtol=0, atol=1e-14)

    def test_time_zero(self):
        op = checker_op(16)
        np.testing.assert_array_equal(spectral_oracle(op, 0.5, 0.0).values[0],
                                      np.eye(16) / op.volume)

    def test_two_point_factors(self):
        op = two_point()
        O = spectral_oracle(op, 0.5, 1.0).values[0]
        v = np.array([1.0, 1.0]) / math.sqrt(2)
        w = np.array([1.0, -1.0]) / math.sqrt(2)
        assert v @ O @ v == pytest.approx(math.exp(-1), rel=1e-13)
        assert w @ O @ w == pytest.approx(math.exp(-math.sqrt(3)), rel=1e-13)

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            spectral_oracle(checker_op(8), 1.5, 1.0)
        with pytest.raises(DomainError):
            spectral_oracle(checker_op(8), 0.5, -1.0)


class TestGenerator:
    def test_constant_is_annihilated_under_neumann(self):
        op = checker_op(32, "neumann")
        out = generator_apply(op, 0.5, np.ones(op.size), QUAD)
        assert np.abs(out).max() <= 1e-12

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_unit_eigenvalue(self, alpha):
        f = np.array([1.0, 1.0]) / math.sqrt(2)
        out = generator_apply(two_point(), alpha, f, QUAD)
        np.testing.assert_allclose(out, -f, atol=1e-9)

    def test_eigenvalue_four(self):
        f = np.array([1.0, 1.0])
        out = generator_apply(two_point(4.0), 0.5, f, QUAD)
        np.testing.assert_allclose(out, -2 * f, atol=1e-9)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    def test_matches_spectral_power(self, alpha):
        op = checker_op()
        sp = op.spectrum()
        f = np.random.default_rng(7).standard_normal(op.size)
        exact = sp.vectors @ (-(-sp.mu) ** alpha * (sp.vectors.T @ f))
        assert np.abs(generator_apply(op, alpha, f, QUAD) - exact).max() <= 1e-6

    def test_first_order_difference_quotient(self, stable):
        op = checker_op(32)
        f = op.spectrum().vectors[:, 3]
        p = stable(0.5)
        gen = generator_apply(op, 0.5, f, QUAD)
        errs = []
        for h in (1e-3, 5e-4, 2.5e-4):
            Qf = subordinate_matrix(op, p, QUAD, h).values[0] * op.volume @ f
            errs.append(np.abs((Qf - f) / h - gen).max())
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates >= 0.9)

    def test_rejects_non_finite(self):
        f = np.ones(8)
        f[2] = np.nan
        with pytest.raises(DomainError):
            generator_apply(checker_op(8), 0.5, f, QUAD)


class TestGridKernel:
    def test_snap_and_lookup(self, stable):
        op = checker_op(11)
        q = GridKernel(op, stable(0.5))
        assert q.snap(0.33)[0] == pytest.approx(0.3)
        assert q.snap(7.0)[0] == pytest.approx(1.0)
        assert q(1.0, [0.3], [0.5]) == q.matrix(1.0)[3, 5]

    def test_gradient_is_discrete_derivative(self, stable):
        op = checker_op(16)
        q = GridKernel(op, stable(0.5))
        D = op.gradient_matrix(0).toarray()
        X = op.grid.coordinates
        assert q.gradient(0.5, X[4], X[9])[0] == pytest.approx((D @ q.matrix(0.5))[4, 9], rel=1e-12)
