"""Kernels and semigroups of the fractional power ``-(-H)^α`` by subordination.

Every object here is an integral against the stable density,

    q(t, x, y) = ∫_0^∞ p(t^{1/α} s, x, y) g(α, s) ds,

discretized with log-spaced Gauss-Legendre panels on ``[s_min, s_max]``
(see :func:`fracheat.subordinator.integration_rule`). Above ``s_max`` the
convergent power series of ``g`` is integrated in closed form against a
large-time model of ``p``; below ``s_min`` the density is ``O(e^{-150})``
and the piece is dropped. Panel counts double until two successive rules
agree.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .base_kernel import DiscreteEllipticOperator, KernelField, TailTerm
from .errors import DomainError, QuadratureError
from .quadrature import composite_nodes, power_exp_tail
from .subordinator import (StableParams, default_s_min, integration_rule,
                           small_s_asymptotic, tail_series_coefficients)

__all__ = [
    "QuadratureSpec",
    "subordinate_pointwise",
    "subordinate_gradient",
    "subordinate_matrix",
    "spectral_oracle",
    "generator_apply",
    "spectral_factors",
    "FreeSpaceKernel",
    "GridKernel",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the subordination integral.

    ``s_min=None`` selects the point where ``g(α, s) ≈ e^{-150}``.
    ``panels`` is the starting panel count; it doubles (up to
    ``max_panels``) until two rules agree to ``max(abs_tol, rel_tol·|value|)``.
    """

    s_min: float | None = None
    s_max: float = 1e12
    panels: int = 64
    tail_order: int = 8
    abs_tol: float = 1e-13
    rel_tol: float = 1e-10
    order: int = 16
    max_panels: int = 1024

    def __post_init__(self):
        if self.panels < 8:
            raise DomainError("panels must be >= 8")
        if self.tail_order < 2:
            raise DomainError("tail_order must be >= 2")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("tolerances must be positive")
        if self.s_min is not None and not 0 < self.s_min < self.s_max:
            raise DomainError("need 0 < s_min < s_max")
        if not self.s_max > 0:
            raise DomainError("s_max must be positive")
        if self.max_panels < self.panels:
            raise DomainError("max_panels must be >= panels")

    def lower(self, params: StableParams) -> float:
        return self.s_min if self.s_min is not None else default_s_min(params.alpha)

    def truncation_estimate(self, params: StableParams) -> dict:
        """Mass of ``g`` dropped below ``s_min`` and left by the truncated tail series."""
        s_min = self.lower(params)
        head = float(small_s_asymptotic(params, s_min)) * s_min
        b = tail_series_coefficients(params.alpha, self.tail_order + 1)
        k = self.tail_order + 1
        tail = abs(b[-1]) * self.s_max ** (-k * params.alpha) / (k * params.alpha)
        return {"head_mass": head, "tail_series_error": tail}

    def validate(self, params: StableParams) -> None:
        est = self.truncation_estimate(params)
        if est["head_mass"] > self.abs_tol or est["tail_series_error"] > self.abs_tol:
            raise DomainError(
                f"truncation error {est} exceeds abs_tol={self.abs_tol}; "
                "lower s_min, raise s_max or tail_order")


def _series_tail(alpha, b, power, rate, start):
    """``Σ_k b_k ∫_start^∞ s^{-(power + kα) - 1} e^{-rate s} ds`` (shape of ``rate``)."""
    rate = np.asarray(rate, dtype=float)
    out = np.zeros(rate.shape)
    for k, bk in enumerate(b, start=1):
        if bk != 0.0:
            out = out + bk * power_exp_tail(power + k * alpha, rate, start)
    return out


def _tail_value(term: TailTerm, alpha, b, c, start, contract):
    T = _series_tail(alpha, b, term.power, np.asarray(term.rate, dtype=float) * c, start)
    scale = c ** (-term.power)
    coef = np.asarray(term.coef, dtype=float)
    if contract and T.ndim:
        return scale * np.tensordot(T, coef, axes=(0, 0))
    return scale * T * coef


def _integrate(params, quad, c, F, tail_terms=None, frozen=False, contract=True):
    """``∫ F(c s) g(α, s) ds`` with panel doubling.

    ``tail_terms`` model ``F`` for large ``τ``; with ``frozen=True`` the value
    ``F(c s_max)`` is held constant beyond ``s_max`` instead.
    """
    quad.validate(params)
    alpha = params.alpha
    b = tail_series_coefficients(alpha, quad.tail_order)
    s_min = quad.lower(params)
    S = quad.s_max
    if frozen:
        mass = float(_series_tail(alpha, b, 0.0, 0.0, S))
        tail = np.asarray(F(np.array([c * S])))[0] * mass
    else:
        tail = sum(_tail_value(term, alpha, b, c, S, contract) for term in (tail_terms or ()))
    panels = quad.panels
    prev = None
    diff = math.inf
    while True:
        s, W = integration_rule(params, s_min, S, panels, quad.order)
        val = np.tensordot(W, np.asarray(F(c * s)), axes=(0, 0)) + tail
        if prev is not None:
            diff = float(np.max(np.abs(val - prev)))
            scale = float(np.max(np.abs(val)))
            if diff <= max(quad.abs_tol, quad.rel_tol * scale):
                info = {"panels": panels, "nodes": int(s.size), "refinement_change": diff,
                        "tail": float(np.max(np.abs(tail))) if np.size(tail) else 0.0,
                        **quad.truncation_estimate(params)}
                return val, info
        if panels * 2 > quad.max_panels:
            raise QuadratureError("subordination rule did not settle", partial=float(np.max(val)),
                                  error=diff)
        prev = val
        panels *= 2


def _check_t(t):
    if not t > 0:
        raise DomainError("t must be positive")


def subordinate_pointwise(p_eval, params: StableParams, quad: QuadratureSpec, t: float,
                          x, y, *, return_info: bool = False):
    """Subordinated kernel ``q(t, x, y) = ∫ p(t^{1/α} s, x, y) g(α, s) ds``.

    ``p_eval`` is either a base-kernel evaluator (with ``kernel`` and
    ``kernel_tail`` methods, see :mod:`fracheat.base_kernel`) or a plain
    callable ``p(tau, x, y)`` vectorized in ``tau``; for the latter the tail
    beyond ``s_max`` freezes ``p`` at its value there.
    """
    _check_t(t)
    c = t ** (1.0 / params.alpha)
    if hasattr(p_eval, "kernel"):
        val, info = _integrate(params, quad, c, lambda tau: p_eval.kernel(tau, x, y),
                               p_eval.kernel_tail(x, y))
    else:
        val, info = _integrate(params, quad, c, lambda tau: p_eval(tau, x, y), frozen=True)
    val = float(val)
    return (val, info) if return_info else val


def subordinate_gradient(grad_eval, params: StableParams, quad: QuadratureSpec, t: float,
                         x, y, *, return_info: bool = False):
    """``∇_x q(t, x, y) = ∫ ∇_x p(t^{1/α} s, x, y) g(α, s) ds`` componentwise."""
    _check_t(t)
    c = t ** (1.0 / params.alpha)
    if hasattr(grad_eval, "gradient"):
        val, info = _integrate(params, quad, c, lambda tau: grad_eval.gradient(tau, x, y),
                               grad_eval.gradient_tail(x, y))
    else:
        val, info = _integrate(params, quad, c, lambda tau: grad_eval(tau, x, y), frozen=True)
    val = np.atleast_1d(np.asarray(val, dtype=float))
    return (val, info) if return_info else val


def spectral_factors(mu_abs, params: StableParams, quad: QuadratureSpec, t: float):
    """Quadrature values of ``∫ e^{-t^{1/α} s μ} g(α, s) ds`` for each ``μ`` in ``mu_abs``."""
    _check_t(t)
    mu_abs = np.asarray(mu_abs, dtype=float)
    c = t ** (1.0 / params.alpha)
    return _integrate(params, quad, c, lambda tau: np.exp(-np.multiply.outer(tau, mu_abs)),
                      [TailTerm(np.ones_like(mu_abs), 0.0, mu_abs)], contract=False)


def subordinate_matrix(op: DiscreteEllipticOperator, params: StableParams, quad: QuadratureSpec,
                       t: float, *, return_info: bool = False):
    """Kernel matrix of ``Q_t = ∫ P_{t^{1/α}s} g(α, s) ds`` on the grid.

    The integral acts on the cached eigenvalues, so the result is
    ``V diag(φ(|μ|)) Vᵀ / h^d`` with quadrature factors ``φ``.
    """
    sp = op.spectrum()
    phi, info = spectral_factors(-sp.mu, params, quad, t)
    vals = (sp.vectors * phi) @ sp.vectors.T / op.volume
    X = op.grid.coordinates
    field = KernelField(vals, (t,), X, X, "kernel", params.alpha, op.volume)
    return (field, info) if return_info else field


def spectral_oracle(op: DiscreteEllipticOperator, alpha: float, t: float) -> KernelField:
    """Exact ``e^{-t(-H)^α}`` kernel: ``Σ_k e^{-t|μ_k|^α} v_k v_kᵀ / h^d``."""
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0,1]")
    if not t >= 0:
        raise DomainError("t must be nonnegative")
    X = op.grid.coordinates
    if t == 0:
        vals = np.eye(op.size) / op.volume
    else:
        sp = op.spectrum()
        vals = (sp.vectors * np.exp(-t * (-sp.mu) ** alpha)) @ sp.vectors.T / op.volume
    return KernelField(vals, (t,), X, X, "kernel", alpha, op.volume)


def generator_apply(op: DiscreteEllipticOperator, alpha: float, f, quad: QuadratureSpec,
                    *, return_info: bool = False):
    """``(α/Γ(1-α)) ∫_0^∞ (P_s f - f) s^{-1-α} ds`` on the grid.

    Below a threshold ``s_a`` the integrand is replaced by its linearization
    ``s H f``; ``s_a`` is chosen so that the neglected ``s² H²f / 2`` term
    integrates to less than a tenth of the tolerance. Beyond the last panel
    the remaining integrals are done in closed form.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0,1)")
    f = np.asarray(f, dtype=float).ravel()
    if f.size != op.size or not np.all(np.isfinite(f)):
        raise DomainError("f must be a finite grid function")
    sp = op.spectrum()
    mu = -sp.mu
    coeff = sp.vectors.T @ f
    pref = alpha / math.gamma(1.0 - alpha)
    tol = max(quad.abs_tol, quad.rel_tol * max(float(np.abs(f).max()), 1e-300))
    h2f = float(np.abs(sp.vectors @ (mu ** 2 * coeff)).max())
    active = mu > 0
    if h2f == 0.0 or not active.any():
        out = np.zeros_like(f)
        return (out, {"panels": 0}) if return_info else out
    s_a = (0.1 * tol * 2.0 * (2.0 - alpha) / (pref * h2f)) ** (1.0 / (2.0 - alpha))
    s_b = max(10.0 / mu[active].min(), 10.0 * s_a)

    def factors(panels):
        edges = np.linspace(math.log(s_a), math.log(s_b), panels + 1)
        u, w = composite_nodes(edges, quad.order)
        s = np.exp(u)
        body = (w * s ** (-alpha)) @ np.expm1(-np.multiply.outer(s, mu))
        head = -mu * s_a ** (1.0 - alpha) / (1.0 - alpha)
        tail = power_exp_tail(alpha, mu, s_b) - s_b ** (-alpha) / alpha
        return pref * (head + body + tail)

    panels = max(quad.panels, int(math.ceil(2.0 * math.log(s_b / s_a))))
    prev = sp.vectors @ (factors(panels) * coeff)
    while True:
        if panels * 2 > 8 * max(quad.max_panels, panels):
            raise QuadratureError("generator quadrature did not settle",
                                  partial=float(np.abs(prev).max()), error=diff)
        panels *= 2
        out = sp.vectors @ (factors(panels) * coeff)
        diff = float(np.abs(out - prev).max())
        if diff <= tol:
            break
        prev = out
    info = {"panels": panels, "s_linear": s_a, "s_tail": s_b, "refinement_change": diff}
    return (out, info) if return_info else out


class FreeSpaceKernel:
    """Subordinated Gaussian kernel in ``R^d`` as a callable ``q(t, x, y)``.

    ``gradient(t, x, y)`` returns ``∇_x q``; both go through
    :func:`subordinate_pointwise` / :func:`subordinate_gradient`.
    """

    def __init__(self, params: StableParams, d: int = 1, quad: QuadratureSpec | None = None):
        from .base_kernel import GaussianBase
        self.params = params
        self.d = int(d)
        self.quad = quad or QuadratureSpec()
        self.base = GaussianBase(self.d)

    def __call__(self, t, x, y) -> float:
        return subordinate_pointwise(self.base, self.params, self.quad, t, x, y)

    def gradient(self, t, x, y) -> np.ndarray:
        return subordinate_gradient(self.base, self.params, self.quad, t, x, y)

    def snap(self, y):
        return np.atleast_1d(np.asarray(y, dtype=float))


class GridKernel:
    """Subordinated grid kernel, one cached ``Q_t`` matrix per time.

    Points must be grid nodes; :meth:`snap` moves an arbitrary point to
    the nearest node inside the domain. The gradient is the discrete
    ``∇_x`` of :meth:`DiscreteEllipticOperator.gradient_matrix` applied to
    the rows of ``Q_t``.
    """

    def __init__(self, op: DiscreteEllipticOperator, params: StableParams,
                 quad: QuadratureSpec | None = None):
        self.op = op
        self.params = params
        self.quad = quad or QuadratureSpec()
        self.d = op.grid.dim
        self._mats: dict[float, np.ndarray] = {}
        self._grads: dict[float, list[np.ndarray]] = {}

    def matrix(self, t: float) -> np.ndarray:
        t = float(t)
        if t not in self._mats:
            self._mats[t] = subordinate_matrix(self.op, self.params, self.quad, t).values[0]
        return self._mats[t]

    def _gradients(self, t: float) -> list[np.ndarray]:
        t = float(t)
        if t not in self._grads:
            Q = self.matrix(t)
            self._grads[t] = [self.op.gradient_matrix(ax) @ Q for ax in range(self.d)]
        return self._grads[t]

    def snap(self, y) -> np.ndarray:
        g = self.op.grid
        y = np.atleast_1d(np.asarray(y, dtype=float))
        h = np.asarray(g.spacing)
        k = np.clip(np.round(y / h), 0, np.asarray(g.points) - 1)
        return k * h

    def __call__(self, t, x, y) -> float:
        g = self.op.grid
        return float(self.matrix(t)[g.index_of(x), g.index_of(y)])

    def gradient(self, t, x, y) -> np.ndarray:
        g = self.op.grid
        i, j = g.index_of(x), g.index_of(y)
        return np.array([G[i, j] for G in self._gradients(t)])
