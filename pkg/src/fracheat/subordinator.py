"""One-sided strictly α-stable subordinator density.

The density ``g(α, s)`` is the inverse Laplace transform of ``exp(-u**α)``.
Three evaluators are combined by :func:`density`:

* the small-``s`` asymptotic ``K s^(-(2-α)/(2-2α)) exp(-A s^(-α/(1-α)))``,
* a direct quadrature (Pollard's oscillatory integral, or the nonnegative
  Zolotarev-type integral where Pollard cancels badly),
* the power-law tail ``B s^(-1-α)``.

The switch points are calibrated so that neighbouring evaluators agree to
``10 * rel_tol`` where they meet.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import optimize, special

from .errors import DomainError, QuadratureError
from .quadrature import adaptive_gauss_legendre, composite_nodes, power_exp_tail

__all__ = [
    "StableParams",
    "stable_constants",
    "small_s_asymptotic",
    "tail_asymptotic",
    "tail_series_coefficients",
    "pollard_integral",
    "zolotarev_density",
    "pollard_density",
    "density",
    "scaled_density",
    "laplace_check",
    "envelope_constant",
    "integration_rule",
    "default_s_min",
]

_EPS = np.finfo(float).eps
# Pollard is abandoned once panel cancellation amplifies round-off beyond this
# fraction of the requested tolerance.
_COND_FRACTION = 1e-2
_LOG_TINY = math.log(np.finfo(float).tiny) + math.log(_EPS)


def stable_constants(alpha: float) -> tuple[float, float, float]:
    """Return ``(A, K, B)`` of the small-s and large-s asymptotics."""
    A = (1.0 - alpha) * alpha ** (alpha / (1.0 - alpha))
    K = alpha ** (1.0 / (2.0 - 2.0 * alpha)) / math.sqrt(2.0 * math.pi * (1.0 - alpha))
    B = alpha / math.gamma(1.0 - alpha)
    return A, K, B


def tail_series_coefficients(alpha: float, order: int) -> np.ndarray:
    """Coefficients ``b_k`` of ``g(α, s) = Σ_k b_k s^(-kα-1)``, k = 1..order.

    The series converges for every ``s > 0`` when ``α < 1``; ``b_1 = B``.
    """
    k = np.arange(1, order + 1, dtype=float)
    mag = np.exp(special.gammaln(k * alpha + 1.0) - special.gammaln(k + 1.0)) / math.pi
    sgn = np.where(k % 2 == 1, 1.0, -1.0)
    b = sgn * mag * np.sin(k * math.pi * alpha)
    # sin(kπα) vanishes exactly when kα is an integer
    b[np.abs(np.round(k * alpha) - k * alpha) < 1e-12] = 0.0
    return b


# --------------------------------------------------------------------------
# asymptotic branches

def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError("s must be positive")
    return s


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _log_small_asym(alpha, s):
    A, K, _ = stable_constants(alpha)
    x = np.exp(-alpha / (1.0 - alpha) * np.log(s))
    return math.log(K) - (2.0 - alpha) / (2.0 - 2.0 * alpha) * np.log(s) - A * x


def small_s_asymptotic(params: "StableParams", s):
    """Leading small-``s`` behaviour of ``g``; exact for α = 1/2."""
    s = _check_s(s)
    return _scalar_or_array(np.exp(_log_small_asym(params.alpha, s)))


def tail_asymptotic(params: "StableParams", s):
    """Leading power-law tail ``B s^(-1-α)``."""
    s = _check_s(s)
    return _scalar_or_array(params.B * s ** (-1.0 - params.alpha))


# --------------------------------------------------------------------------
# direct evaluators

def _pollard_integrand(alpha, s):
    c, sn = math.cos(math.pi * alpha), math.sin(math.pi * alpha)
    p = 1.0 / alpha
    pref = 1.0 / (math.pi * alpha)

    def f(w):
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = np.log(w)
            out = pref * np.exp((p - 1.0) * lw - s * np.exp(p * lw) - w * c) * np.sin(w * sn)
        return np.where(w > 0, out, 0.0)

    def envelope(w):
        return pref * math.exp((p - 1.0) * math.log(w) - s * w ** p - w * c)

    def envelope_decreasing(w):
        return (p - 1.0) / w - s * p * w ** (p - 1.0) - c < 0.0

    return f, envelope, envelope_decreasing


def pollard_integral(alpha: float, s: float, rel_tol: float = 1e-10,
                     max_panels: int = 20000) -> tuple[float, float]:
    """Evaluate ``(1/π)∫_0^∞ e^{-su} e^{-u^α cos πα} sin(u^α sin πα) du``.

    The substitution ``w = u**α`` makes the zeros of the sine equally spaced;
    the integral is summed panel by panel between consecutive zeros and
    stopped once the (decreasing) envelope bounds the remaining alternating
    tail below ``rel_tol``. Returns ``(value, cond)`` where ``cond`` is the
    ratio of the summed panel magnitudes to the result.
    """
    f, env, env_dec = _pollard_integrand(alpha, s)
    width = math.pi / math.sin(math.pi * alpha)
    scale = s ** (-alpha)
    total = 0.0
    total_abs = 0.0
    k = 0
    while k < max_panels:
        a, b = k * width, (k + 1) * width
        bps = ()
        if k == 0:
            bps = tuple(scale * 2.0 ** j for j in range(-6, 12) if 0 < scale * 2.0 ** j < b)
        ref = max(abs(total), 1e-300)
        val, _, vabs = adaptive_gauss_legendre(
            f, a, b, rel_tol=rel_tol * 0.1, abs_tol=rel_tol * 1e-2 * ref,
            order=20, breakpoints=bps)
        total += val
        total_abs += vabs
        k += 1
        if env_dec(b) and env(b) * width <= 0.1 * rel_tol * abs(total):
            break
        if total == 0.0 and env_dec(b) and env(b) * width < 1e-300:
            break
    else:
        raise QuadratureError("Pollard panel sum did not converge",
                              partial=total, error=env(k * width) * width)
    cond = total_abs / abs(total) if total != 0.0 else math.inf
    return total, cond


def _log_sinc(z):
    z = np.asarray(z, dtype=float)
    z2 = z * z
    series = -z2 * (1 / 6 + z2 * (1 / 180 + z2 * (1 / 2835 + z2 / 37800)))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.log(np.sin(z) / z)
    return np.where(np.abs(z) < 0.1, series, direct)


def _zolotarev_log_integral(alpha, s, rel_tol):
    """Return ``(log g, log(∫ ...))`` pieces of the Zolotarev representation."""
    A, _, _ = stable_constants(alpha)
    kappa = alpha / (1.0 - alpha)
    p = 1.0 / (1.0 - alpha)
    x = math.exp(-kappa * math.log(s))
    xA = x * A

    # D = log U - log A, written so that it keeps full relative accuracy at φ -> 0
    def d_phi(phi):
        return (kappa * (_log_sinc(alpha * phi) - _log_sinc(phi))
                + _log_sinc((1.0 - alpha) * phi) - _log_sinc(phi))

    def d_psi(psi):
        phi = math.pi - psi
        with np.errstate(divide="ignore"):
            lsin = np.log(np.sin(psi))
            logu = (kappa * (np.log(np.sin(alpha * phi)) - lsin)
                    + np.log(np.sin((1.0 - alpha) * phi)) - lsin)
        return logu - math.log(A)

    def fa(phi):
        d = d_phi(phi)
        return A * np.exp(d - xA * np.expm1(d))

    def fb(y):
        psi = np.exp(y)
        d = d_psi(psi)
        with np.errstate(over="ignore"):
            return A * np.exp(d - xA * np.expm1(d) + y)

    w0 = 1.0 / math.sqrt(max(xA * alpha / 2.0, 1e-300))
    bps_a = tuple(w0 * m for m in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0) if w0 * m < math.pi / 2)
    ia, _, _ = adaptive_gauss_legendre(fa, 0.0, math.pi / 2, rel_tol=rel_tol * 0.1,
                                       order=20, breakpoints=bps_a)
    ib = 0.0
    d_half = float(d_psi(math.pi / 2))
    if xA * math.expm1(d_half) < 800.0:
        C = math.sin(math.pi * alpha) ** p
        y_top = math.log(math.pi / 2)
        y_lo = min(y_top - 1.0, math.log(C * x / (800.0 + xA)) / p)
        y_peak = math.log(C * x) / p
        bps_b = tuple(y_peak + m / p for m in (-3.0, -1.5, 0.0, 1.5, 3.0) if y_lo < y_peak + m / p < y_top)
        ib, _, _ = adaptive_gauss_legendre(fb, y_lo, y_top, rel_tol=rel_tol * 0.1,
                                           abs_tol=rel_tol * 1e-2 * ia, order=20,
                                           breakpoints=bps_b)
    log_pref = math.log(alpha / (math.pi * (1.0 - alpha))) - p * math.log(s)
    return log_pref - xA + math.log(ia + ib)


def zolotarev_density(alpha: float, s: float, rel_tol: float = 1e-10) -> float:
    """``g(α, s)`` from the nonnegative Zolotarev-type integral.

    ``g = α/(π(1-α)) s^(-1/(1-α)) ∫_0^π U(φ) exp(-s^(-α/(1-α)) U(φ)) dφ`` with
    ``U(φ) = (sin αφ / sin φ)^(α/(1-α)) sin((1-α)φ) / sin φ``. The minimum
    ``U(0+) = A`` is factored out so the result keeps relative accuracy where
    ``g`` is exponentially small.
    """
    return math.exp(_zolotarev_log_integral(alpha, s, rel_tol))


def _direct(alpha, s, s_lo, rel_tol):
    if alpha <= 0.5 and s >= 2.0 * s_lo:
        val, cond = pollard_integral(alpha, s, rel_tol=rel_tol)
        if val > 0.0 and cond * _EPS <= _COND_FRACTION * rel_tol:
            return val
    return zolotarev_density(alpha, s, rel_tol=rel_tol)


def pollard_density(params: "StableParams", s):
    """Direct evaluation of ``g(α, s)`` (no asymptotic switching).

    Uses the Pollard panel sum; falls back to the Zolotarev representation
    for ``α > 1/2``, for ``s < 2 s_lo``, and whenever the panel cancellation
    would spoil the requested relative accuracy.
    """
    s = _check_s(s)
    flat = np.array([_direct(params.alpha, float(v), params.s_lo, params.rel_tol)
                     for v in s.ravel()])
    flat[(flat < 0.0) & (flat >= -params.rel_tol)] = 0.0
    return _scalar_or_array(flat.reshape(s.shape))


def density(params: "StableParams", s):
    """Region-switching evaluator of ``g(α, s)``.

    Small-s asymptotic on ``(0, s_lo)``, direct quadrature on
    ``[s_lo, s_hi]``, power-law tail on ``(s_hi, ∞)``.
    """
    s = _check_s(s)
    flat = s.ravel()
    out = np.empty_like(flat)
    lo = flat < params.s_lo
    hi = flat > params.s_hi
    mid = ~(lo | hi)
    if lo.any():
        out[lo] = np.exp(_log_small_asym(params.alpha, flat[lo]))
    if hi.any():
        out[hi] = params.B * flat[hi] ** (-1.0 - params.alpha)
    if mid.any():
        out[mid] = _density_direct_cached(params, tuple(flat[mid]))
    out[(out < 0.0) & (out >= -params.rel_tol)] = 0.0
    return _scalar_or_array(out.reshape(s.shape))


def _density_direct_cached(params, values):
    return np.array([_direct_one(params.alpha, v, params.s_lo, params.rel_tol) for v in values])


@lru_cache(maxsize=200_000)
def _direct_one(alpha, s, s_lo, rel_tol):
    return _direct(alpha, s, s_lo, rel_tol)


def scaled_density(params: "StableParams", t: float, s):
    """Density of the subordinator at time ``t``: ``t^(-1/α) g(α, t^(-1/α) s)``."""
    if not t > 0:
        raise DomainError("t must be positive")
    s = _check_s(s)
    c = t ** (-1.0 / params.alpha)
    return _scalar_or_array(c * np.asarray(density(params, c * s)))


# --------------------------------------------------------------------------
# threshold calibration

@lru_cache(maxsize=None)
def _calibrate_s_hi(alpha, rel_tol):
    b = tail_series_coefficients(alpha, 8)
    for j in range(1, b.size):
        if abs(b[j]) > 1e-14 * abs(b[0]):
            ratio = abs(b[j] / b[0])
            return (ratio / (5.0 * rel_tol)) ** (1.0 / (j * alpha))
    return 1e300


@lru_cache(maxsize=None)
def _calibrate_s_lo(alpha, rel_tol):
    cap = 0.05 * alpha
    target = 5.0 * rel_tol
    A = stable_constants(alpha)[0]
    kappa = alpha / (1.0 - alpha)

    def mismatch(log_s):
        s = math.exp(log_s)
        exact = _zolotarev_log_integral(alpha, s, rel_tol * 1e-2)
        asym = float(_log_small_asym(alpha, np.array(s)))
        if max(exact, asym) < _LOG_TINY:
            # both evaluators underflow to the same double
            return 0.0
        return abs(asym - exact)

    hi = math.log(cap)
    if mismatch(hi) <= target:
        return cap
    # x*A = 1e12 is far beyond double-precision underflow of g itself
    lo = -math.log(1e12 / A) / kappa
    if mismatch(lo) > target:
        return math.exp(lo)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mismatch(mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-3:
            break
    return math.exp(lo)


@dataclass(frozen=True)
class StableParams:
    """Stability index and evaluator thresholds.

    ``s_lo`` and ``s_hi`` default to calibrated values: the largest ``s``
    below which the small-s asymptotic, and the smallest ``s`` above which
    the tail asymptotic, agree with direct quadrature to ``10 * rel_tol``
    (capped at ``0.05 * alpha`` from above for ``s_lo``).
    """

    alpha: float
    s_lo: float | None = None
    s_hi: float | None = None
    rel_tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0,1)")
        if not 0.0 < self.rel_tol <= 1e-3:
            raise DomainError("rel_tol must lie in (0, 1e-3]")
        if self.s_lo is None:
            object.__setattr__(self, "s_lo", _calibrate_s_lo(self.alpha, self.rel_tol))
        if self.s_hi is None:
            object.__setattr__(self, "s_hi", _calibrate_s_hi(self.alpha, self.rel_tol))
        if not (self.s_lo > 0 and self.s_hi > 0):
            raise DomainError("s_lo and s_hi must be positive")
        if not self.s_lo < self.s_hi:
            raise DomainError("s_lo must be smaller than s_hi")

    @property
    def A(self) -> float:
        return stable_constants(self.alpha)[0]

    @property
    def K(self) -> float:
        return stable_constants(self.alpha)[1]

    @property
    def B(self) -> float:
        return stable_constants(self.alpha)[2]

    def switch_mismatch(self) -> tuple[float, float]:
        """Relative disagreement of the evaluators at ``s_lo`` and ``s_hi``."""
        lo_direct = zolotarev_density(self.alpha, self.s_lo, self.rel_tol * 1e-2)
        lo_asym = small_s_asymptotic(self, self.s_lo)
        hi_direct = pollard_density(self, self.s_hi)
        hi_asym = tail_asymptotic(self, self.s_hi)
        lo = abs(lo_asym / lo_direct - 1.0) if lo_direct > 0 else abs(lo_asym)
        return lo, abs(hi_asym / hi_direct - 1.0)


# --------------------------------------------------------------------------
# integration against g

def default_s_min(alpha: float, exponent: float = 150.0) -> float:
    """``s`` at which ``A s^(-α/(1-α))`` equals ``exponent``; ``g`` is ~e^-exponent there."""
    A = stable_constants(alpha)[0]
    return (A / exponent) ** ((1.0 - alpha) / alpha)


@lru_cache(maxsize=64)
def integration_rule(params: StableParams, s_min: float, s_max: float, panels: int,
                     order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``s_k`` and weights ``W_k`` with ``Σ W_k F(s_k) ≈ ∫ F(s) g(α,s) ds``.

    Gauss-Legendre panels in ``log s`` over ``[s_min, s_max]``. Below the mode
    of ``g`` the panels are compressed by ``α/(1-α)`` because the factor
    ``exp(-A s^(-α/(1-α)))`` varies on that scale in ``log s``.
    """
    alpha = params.alpha
    kappa = alpha / (1.0 - alpha)
    s_mid = (params.A / 0.05) ** (1.0 / kappa)
    s_mid = min(max(s_mid, s_min), s_max)
    l1 = max(1.0, kappa) * math.log(s_mid / s_min)
    l2 = math.log(s_max / s_mid)
    n1 = int(round(panels * l1 / (l1 + l2))) if l1 > 0 else 0
    n1 = min(max(n1, 1 if l1 > 0 else 0), panels - 1)
    n2 = panels - n1
    parts = []
    if n1:
        parts.append(np.linspace(math.log(s_min), math.log(s_mid), n1 + 1))
    parts.append(np.linspace(math.log(s_mid), math.log(s_max), n2 + 1)[1 if n1 else 0:])
    edges = np.concatenate(parts)
    u, w = composite_nodes(edges, order)
    s = np.exp(u)
    g = np.asarray(density(params, s))
    weights = w * s * g
    s.setflags(write=False)
    weights.setflags(write=False)
    return s, weights


def _series_tail(params, rate, start, order=8):
    b = tail_series_coefficients(params.alpha, order)
    out = np.zeros_like(np.asarray(rate, dtype=float))
    for k, bk in enumerate(b, start=1):
        if bk != 0.0:
            out = out + bk * power_exp_tail(k * params.alpha, rate, start)
    return out


def laplace_check(params: StableParams, u, *, panels: int = 128, s_max: float = 1e12):
    """Numerically integrate ``∫_0^∞ e^{-us} g(α, s) ds``; should equal ``exp(-u^α)``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr >= 0)):
        raise DomainError("u must be nonnegative")
    s, W = integration_rule(params, default_s_min(params.alpha), s_max, panels)
    flat = u_arr.ravel()
    body = np.exp(-np.outer(flat, s)) @ W
    out = body + _series_tail(params, flat, s_max)
    return _scalar_or_array(out.reshape(u_arr.shape))


def envelope_constant(params: StableParams, s_grid) -> float:
    """Empirical ``ĉ = sup g(α,s) s^(1+α)`` over the range of ``s_grid``.

    The grid maximum is polished by a bounded scalar search between its
    neighbours, so denser grids over the same range cannot exceed the result
    by more than the optimizer tolerance.
    """
    s = np.sort(_check_s(s_grid).ravel())
    if s.size == 0:
        raise DomainError("s_grid must be nonempty")
    a = params.alpha
    vals = np.asarray(density(params, s)) * s ** (1.0 + a)
    i = int(np.argmax(vals))
    best = float(vals[i])
    if 0 < i < s.size - 1:
        res = optimize.minimize_scalar(
            lambda ls: -float(density(params, math.exp(ls))) * math.exp((1.0 + a) * ls),
            bounds=(math.log(s[i - 1]), math.log(s[i + 1])), method="bounded",
            options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return best
