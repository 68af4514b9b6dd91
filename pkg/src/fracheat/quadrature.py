"""Gauss-Legendre building blocks and closed-form tail integrals.

Everything here is independent of the stable law; :mod:`fracheat.subordinator`
and :mod:`fracheat.subordination` assemble these pieces into the actual
subordination rules.
"""
from __future__ import annotations

from functools import lru_cache
import math

import numpy as np
from scipy import special

from .errors import QuadratureError

_EPS = np.finfo(float).eps


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``order``-point rule on [-1, 1] (read-only)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_nodes(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on consecutive panels ``edges[i]..edges[i+1]``.

    Returns flat arrays of length ``(len(edges) - 1) * order``.
    """
    x, w = gauss_legendre(order)
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x
    weights = half * w
    return nodes.ravel(), weights.ravel()


def adaptive_gauss_legendre(f, a, b, *, rel_tol=1e-10, abs_tol=0.0, order=20,
                            breakpoints=(), max_intervals=4000):
    """Globally adaptive Gauss-Legendre quadrature of a vectorized ``f``.

    Each interval is estimated with an ``order``-point rule; the difference
    to the ``order//2``-point rule is the local error estimate. All intervals
    whose error exceeds their share of the tolerance are bisected in one
    batch, so ``f`` is called on 2-D arrays of nodes.

    Returns ``(value, error_estimate, abs_value)`` where ``abs_value`` is the
    integral of ``|f|`` on the final partition (a conditioning measure).

    Raises
    ------
    QuadratureError
        If the interval budget is exhausted before the tolerance is met.
    """
    xh, wh = gauss_legendre(order)
    xl, wl = gauss_legendre(order // 2)
    pts = np.unique(np.concatenate([[a, b], [p for p in breakpoints if a < p < b]]))
    lo, hi = pts[:-1], pts[1:]

    def estimate(lo, hi):
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        fh = f(mid + half * xh)
        fl = f(mid + half * xl)
        ih = (half * wh * fh).sum(axis=1)
        il = (half * wl * fl).sum(axis=1)
        iabs = (half * wh * np.abs(fh)).sum(axis=1)
        return ih, np.abs(ih - il), iabs

    val, err, vabs = estimate(lo, hi)
    while True:
        total = val.sum()
        total_abs = vabs.sum()
        tol = max(abs_tol, rel_tol * abs(total), 64 * _EPS * total_abs)
        total_err = err.sum()
        if total_err <= tol:
            return float(total), float(total_err), float(total_abs)
        if lo.size >= max_intervals:
            raise QuadratureError("adaptive Gauss-Legendre exceeded interval budget",
                                  partial=float(total), error=float(total_err))
        share = tol / lo.size
        bad = err > 0.5 * share
        if not bad.any():
            bad = err >= err.max()
        mid = 0.5 * (lo[bad] + hi[bad])
        new_lo = np.concatenate([lo[bad], mid])
        new_hi = np.concatenate([mid, hi[bad]])
        nv, ne, na = estimate(new_lo, new_hi)
        keep = ~bad
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        val = np.concatenate([val[keep], nv])
        err = np.concatenate([err[keep], ne])
        vabs = np.concatenate([vabs[keep], na])


def upper_gamma_negative(a, z):
    """Upper incomplete gamma ``Γ(-a, z)`` for ``a > 0`` and ``z > 0``."""
    a = float(a)
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return scaled_upper_gamma_negative(a, z) * z ** (-a)


def scaled_upper_gamma_negative(a, z):
    """``z^a Γ(-a, z)`` for ``a > 0`` and ``z >= 0`` (equal to ``1/a`` at ``z = 0``).

    Starts from ``z^a Γ(b, z)`` with ``b = ceil(a) - a`` in [0, 1) and recurses
    downward with ``Γ(c - 1, z) = (Γ(c, z) - z^(c-1) e^(-z)) / (c - 1)``; the
    factor ``z^a`` keeps every intermediate power of ``z`` nonnegative, so
    nothing overflows as ``z → 0``.
    """
    a = float(a)
    z = np.asarray(z, dtype=float)
    n = math.ceil(a)
    b = n - a
    if b < 1e-13:
        b = 0.0
        n = round(a)
    zero = z <= 0.0
    zs = np.where(zero, 1.0, z)
    if b == 0.0:
        g = special.exp1(zs)
    else:
        g = special.gammaincc(b, zs) * special.gamma(b)
    g = g * zs ** a
    c = b
    ez = np.exp(-zs)
    for _ in range(n):
        g = (g - zs ** (a + c - 1.0) * ez) / (c - 1.0)
        c -= 1.0
    return np.where(zero, 1.0 / a, g)


def power_exp_tail(a, rate, start):
    """``∫_start^∞ s^(-a-1) e^(-rate·s) ds`` for ``a > 0``, ``rate >= 0``.

    Vectorized over ``rate``; negative rates (round-off around a zero
    eigenvalue) are treated as 0.
    """
    rate = np.maximum(np.asarray(rate, dtype=float), 0.0)
    z = rate * start
    out = np.zeros_like(z)
    ok = z <= 700.0
    out[ok] = start ** (-a) * scaled_upper_gamma_negative(a, z[ok])
    return out
