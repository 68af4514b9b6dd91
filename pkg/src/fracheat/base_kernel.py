"""Base heat kernels ``p(t, x, y)`` of ``H = ∇·(a(x)∇)``.

Free space is handled by the closed-form Gaussian (``a ≡ Id``). Bounded
rectangles are discretized by a symmetric finite-volume scheme on a
vertex-centred grid; the semigroup is then evaluated through a cached dense
eigendecomposition, which also serves as the exact spectral oracle for
fractional powers.

Grid convention: the ``points`` unknowns sit at ``0, h, ..., extent``.
Dirichlet conditions are imposed at the ghost nodes ``-h`` and
``extent + h``; Neumann conditions drop the boundary fluxes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
import math

import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import CapacityError, DomainError, EllipticityError, NumericError
from .reports import BoundReport, csv_text

_EPS = np.finfo(float).eps

SPECTRAL_BUDGET = 4096


class Boundary(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Grid:
    """Tensor grid on ``[0, extent_1] x ... `` with ``points`` nodes per axis."""

    extent: tuple[float, ...]
    points: tuple[int, ...]
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        pts = tuple(int(p) for p in np.atleast_1d(self.points))
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if len(ext) != len(pts) or len(ext) not in (1, 2):
            raise DomainError("grid dimension must be 1 or 2 with one extent per axis")
        if any(not e > 0 for e in ext):
            raise DomainError("extent must be positive")
        if any(p < 2 for p in pts):
            raise DomainError("points per axis must be at least 2")

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (p - 1) for e, p in zip(self.extent, self.points))

    @property
    def volume(self) -> float:
        """Cell volume ``h^d`` (product of spacings)."""
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @cached_property
    def coordinates(self) -> np.ndarray:
        axes = [np.arange(p) * h for p, h in zip(self.points, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_of(self, x) -> int:
        """Flat index of the grid node at coordinate ``x`` (must be a node)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise DomainError(f"expected a point with {self.dim} coordinates")
        idx = []
        for xi, h, p in zip(x, self.spacing, self.points):
            k = round(xi / h)
            if not 0 <= k < p or abs(k * h - xi) > 1e-9 * h + 1e-12:
                raise DomainError(f"point {tuple(x)} is not a grid node")
            idx.append(k)
        return int(np.ravel_multi_index(idx, self.points))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric ``d x d`` matrix ``a(x)`` at every grid node, with λ⁻¹ ≤ a ≤ λ."""

    values: np.ndarray
    lam: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise DomainError("coefficient values must have shape (n, d, d)")
        if not self.lam >= 1.0:
            raise DomainError("ellipticity constant must be >= 1")
        asym = np.nonzero(np.any(v != np.swapaxes(v, 1, 2), axis=(1, 2)))[0]
        if asym.size:
            raise EllipticityError(f"a(x) is not symmetric at grid point {asym[0]}", int(asym[0]))
        ev = np.linalg.eigvalsh(v)
        slack = 1e-12 * self.lam
        bad = np.nonzero((ev[:, 0] < 1.0 / self.lam - slack) | (ev[:, -1] > self.lam + slack))[0]
        if bad.size:
            i = int(bad[0])
            raise EllipticityError(
                f"ellipticity violated at grid point {i}: eigenvalues {ev[i].tolist()} "
                f"not within [1/{self.lam}, {self.lam}]", i)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# coefficient presets

def _scalar_field(grid, scalar, lam):
    eye = np.eye(grid.dim)
    return CoefficientField(scalar[:, None, None] * eye, lam)


def identity_field(grid: Grid) -> CoefficientField:
    return _scalar_field(grid, np.ones(grid.size), 1.0)


def checkerboard_sign(grid: Grid, cells: int = 8) -> np.ndarray:
    """±1 pattern on ``cells`` blocks per axis (independent of the resolution)."""
    x = grid.coordinates
    block = np.zeros(grid.size, dtype=int)
    for ax in range(grid.dim):
        k = np.floor(x[:, ax] / grid.extent[ax] * cells).astype(int)
        block += np.clip(k, 0, cells - 1)
    return np.where(block % 2 == 0, 1.0, -1.0)


def checkerboard_field(grid: Grid, lam: float, cells: int = 8) -> CoefficientField:
    """``a = λ Id`` on even blocks, ``a = Id/λ`` on odd blocks."""
    sign = checkerboard_sign(grid, cells)
    return _scalar_field(grid, lam ** sign, lam)


def smooth_bump_field(grid: Grid, lam: float, width: float) -> CoefficientField:
    """``a = (1 + (λ-1) exp(-|x-c|²/(2 w²))) Id`` centred in the domain."""
    centre = np.asarray(grid.extent) / 2
    r2 = ((grid.coordinates - centre) ** 2).sum(axis=1)
    return _scalar_field(grid, 1.0 + (lam - 1.0) * np.exp(-r2 / (2 * width ** 2)), lam)


def scalar_perturbation(grid: Grid, pattern: np.ndarray) -> np.ndarray:
    """Turn a scalar pattern into a matrix-valued direction ``pattern · Id``."""
    return np.asarray(pattern, dtype=float)[:, None, None] * np.eye(grid.dim)


# --------------------------------------------------------------------------
# operator assembly

@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs of a discrete operator: ``H = V diag(mu) V^T`` with ``mu <= 0``."""

    mu: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True, eq=False)
class DiscreteEllipticOperator:
    """Sparse symmetric matrix of the discretized ``∇·(a∇)`` on a grid."""

    matrix: sparse.csr_matrix
    grid: Grid
    coefficients: CoefficientField
    spectral_budget: int = SPECTRAL_BUDGET
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def boundary(self) -> Boundary:
        return self.grid.boundary

    @property
    def lam(self) -> float:
        return self.coefficients.lam

    @property
    def volume(self) -> float:
        return self.grid.volume

    @property
    def size(self) -> int:
        return self.grid.size

    def spectrum(self) -> Spectrum:
        """Cached dense eigendecomposition (eigenvalues clipped to ``<= 0``)."""
        if "spectrum" not in self._cache:
            if self.size > self.spectral_budget:
                raise CapacityError(
                    f"operator has {self.size} unknowns; spectral budget is {self.spectral_budget}")
            try:
                mu, vec = scipy.linalg.eigh(self.matrix.toarray())
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise NumericError(f"eigendecomposition failed: {exc}") from exc
            scale = max(1.0, float(np.abs(mu).max()))
            if mu.max() > 1e-10 * scale:
                raise NumericError(f"operator is not negative semidefinite (max eigenvalue {mu.max():.3e})")
            mu = np.minimum(mu, 0.0)
            # below eigensolver accuracy; fractional powers would amplify the noise
            mu[mu > -self.size * _EPS * scale] = 0.0
            mu.setflags(write=False)
            vec.setflags(write=False)
            self._cache["spectrum"] = Spectrum(mu, vec)
        return self._cache["spectrum"]

    def gradient_matrix(self, axis: int = 0) -> sparse.csr_matrix:
        """Central differences along ``axis`` (one-sided on the boundary rows)."""
        key = ("grad", axis)
        if key not in self._cache:
            self._cache[key] = _difference_matrix(self.grid, axis)
        return self._cache[key]


def _axis_neighbors(grid, axis):
    idx = np.arange(grid.size).reshape(grid.points)
    lo = np.take(idx, range(0, grid.points[axis] - 1), axis=axis).ravel()
    hi = np.take(idx, range(1, grid.points[axis]), axis=axis).ravel()
    return lo, hi


def _difference_matrix(grid, axis):
    n = grid.size
    h = grid.spacing[axis]
    pos = np.unravel_index(np.arange(n), grid.points)[axis]
    m = grid.points[axis]
    step = int(np.prod(grid.points[axis + 1:]))
    rows, cols, vals = [], [], []
    for i in range(n):
        k = pos[i]
        if 0 < k < m - 1:
            rows += [i, i]; cols += [i - step, i + step]; vals += [-0.5 / h, 0.5 / h]
        elif k == 0:
            rows += [i, i]; cols += [i, i + step]; vals += [-1.0 / h, 1.0 / h]
        else:
            rows += [i, i]; cols += [i - step, i]; vals += [-1.0 / h, 1.0 / h]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_operator(grid: Grid, a: CoefficientField) -> DiscreteEllipticOperator:
    """Finite-volume matrix of ``∇·(a∇)`` written as ``H = -Σ Dᵀ W D``.

    Diagonal entries of ``a`` act on cell faces with harmonic averaging
    (5-point stencil in 2D); the off-diagonal entry acts through corner
    gradients, giving a symmetric 9-point stencil.
    """
    if a.values.shape[0] != grid.size or a.dim != grid.dim:
        raise DomainError("coefficient field does not match the grid")
    n = grid.size
    av = a.values
    blocks = []
    for ax in range(grid.dim):
        h = grid.spacing[ax]
        lo, hi = _axis_neighbors(grid, ax)
        a_lo, a_hi = av[lo, ax, ax], av[hi, ax, ax]
        face = 2.0 * a_lo * a_hi / (a_lo + a_hi)
        rows = np.arange(lo.size)
        D = sparse.csr_matrix(
            (np.concatenate([-np.ones(lo.size), np.ones(lo.size)]) / h,
             (np.concatenate([rows, rows]), np.concatenate([lo, hi]))),
            shape=(lo.size, n))
        blocks.append((D, face))
        if grid.boundary is Boundary.DIRICHLET:
            idx = np.arange(n).reshape(grid.points)
            first = np.take(idx, 0, axis=ax).ravel()
            last = np.take(idx, grid.points[ax] - 1, axis=ax).ravel()
            edge = np.concatenate([first, last])
            Db = sparse.csr_matrix((np.ones(edge.size) / h, (np.arange(edge.size), edge)),
                                   shape=(edge.size, n))
            blocks.append((Db, av[edge, ax, ax]))
    H = sparse.csr_matrix((n, n))
    for D, w in blocks:
        H = H - D.T @ sparse.diags(w) @ D
    if grid.dim == 2 and np.any(av[:, 0, 1] != 0.0):
        H = H - _cross_term(grid, av[:, 0, 1])
    H = ((H + H.T) * 0.5).tocsr()
    H.eliminate_zeros()
    return DiscreteEllipticOperator(H, grid, a)


def _cross_term(grid, a12):
    nx, ny = grid.points
    hx, hy = grid.spacing
    idx = np.arange(grid.size).reshape(nx, ny)
    c00 = idx[:-1, :-1].ravel()
    c10 = idx[1:, :-1].ravel()
    c01 = idx[:-1, 1:].ravel()
    c11 = idx[1:, 1:].ravel()
    m = c00.size
    rows = np.tile(np.arange(m), 4)
    cols = np.concatenate([c00, c10, c01, c11])
    Gx = sparse.csr_matrix((np.concatenate([-np.ones(m), np.ones(m), -np.ones(m), np.ones(m)]) / (2 * hx),
                            (rows, cols)), shape=(m, grid.size))
    Gy = sparse.csr_matrix((np.concatenate([-np.ones(m), -np.ones(m), np.ones(m), np.ones(m)]) / (2 * hy),
                            (rows, cols)), shape=(m, grid.size))
    corner = 0.25 * (a12[c00] + a12[c10] + a12[c01] + a12[c11])
    W = sparse.diags(corner)
    return Gx.T @ W @ Gy + Gy.T @ W @ Gx


# --------------------------------------------------------------------------
# kernels

@dataclass(frozen=True, eq=False)
class KernelField:
    """Sampled kernel values ``values[k, i, j]`` at ``(t[k], x[i], y[j])``.

    ``kind`` is ``"kernel"``, ``"gradient"`` (values are magnitudes, with the
    components in ``components``) or ``"difference"``; ``alpha`` is None for
    base kernels.
    """

    values: np.ndarray
    t: tuple[float, ...]
    x: np.ndarray
    y: np.ndarray
    kind: str = "kernel"
    alpha: float | None = None
    volume: float = 1.0
    components: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "t", tuple(float(s) for s in np.atleast_1d(self.t)))
        if v.shape[0] != len(self.t):
            raise DomainError("one value slice per time is required")

    @property
    def dim(self) -> int:
        return np.asarray(self.x).shape[1]

    def matrix(self, k: int = 0) -> np.ndarray:
        return self.values[k]

    def distances(self) -> np.ndarray:
        x, y = np.asarray(self.x), np.asarray(self.y)
        return np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1))

    def to_csv(self) -> str:
        nt, nx, ny = self.values.shape
        kk, ii, jj = np.meshgrid(np.arange(nt), np.arange(nx), np.arange(ny), indexing="ij")
        tt = np.asarray(self.t)[kk.ravel()]
        rows = zip(tt.tolist(), ii.ravel().tolist(), jj.ravel().tolist(), self.values.ravel().tolist())
        return csv_text(("t", "x_index", "y_index", "value"), rows)


def heat_kernel_matrix(op: DiscreteEllipticOperator, t: float) -> KernelField:
    """``p(t, x_i, y_j) = Σ_k e^{t μ_k} v_k(x_i) v_k(y_j) / h^d``."""
    if not t >= 0:
        raise DomainError("t must be nonnegative")
    X = op.grid.coordinates
    if t == 0:
        vals = np.eye(op.size) / op.volume
    else:
        sp = op.spectrum()
        vals = (sp.vectors * np.exp(t * sp.mu)) @ sp.vectors.T / op.volume
    return KernelField(vals, (t,), X, X, "kernel", None, op.volume)


def _sep2(x, y, d):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1:] != (1,)):
        x = x[..., None]
    if d == 1 and (y.ndim == 0 or y.shape[-1:] != (1,)):
        y = y[..., None]
    diff = x - y
    if diff.shape[-1] != d:
        raise DomainError(f"points must have {d} coordinates")
    return diff


def gaussian_kernel(t, x, y, d: int):
    """``(4πt)^{-d/2} exp(-|x-y|²/(4t))``, the heat kernel of the Laplacian."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("t must be positive")
    diff = _sep2(x, y, d)
    r2 = (diff ** 2).sum(axis=-1)
    out = (4 * math.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_gradient(t, x, y, d: int) -> np.ndarray:
    """``∇_x`` of :func:`gaussian_kernel`: ``-(x-y)/(2t) · p``."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("t must be positive")
    diff = _sep2(x, y, d)
    r2 = (diff ** 2).sum(axis=-1)
    p = (4 * math.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))
    return (-p / (2 * t))[..., None] * diff


# --------------------------------------------------------------------------
# evaluators used by the subordination integrals

@dataclass(frozen=True)
class TailTerm:
    """Large-τ model ``coef · τ^(-power) · exp(-rate·τ)`` of a base kernel."""

    coef: np.ndarray | float
    power: float
    rate: float | np.ndarray = 0.0


class GaussianBase:
    """Free-space base kernel ``p(τ, x, y)`` of the Laplacian in ``d`` dimensions."""

    def __init__(self, d: int):
        self.d = int(d)

    def kernel(self, tau, x, y):
        tau = np.asarray(tau, dtype=float)
        r2 = float((_sep2(x, y, self.d) ** 2).sum())
        return (4 * math.pi * tau) ** (-self.d / 2) * np.exp(-r2 / (4 * tau))

    def gradient(self, tau, x, y):
        tau = np.asarray(tau, dtype=float)
        diff = _sep2(x, y, self.d).reshape(self.d)
        p = self.kernel(tau, x, y)
        return -(p / (2 * tau))[:, None] * diff[None, :]

    def kernel_tail(self, x, y):
        return [TailTerm((4 * math.pi) ** (-self.d / 2), self.d / 2)]

    def gradient_tail(self, x, y):
        diff = _sep2(x, y, self.d).reshape(self.d)
        return [TailTerm(-diff / 2 * (4 * math.pi) ** (-self.d / 2), self.d / 2 + 1)]

    def majorant(self, tau):
        """Pointwise bound ``sup_{x,y} p(τ, x, y)`` used for truncation estimates."""
        return (4 * math.pi * np.asarray(tau, dtype=float)) ** (-self.d / 2)


class GridBase:
    """Spectral evaluator of the grid heat kernel at node coordinates."""

    def __init__(self, op: DiscreteEllipticOperator):
        self.op = op
        self.d = op.grid.dim

    def _rows(self, x, y):
        g = self.op.grid
        return g.index_of(x), g.index_of(y)

    def kernel(self, tau, x, y):
        i, j = self._rows(x, y)
        sp = self.op.spectrum()
        c = sp.vectors[i] * sp.vectors[j] / self.op.volume
        return np.exp(np.multiply.outer(np.asarray(tau, dtype=float), sp.mu)) @ c

    def gradient(self, tau, x, y):
        i, j = self._rows(x, y)
        sp = self.op.spectrum()
        comps = []
        for ax in range(self.d):
            dv = self.op.gradient_matrix(ax)[i] @ sp.vectors
            comps.append(np.ravel(dv) * sp.vectors[j] / self.op.volume)
        E = np.exp(np.multiply.outer(np.asarray(tau, dtype=float), sp.mu))
        return np.stack([E @ c for c in comps], axis=-1)

    def kernel_tail(self, x, y):
        i, j = self._rows(x, y)
        sp = self.op.spectrum()
        return [TailTerm(sp.vectors[i] * sp.vectors[j] / self.op.volume, 0.0, -sp.mu)]

    def gradient_tail(self, x, y):
        i, j = self._rows(x, y)
        sp = self.op.spectrum()
        coefs = np.stack([np.ravel(self.op.gradient_matrix(ax)[i] @ sp.vectors) * sp.vectors[j]
                          for ax in range(self.d)], axis=-1) / self.op.volume
        return [TailTerm(coefs, 0.0, -sp.mu)]

    def majorant(self, tau):
        return np.full(np.shape(tau), 1.0 / self.op.volume)


# --------------------------------------------------------------------------
# Aronson bounds

def aronson_check(kernel: KernelField, trial_M: float = 100.0) -> BoundReport:
    """Smallest ``M`` with ``M⁻¹ t^{-d/2} e^{-M r²/t} ≤ p ≤ M t^{-d/2} e^{-r²/(M t)}``.

    Both inequalities are monotone in ``M``, so ``M`` is found by bisection
    on ``log M`` over ``[1, trial_M]``. An unsatisfiable range gives
    ``verdict=False`` together with the worst violation.
    """
    if kernel.kind != "kernel" or kernel.alpha is not None:
        raise DomainError("aronson_check needs a base kernel field")
    if not trial_M >= 1.0:
        raise DomainError("trial_M must be >= 1")
    d = kernel.dim
    r2 = kernel.distances() ** 2
    ts, ps, rs = [], [], []
    for k, t in enumerate(kernel.t):
        if t <= 0:
            continue
        ts.append(np.full(r2.size, t))
        ps.append(kernel.values[k].ravel())
        rs.append(r2.ravel())
    rep = BoundReport("aronson", columns=("t", "r", "p"))
    if not ts:
        rep.verdict = False
        rep.notes.append("no positive times sampled")
        return rep
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    r2f = np.concatenate(rs)
    with np.errstate(divide="ignore"):
        logp = np.log(np.where(p > 0, p, 0.0))
    base = -0.5 * d * np.log(t)

    def upper_slack(M):
        return math.log(M) + base - r2f / (M * t) - logp

    def lower_slack(M):
        return logp - (-math.log(M) + base - M * r2f / t)

    def ok(M):
        return upper_slack(M).min() >= -1e-12 and lower_slack(M).min() >= -1e-12

    rep.rows = list(zip(t.tolist(), np.sqrt(r2f).tolist(), p.tolist()))
    if not ok(trial_M):
        us, ls = upper_slack(trial_M), lower_slack(trial_M)
        which = "upper" if us.min() < ls.min() else "lower"
        k = int(np.argmin(us if which == "upper" else ls))
        rep.verdict = False
        rep.constants["M"] = math.inf
        rep.witnesses[f"{which}_violation"] = {"t": t[k], "r": math.sqrt(r2f[k]), "p": p[k]}
        rep.n_failed = int((us < -1e-12).sum() + (ls < -1e-12).sum())
        return rep
    lo, hi = 0.0, math.log(trial_M)
    if ok(1.0):
        hi = 0.0
    else:
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if ok(math.exp(mid)):
                hi = mid
            else:
                lo = mid
    M = math.exp(hi)
    us, ls = upper_slack(M), lower_slack(M)
    ku, kl = int(np.argmin(us)), int(np.argmin(ls))
    rep.constants["M"] = M
    rep.witnesses["upper_binding"] = {"t": t[ku], "r": math.sqrt(r2f[ku]), "p": p[ku]}
    rep.witnesses["lower_binding"] = {"t": t[kl], "r": math.sqrt(r2f[kl]), "p": p[kl]}
    rep.verdict = True
    return rep
