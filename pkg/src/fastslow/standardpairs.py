"""Standard pairs: short curves theta = G(x) carrying a density, and their weighted pushforwards.

A family is stored as stacked arrays, one row per pair. Curves and densities are sampled
at 64 Chebyshev points of each pair's interval and evaluated by barycentric interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev, legendre

from .errors import DecompositionError, PreconditionError, ResourceError
from .system import Field, _grid, cone_constant, solve_increasing

NODES = 64
MAX_PAIRS = 1_000_000

_T = -np.cos(np.pi * np.arange(NODES) / (NODES - 1))
_W = np.where(np.arange(NODES) % 2 == 0, 1.0, -1.0)
_W[0] *= 0.5
_W[-1] *= 0.5
_GL_T, _GL_W = legendre.leggauss(NODES)
_CHECK = np.linspace(-1.0, 1.0, 257)


def _bary_matrix(t):
    """Rows interpolate from the Chebyshev nodes to the points t in [-1, 1]."""
    t = np.asarray(t, dtype=float)
    diff = t[:, None] - _T[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = _W / diff
    c = c / c.sum(axis=1, keepdims=True)
    rows = np.nonzero(hit.any(axis=1))[0]
    c[rows] = hit[rows].astype(float)
    return c


def _diff_matrix():
    X = _T[:, None] - _T[None, :] + np.eye(NODES)
    D = (_W[None, :] / _W[:, None]) / X
    np.fill_diagonal(D, 0.0)
    return D - np.diag(D.sum(axis=1))


_TO_GL = _bary_matrix(_GL_T)
_D = _diff_matrix()


def _bary(vals, a, b, x):
    """Interpolate per-row samples vals[k] on [a[k], b[k]] at points x[k] (all 1-d)."""
    t = (2.0 * x - a - b) / (b - a)
    diff = t[:, None] - _T[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = _W / diff
    out = np.sum(c * vals, axis=1) / np.sum(c, axis=1)
    k, j = np.nonzero(hit)
    out[k] = vals[k, j]
    return out


def chebyshev_points(a, b):
    """The sample abscissae of pairs on [a, b]; a and b broadcast to shape (P, 1)."""
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return 0.5 * (a + b) + 0.5 * (b - a) * _T


def _sup_derivatives(vals, length, orders):
    """sup over each pair of |d^k/dx^k| of the interpolant, for each k in orders."""
    vals = np.asarray(vals)
    scale = np.max(np.abs(vals), axis=1, keepdims=True)
    coef = chebyshev.chebfit(_T, vals.T, NODES - 1)
    # drop coefficients at the level of rounding so derivatives do not amplify it
    coef[np.abs(coef) < 1e-13 * scale.T] = 0.0
    out = {}
    for k in orders:
        vk = chebyshev.chebval(_CHECK, chebyshev.chebder(coef, k) if k else coef)
        out[k] = np.max(np.abs(vk), axis=1) * (2.0 / length) ** k
    return out


class PairPotential:
    """phi(x, theta) = scale * F(x, theta) for an expression F; complex scale allowed."""

    def __init__(self, expr=None, scale=1.0):
        self.field = None if expr is None else (expr if isinstance(expr, Field) else Field(expr))
        self.scale = complex(scale) if self.field is not None else 0j

    @property
    def is_real(self):
        return self.scale.imag == 0.0

    @property
    def is_zero(self):
        return self.field is None or self.scale == 0

    def __call__(self, x, theta):
        if self.is_zero:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(theta)))
        v = self.scale * self.field(x, theta)
        return v.real if self.is_real else v

    def norms(self):
        """(sup |phi|, C^1 norm, C^2 norm), each the max over the derivatives up to that order."""
        if self.is_zero:
            return 0.0, 0.0, 0.0
        X, T = _grid(256)
        F = self.field
        s = abs(self.scale)
        sup = lambda g: s * float(np.max(np.abs(g(X, T))))  # noqa: E731
        c0 = sup(F)
        c1 = max(c0, sup(F.d("x")), sup(F.d("theta")))
        c2 = max(c1, sup(F.d("x").d("x")), sup(F.d("x").d("theta")), sup(F.d("theta").d("theta")))
        return c0, c1, c2

    def max_real(self):
        if self.is_zero:
            return 0.0
        X, T = _grid(256)
        return float(np.max(np.real(self.scale * self.field(X, T))))


ZERO_POTENTIAL = PairPotential()


@dataclass(frozen=True)
class PairBounds:
    c1: float
    c2: float
    c3: float
    delta: float
    D0: float = 10.0
    D1: float = 100.0
    C: float = 10.0


def default_bounds(sys, potentials=(), C=10.0, delta=None, D0=10.0, D1=100.0) -> PairBounds:
    """Constants large enough for every potential; delta shrinks for complex potentials."""
    pots = [p for p in potentials if p is not None]
    n1 = max([p.norms()[1] for p in pots], default=0.0)
    n2 = max([p.norms()[2] for p in pots], default=0.0)
    c2 = C * (1.0 + n1)
    c3 = C * (1.0 + n2 + n1 ** 2)
    complex_ = any(not p.is_real for p in pots)
    if delta is None:
        delta = min(0.05, math.pi / (10.0 * c2)) if complex_ else 0.05
    return PairBounds(cone_constant(sys, 0.1), c2, c3, float(delta), D0, D1, C)


@dataclass
class StandardPair:
    a: float
    b: float
    G: np.ndarray
    rho: np.ndarray
    bounds: PairBounds

    @property
    def x(self):
        return chebyshev_points(self.a, self.b)

    def G_at(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = len(x)
        return _bary(np.broadcast_to(self.G, (n, NODES)), np.full(n, self.a), np.full(n, self.b), x)

    def rho_at(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = len(x)
        return _bary(np.broadcast_to(self.rho, (n, NODES)), np.full(n, self.a), np.full(n, self.b), x)


@dataclass
class StandardFamily:
    """Pairs stacked row-wise: intervals [a, b], samples G and rho, weights nu."""

    a: np.ndarray
    b: np.ndarray
    G: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    bounds: PairBounds
    eps: float = 0.0

    def __len__(self):
        return len(self.a)

    @property
    def pairs(self):
        return [StandardPair(float(self.a[k]), float(self.b[k]), self.G[k], self.rho[k], self.bounds)
                for k in range(len(self))]

    @property
    def weights(self):
        return self.nu

    @property
    def is_real(self):
        return not (np.iscomplexobj(self.rho) or np.iscomplexobj(self.nu))

    @classmethod
    def from_pairs(cls, pairs, weights, eps=0.0):
        if not pairs:
            raise PreconditionError("a family needs at least one pair")
        return cls(np.array([p.a for p in pairs]), np.array([p.b for p in pairs]),
                   np.array([p.G for p in pairs]), np.array([p.rho for p in pairs]),
                   np.asarray(weights), pairs[0].bounds, eps)

    @classmethod
    def single(cls, a, length, theta0, bounds, eps=0.0, rho=None):
        """One pair on [a, a + length] with flat curve theta0 and density rho (default uniform)."""
        x = chebyshev_points(np.array([a]), np.array([a + length]))
        dens = np.ones_like(x) if rho is None else np.asarray(rho(x))
        fam = cls(np.array([float(a)]), np.array([float(a + length)]), np.full_like(x, float(theta0)),
                  dens, np.ones(1), bounds, eps)
        fam.rho = fam.rho / _integrals(fam, fam.rho)[:, None]
        return fam

    def check(self):
        """Worst ratio of each invariant to its bound (<= 1 means satisfied)."""
        bd, eps = self.bounds, self.eps
        length = self.b - self.a
        gd = _sup_derivatives(self.G, length, (1, 2, 3))
        rd = _sup_derivatives(self.rho, length, (1, 2))
        rmin = np.min(np.abs(_at_check(self.rho)), axis=1)
        if np.any(rmin <= 0):
            return {"density_zero": math.inf}
        if eps > 0:
            g1 = float(np.max(gd[1]) / (eps * bd.c1))
            g2 = float(np.max(gd[2]) / (eps * bd.c1 * bd.D0))
            g3 = float(np.max(gd[3]) / (eps * bd.c1 * bd.D1))
        else:
            # with eps = 0 curves stay flat
            g1 = g2 = g3 = 0.0 if np.max(gd[1]) < 1e-12 else math.inf
        out = {
            "G1": g1,
            "G2": g2,
            "G3": g3,
            "rho1": float(np.max(rd[1] / rmin) / bd.c2),
            "rho2": float(np.max(rd[2] / rmin) / bd.c3),
            "mass": float(np.max(np.abs(_integrals(self, self.rho) - 1.0)) / 1e-8),
            "length_low": float(np.max(0.5 * bd.delta / length)) / (1 + 1e-12),
            "length_high": float(np.max(length / bd.delta)) / (1 + 1e-12),
        }
        if not self.is_real:
            out["complex"] = bd.c2 * bd.delta / (math.pi / 10.0) / (1 + 1e-12)
        return out

    def validate(self):
        bad = {k: v for k, v in self.check().items() if not v <= 1.0}
        if bad:
            raise DecompositionError(f"standard-pair invariants violated: {bad}")
        return self


def _at_check(vals):
    return vals @ _bary_matrix(_CHECK).T


def _integrals(fam, vals):
    half = 0.5 * (fam.b - fam.a)
    return half * ((vals @ _TO_GL.T) @ _GL_W)


def family_measure(fam: StandardFamily, g) -> complex:
    """sum_l nu_l int g(x, G_l(x)) rho_l(x) dx by 64-point Gauss-Legendre per pair."""
    half = 0.5 * (fam.b - fam.a)
    x = 0.5 * (fam.a + fam.b)[:, None] + half[:, None] * _GL_T
    G = fam.G @ _TO_GL.T
    rho = fam.rho @ _TO_GL.T
    vals = np.asarray(g(x, G)) * rho
    total = np.sum(fam.nu * half * (vals @ _GL_W))
    return complex(total)


def _check_potential(fam, phi):
    bd = fam.bounds
    _, n1, n2 = phi.norms()
    if bd.c2 < bd.C * (1.0 + n1) * (1 - 1e-12) or bd.c3 < bd.C * (1.0 + n2 + n1 ** 2) * (1 - 1e-12):
        raise PreconditionError("pair constants c2, c3 too small for this potential")
    if not phi.is_real and bd.c2 * bd.delta > math.pi / 10.0 * (1 + 1e-12):
        raise PreconditionError("complex pairs need c2 * delta <= pi/10")


def pushforward_decompose(fam: StandardFamily, phi: PairPotential, sys) -> StandardFamily:
    """Decompose the pushforward of exp(phi) * (family) under F_eps into a new family."""
    phi = phi or ZERO_POTENTIAL
    _check_potential(fam, phi)
    if fam.eps != sys.eps:
        raise PreconditionError("family and system disagree on eps")
    bd, eps = fam.bounds, sys.eps
    P = len(fam)
    length = fam.b - fam.a
    dG = (fam.G @ _D.T) * (2.0 / length)[:, None]

    def G_of(x, owner):
        return _bary(fam.G[owner], fam.a[owner], fam.b[owner], x)

    def fG(x, owner):
        return sys.f(x, G_of(x, owner))

    ya = fG(fam.a, np.arange(P))
    yb = fG(fam.b, np.arange(P))
    pieces = np.maximum(1, np.ceil((yb - ya) / bd.delta - 1e-12)).astype(int)
    total = int(pieces.sum())
    if total > MAX_PAIRS:
        raise ResourceError(f"decomposition would create {total} pairs (cap {MAX_PAIRS})")
    owner = np.repeat(np.arange(P), pieces)
    j = np.arange(total) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    step = (yb - ya)[owner] / pieces[owner]
    na = ya[owner] + j * step
    nb = np.where(j == pieces[owner] - 1, yb[owner], ya[owner] + (j + 1) * step)

    # inverse branch at the Chebyshev points of every new interval
    Y = np.clip(chebyshev_points(na, nb), ya[owner][:, None], yb[owner][:, None])
    own = np.repeat(owner, NODES)
    lo, hi = fam.a[own], fam.b[own]

    def dfG(x):
        g = G_of(x, own)
        return sys.df_dx(x, g) + sys.df_dtheta(x, g) * _bary(dG[own], lo, hi, x)

    X = solve_increasing(lambda x: fG(x, own), dfG, Y.ravel(), lo, hi)
    Gx = G_of(X, own)
    gbar = Gx + eps * sys.omega(X, Gx)
    rho_x = _bary(fam.rho[own], lo, hi, X)
    unnorm = rho_x * np.exp(phi(X, Gx)) / dfG(X)
    unnorm = unnorm.reshape(total, NODES)
    nu_j = 0.5 * (nb - na) * ((unnorm @ _TO_GL.T) @ _GL_W)
    if np.any(np.abs(nu_j) < 1e-14):
        raise DecompositionError("a piece received (numerically) zero weight")
    shift = np.floor(na)
    out = StandardFamily(na - shift, nb - shift, gbar.reshape(total, NODES),
                         unnorm / nu_j[:, None], fam.nu[owner] * nu_j, bd, eps)
    return out.validate()


def iterate_family(fam: StandardFamily, potentials, n, sys) -> StandardFamily:
    """n successive decompositions; potentials is one PairPotential or a sequence of n."""
    if isinstance(potentials, PairPotential) or potentials is None:
        potentials = [potentials or ZERO_POTENTIAL] * n
    potentials = list(potentials)
    if len(potentials) < n:
        raise PreconditionError(f"need {n} potentials, got {len(potentials)}")
    bound = float(np.sum(np.abs(fam.nu))) * math.exp(2.0 * fam.bounds.c2 * fam.bounds.delta)
    for k in range(n):
        fam = pushforward_decompose(fam, potentials[k], sys)
        bound *= math.exp(potentials[k].max_real())
        if float(np.sum(np.abs(fam.nu))) > bound * (1 + 1e-10):
            raise DecompositionError("total weight exceeds the a priori exponential bound")
    return fam
