"""Fast-slow maps F(x, theta) = (f(x, theta) mod 1, theta + eps * omega(x, theta)).

Fields are expression trees in ``x`` and ``theta``; all partial derivatives are
obtained symbolically. ``x`` lives in [0, 1) while ``theta`` is kept on the real
line and only reduced mod 1 when a periodic field is evaluated.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import (ConfigError, DegenerateOrbitError, InvalidMapError,
                     NumericDomainError, PreconditionError)
from .expr import compile_node, differentiate, free_variables, parse_expression, to_text

# Uniform noise of this size is added to x at each simulated step. In binary
# floating point x -> 2x mod 1 shifts one bit out per step and reaches 0 after
# about 53 steps; the dither refills the low bits, as round-off would for a
# generic map. A noisy orbit of an expanding map is shadowed by a true orbit.
DITHER = 2.0 ** -44

CERT_GRID = 1024


class Field:
    """A smooth function on the torus given by an expression tree."""

    def __init__(self, node, text=None):
        if isinstance(node, str):
            text, node = node, parse_expression(node)
        self.node = node
        self.text = text if text is not None else to_text(node)
        self.vars = free_variables(node)
        self._vec = compile_node(node)
        self._scalar = compile_node(node, scalar=True)
        self._derivs = {}

    def __call__(self, x, theta):
        out = self._vec(x, theta)
        if np.ndim(out) == 0:
            shape = np.broadcast_shapes(np.shape(x), np.shape(theta))
            return np.full(shape, float(out))
        return out

    def scalar(self, x, theta):
        return float(self._scalar(x, theta))

    def d(self, var):
        if var not in self._derivs:
            self._derivs[var] = Field(differentiate(self.node, var))
        return self._derivs[var]

    def __repr__(self):
        return f"Field({self.text!r})"


PRESETS = {
    "doubling-cos": {
        "f": "2*x",
        "omega": "cos(2*pi*x) + 0.5*sin(2*pi*theta)",
    },
    "perturbed-doubling": {
        "f": "2*x + 0.1*sin(2*pi*(x + theta))",
        "omega": "cos(2*pi*x) + 0.5*sin(2*pi*theta)",
    },
    # omega_hat = g o f - g with g = sin(2 pi x) / (2 pi): a coboundary
    "coboundary-control": {
        "f": "2*x",
        "omega": "(sin(4*pi*x) - sin(2*pi*x))/(2*pi) + 0.5*sin(2*pi*theta)",
    },
}


@dataclass(frozen=True)
class FastSlowSystem:
    f: Field
    omega: Field
    A: tuple
    eps: float
    lam_min: float
    degree: int
    sup_A: tuple
    name: str = "custom"

    @property
    def d(self):
        return len(self.A)

    @property
    def df_dx(self):
        return self.f.d("x")

    @property
    def df_dtheta(self):
        return self.f.d("theta")

    @property
    def domega_dx(self):
        return self.omega.d("x")

    @property
    def domega_dtheta(self):
        return self.omega.d("theta")

    def with_eps(self, eps):
        if not (eps >= 0 and math.isfinite(eps)):
            raise ConfigError(f"eps must be a finite nonnegative number, got {eps}")
        return replace(self, eps=float(eps))

    def with_observables(self, extra):
        """Copy with A = (omega, *extra); extra are expressions or Fields."""
        fields = [self.omega] + [e if isinstance(e, Field) else Field(e) for e in extra]
        return build_system(self.f, self.omega, fields[1:], self.eps, self.name)

    def describe(self):
        return {"name": self.name, "f": self.f.text, "omega": self.omega.text,
                "A": [a.text for a in self.A], "eps": self.eps,
                "lam_min": self.lam_min, "degree": self.degree}


def _grid(n=CERT_GRID):
    g = (np.arange(n) + 0.5) / n
    return np.meshgrid(g, g, indexing="ij")


def _check_periodic(fld, label, degree=0):
    t = np.linspace(0.0, 1.0, 33)
    zero, one = np.zeros_like(t), np.ones_like(t)
    if np.max(np.abs(fld(one, t) - fld(zero, t) - degree)) > 1e-10:
        raise InvalidMapError(f"{label} is not periodic in x")
    if np.max(np.abs(fld(t, one) - fld(t, zero))) > 1e-10:
        raise InvalidMapError(f"{label} is not periodic in theta")


def certify_expansion(f: Field, n=CERT_GRID):
    """Lower bound on d f / dx over the torus: grid minimum minus a Lipschitz margin."""
    X, T = _grid(n)
    fx = f.d("x")(X, T)
    if not np.all(np.isfinite(fx)):
        raise NumericDomainError("df_dx is not finite on the certification grid")
    fxx = np.max(np.abs(f.d("x").d("x")(X, T)))
    fxt = np.max(np.abs(f.d("x").d("theta")(X, T)))
    margin = 1.01 * 0.5 / n * (fxx + fxt)
    return float(np.min(fx) - margin)


def sup_bound(fld, n=256):
    """Upper bound on |fld| over the torus: grid maximum plus a gradient margin."""
    X, T = _grid(n)
    grad = np.max(np.abs(fld.d("x")(X, T))) + np.max(np.abs(fld.d("theta")(X, T)))
    return float(np.max(np.abs(fld(X, T))) + 0.5 / n * grad)


def build_system(f, omega, extra=(), eps=0.0, name="custom"):
    """Validate and assemble a system from expressions or Fields."""
    f = f if isinstance(f, Field) else Field(f)
    omega = omega if isinstance(omega, Field) else Field(omega)
    extra = [e if isinstance(e, Field) else Field(e) for e in extra]
    t = np.linspace(0.0, 1.0, 17)
    jumps = f(np.ones_like(t), t) - f(np.zeros_like(t), t)
    degree = int(round(float(jumps[0])))
    if np.max(np.abs(jumps - degree)) > 1e-10:
        raise InvalidMapError("f(x+1, theta) - f(x, theta) is not a constant integer")
    _check_periodic(f, "f", degree)
    _check_periodic(omega, "omega")
    for i, a in enumerate(extra, start=1):
        _check_periodic(a, f"A[{i}]")
    lam = certify_expansion(f)
    if not lam > 1.0:
        raise InvalidMapError(f"f is not uniformly expanding (certified lambda_min = {lam:.6g})")
    if degree < 2:
        raise InvalidMapError(f"degree of f must be at least 2, got {degree}")
    sup_A = tuple(sup_bound(a) for a in [omega] + extra)
    sys = FastSlowSystem(f=f, omega=omega, A=tuple([omega] + extra), eps=0.0,
                         lam_min=lam, degree=degree, sup_A=sup_A, name=name)
    return sys.with_eps(eps)


def preset(name, eps=0.0, extra=()):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    return build_system(p["f"], p["omega"], extra, eps, name)


# --------------------------------------------------------------- dynamics

@dataclass
class TrajectoryState:
    x: float
    z: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))

    @property
    def theta(self):
        return float(self.z[0])


def _mod1(v):
    r = v % 1.0
    return 0.0 if r >= 1.0 else r


def step(sys: FastSlowSystem, s: TrajectoryState, noise=0.0) -> TrajectoryState:
    """One application of F_eps, with the passive variables updated alongside theta."""
    if len(s.z) != sys.d:
        raise ConfigError(f"state has {len(s.z)} slow coordinates, system has {sys.d}")
    th = s.z[0] % 1.0
    fx = sys.f.scalar(s.x, th)
    if not math.isfinite(fx):
        raise NumericDomainError("f returned a non-finite value")
    z = s.z.copy()
    for i, a in enumerate(sys.A):
        v = a.scalar(s.x, th)
        if not math.isfinite(v):
            raise NumericDomainError(f"{'omega' if i == 0 else f'A[{i}]'} returned a non-finite value")
        z[i] += sys.eps * v
    return TrajectoryState(_mod1(fx + noise), z)


def noise_sequence(seed, n, dither=DITHER, path=0):
    if dither == 0 or n == 0:
        return np.zeros(n)
    key = rng.stream_keys(seed, [path])[0]
    return dither * rng.uniform(key, np.arange(n, dtype=np.uint64))


class Trajectory(Sequence):
    """Orbit stored as arrays; indexing yields TrajectoryState objects."""

    def __init__(self, x, z):
        self.x = x
        self.z = z

    def __len__(self):
        return len(self.x)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return Trajectory(self.x[k], self.z[k])
        return TrajectoryState(float(self.x[k]), self.z[k].copy())

    @property
    def theta(self):
        return self.z[:, 0]


def simulate(sys, s0: TrajectoryState, n: int, seed=0, dither=DITHER) -> Trajectory:
    """Orbit of length n+1; element k is the k-fold ``step`` with the same noise."""
    if n < 0:
        raise PreconditionError("number of steps must be nonnegative")
    noise = noise_sequence(seed, n, dither)
    xs = np.empty(n + 1)
    zs = np.empty((n + 1, sys.d))
    s = TrajectoryState(s0.x, s0.z)
    xs[0], zs[0] = s.x, s.z
    for k in range(n):
        s = step(sys, s, noise[k])
        xs[k + 1], zs[k + 1] = s.x, s.z
    return Trajectory(xs, zs)


def step_many(sys, x, z, noise=None):
    """Vectorised step: x has shape (n,), z has shape (d, n). Returns new arrays."""
    th = z[0] % 1.0
    fx = sys.f(x, th)
    if noise is not None:
        fx = fx + noise
    znew = np.empty_like(z)
    for i, a in enumerate(sys.A):
        znew[i] = z[i] + sys.eps * a(x, th)
    xnew = fx % 1.0
    xnew[xnew >= 1.0] = 0.0
    if not (np.all(np.isfinite(xnew)) and np.all(np.isfinite(znew))):
        raise NumericDomainError("non-finite value while stepping an ensemble")
    return xnew, znew


# ----------------------------------------------------------- cone slopes

@dataclass
class SlopeReport:
    u: np.ndarray
    cone_ok: bool
    bound: float
    first_violation: int | None


def cone_constant(sys, margin=0.1):
    X, T = _grid(256)
    wx = float(np.max(np.abs(sys.domega_dx(X, T))))
    return wx / (sys.lam_min - 1.0) * (1.0 + margin)


def slope_recursion(sys, traj) -> SlopeReport:
    """Slopes u_{k+1} = (w_x + (1 + eps w_t) u_k) / (f_x + eps f_t u_k), u_0 = 0."""
    x = np.asarray(traj.x)
    th = np.asarray(traj.theta) % 1.0
    wx, wt = sys.domega_dx(x, th), sys.domega_dtheta(x, th)
    fx, ft = sys.df_dx(x, th), sys.df_dtheta(x, th)
    eps = sys.eps
    u = np.zeros(len(x))
    for k in range(len(x) - 1):
        u[k + 1] = (wx[k] + (1.0 + eps * wt[k]) * u[k]) / (fx[k] + eps * ft[k] * u[k])
    c = cone_constant(sys)
    bad = np.nonzero(np.abs(u) > c)[0]
    first = int(bad[0]) if len(bad) else None
    return SlopeReport(u, first is None, c, first)


# ------------------------------------------------------------- shadowing

def solve_increasing(func, dfunc, target, lo, hi, xtol=1e-13, max_iter=200):
    """Vectorised root of an increasing function: bisection, then one Newton step."""
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    if np.any(func(lo) > target) or np.any(func(hi) < target):
        raise InvalidMapError("root not bracketed; map is not monotone on the branch")
    for _ in range(max_iter):
        if np.all(hi - lo <= xtol):
            break
        mid = 0.5 * (lo + hi)
        below = func(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    slope = dfunc(x)
    polished = x - (func(x) - target) / slope
    ok = (polished >= lo - xtol) & (polished <= hi + xtol)
    return np.where(ok, polished, x)


def bracket_lift(F, target, degree):
    """Bracket for F(v) = target when F(v + 1) = F(v) + degree and F increases."""
    lo = math.floor(target / degree) - 1.0
    hi = lo + 3.0
    while F(lo) > target:
        lo -= 1.0
    while F(hi) < target:
        hi += 1.0
    return lo, hi


@dataclass
class ShadowReport:
    y0: float
    shadow_orbit: np.ndarray
    residual: float
    theta_error_max: float
    x_error_max: float
    xi: np.ndarray | None = None
    eta: np.ndarray | None = None
    eta_constant: float | None = None
    theta_errors: np.ndarray | None = None


def _true_orbit(sys, x0, theta0, n):
    """Exact orbit (no dither) with the integer carries of the lift."""
    xs = np.empty(n + 1)
    th = np.empty(n + 1)
    carries = np.empty(n, dtype=np.int64)
    xs[0], th[0] = x0 % 1.0, theta0
    for k in range(n):
        t = th[k] % 1.0
        F = sys.f.scalar(xs[k], t)
        c = math.floor(F)
        if min(F - c, c + 1 - F) < 1e-14:
            raise DegenerateOrbitError(f"orbit within 1e-14 of a partition boundary at step {k}")
        carries[k] = c
        xs[k + 1] = F - c
        th[k + 1] = th[k] + sys.eps * sys.omega.scalar(xs[k], t)
    return xs, th, carries


def _pull_back(sys, x_end, carries, thetas, tol=1e-12):
    """Backward solve of F(y_k, thetas[k]) = y_{k+1} + carries[k] along the lift."""
    n = len(carries)
    y = np.empty(n + 1)
    y[n] = x_end
    resid = 0.0
    for k in range(n - 1, -1, -1):
        t = thetas[k] % 1.0
        F = lambda v, t=t: sys.f(v, t)  # noqa: E731
        dF = lambda v, t=t: sys.df_dx(v, t)  # noqa: E731
        target = y[k + 1] + carries[k]
        lo, hi = bracket_lift(lambda v, t=t: sys.f.scalar(v, t), target, sys.degree)
        y[k] = float(solve_increasing(F, dF, np.array([target]), lo, hi, xtol=tol)[0])
        resid = max(resid, abs(sys.f.scalar(y[k], t) - target))
    return y, resid


def _circle_dist(a, b):
    d = (np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def shadow_reconstruct(sys, x0, theta0, n, theta_star, c_sharp=1.0) -> ShadowReport:
    """Shadow the F_eps orbit of (x0, theta0) by an orbit of f_* = f(., theta_star)."""
    offset = abs(theta0 - theta_star)
    if n < 0 or offset > 0.1 or offset * n + sys.eps * n * n > c_sharp:
        raise PreconditionError("shadowing needs |theta0-theta*| <= 0.1 and "
                                f"|theta0-theta*| n + eps n^2 <= {c_sharp}")
    xs, th, carries = _true_orbit(sys, x0, theta0, n)
    y, resid = _pull_back(sys, xs[n], carries, np.full(n, theta_star))
    w = sys.omega(y[:n], np.full(n, theta_star % 1.0))
    drift = np.concatenate([[0.0], np.cumsum(w)]) * sys.eps
    theta_err = np.abs(th - theta_star - drift)
    orbit = y % 1.0
    return ShadowReport(float(orbit[0]), orbit, resid, float(np.max(theta_err)),
                        float(np.max(_circle_dist(y, xs))), theta_errors=theta_err)


def shadow_averaged(sys, x0, theta0, n, c_sharp=1.0, averaged=None) -> ShadowReport:
    """Shadow against the time-dependent composition of f(., theta_bar_k)."""
    if n < 0 or sys.eps * n * n > c_sharp:
        raise PreconditionError(f"shadowing needs eps n^2 <= {c_sharp}")
    from .statistics import averaged_table, solve_averaged

    xs, th, carries = _true_orbit(sys, x0, theta0, n)
    if sys.eps == 0 or n == 0:
        tbar = np.full(n + 1, float(theta0))
    else:
        path = averaged or solve_averaged(sys, theta0, sys.eps * n, sys.eps)
        tbar = np.interp(sys.eps * np.arange(n + 1), path.t_grid, path.theta_bar)
    y, resid = _pull_back(sys, xs[n], carries, tbar[:n])
    wbar = averaged_table(sys).omega_bar(tbar[:n]) if n else np.zeros(0)
    w_hat = sys.omega(y[:n], tbar[:n] % 1.0) - wbar
    eta = th - tbar
    drift = np.concatenate([[0.0], np.cumsum(w_hat)]) * sys.eps
    xi = (xs - y + 0.5) % 1.0 - 0.5
    k = np.arange(n + 1)
    eta_c = float(np.max(np.abs(eta) / (sys.eps * (k + 1)))) if sys.eps > 0 else 0.0
    orbit = y % 1.0
    theta_err = np.abs(eta - drift)
    return ShadowReport(float(orbit[0]), orbit, resid, float(np.max(theta_err)),
                        float(np.max(np.abs(xi))), xi, eta, eta_c, theta_err)
