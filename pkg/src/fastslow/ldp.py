"""Rate functions: stationary multipliers, Z, its collar regularisation, path functionals,
periodic-orbit domains and the moment generating function prediction."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (ConfigError, DegenerateVarianceError, NumericDomainError,
                     PreconditionError)
from .statistics import green_kubo, solve_averaged
from .system import solve_increasing
from .transfer import FD_STEP, FOURIER_128, chi_gradient, chi_hat, mean_field

SIGMA_MAX = 20.0
RESIDUAL_TOL = 1e-8
MAX_NEWTON = 60


class _Infinite(float):
    """+inf that can be told apart from an overflow by identity."""

    def __new__(cls):
        return super().__new__(cls, math.inf)

    def __repr__(self):
        return "INFINITE"

    def __reduce__(self):
        return (_infinite, ())


def _infinite():
    return INFINITE


INFINITE = _Infinite()


def is_infinite(z) -> bool:
    return z is INFINITE or (isinstance(z, float) and math.isinf(z) and z > 0)


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class SigmaResult:
    sigma: np.ndarray | None
    in_domain: bool
    converged: bool
    residual: float
    iterations: int
    chi: float = float("nan")


def _check_b(sys, b):
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (sys.d,):
        raise ConfigError(f"b must have {sys.d} components, got shape {b.shape}")
    if np.any(np.abs(b) > np.asarray(sys.sup_A) + 1.0):
        raise PreconditionError("|b| exceeds sup|A| + 1")
    return b


def _seed(sys, b, abar, theta, disc):
    sig2 = green_kubo(sys, theta, disc=disc)
    if np.min(np.linalg.eigvalsh(sig2)) < 1e-8:
        return np.zeros(sys.d)
    s = np.linalg.solve(sig2, b - abar)
    norm = np.linalg.norm(s)
    return s if norm <= SIGMA_MAX else s * (SIGMA_MAX / norm)


def stationary_sigma(sys, b, theta, disc=FOURIER_128) -> SigmaResult:
    """Solve b = A_bar + grad chi_hat(sigma) for sigma."""
    b = _check_b(sys, b)
    abar = mean_field(sys, theta, disc)
    sigma = _seed(sys, b, abar, theta, disc)

    def evaluate(s):
        c0, g, hess = chi_gradient(sys, theta, s, disc, FD_STEP, SIGMA_MAX + 1.0)
        return c0, abar + g - b, hess

    if sys.d == 1:
        return _safeguarded_1d(evaluate, sigma)
    return _damped_newton(evaluate, sigma)


def _safeguarded_1d(evaluate, sigma):
    # the residual is increasing in sigma; keep a bracket and fall back to bisection
    lo, hi = -SIGMA_MAX, SIGMA_MAX
    lo_checked = hi_checked = False
    s = float(sigma[0])
    for it in range(1, 4 * MAX_NEWTON + 1):
        c0, r, hess = evaluate(np.array([s]))
        r = float(r[0])
        if abs(r) < RESIDUAL_TOL:
            return SigmaResult(np.array([s]), True, True, abs(r), it, c0)
        if r < 0:
            lo, lo_checked = s, lo_checked or s == -SIGMA_MAX
            if s == SIGMA_MAX:
                return SigmaResult(None, False, True, abs(r), it)
        else:
            hi, hi_checked = s, hi_checked or s == SIGMA_MAX
            if s == -SIGMA_MAX:
                return SigmaResult(None, False, True, abs(r), it)
        if hi - lo < 1e-14:
            break
        h = float(hess[0, 0])
        trial = s - r / h if h > 0 else math.nan
        if not lo < trial < hi:
            # an unchecked end of the bracket is probed before bisecting towards it
            if trial >= hi and hi == SIGMA_MAX and not hi_checked:
                trial = SIGMA_MAX
            elif trial <= lo and lo == -SIGMA_MAX and not lo_checked:
                trial = -SIGMA_MAX
            else:
                trial = 0.5 * (lo + hi)
        s = trial
    warnings.warn(f"stationary_sigma did not converge (residual {abs(r):.3g})",
                  ConvergenceWarning, stacklevel=3)
    return SigmaResult(np.array([s]), True, False, abs(r), it, c0)


def _damped_newton(evaluate, sigma):
    c0, r, hess = evaluate(sigma)
    for it in range(1, MAX_NEWTON + 1):
        rn = float(np.linalg.norm(r))
        if rn < RESIDUAL_TOL:
            return SigmaResult(sigma, True, True, rn, it, c0)
        step = np.linalg.lstsq(hess, -r, rcond=None)[0]
        t = 1.0
        for _ in range(30):
            trial = sigma + t * step
            if np.linalg.norm(trial) > SIGMA_MAX:
                # escaping the multiplier ball with a residual bounded away from zero
                if rn > 1e-6:
                    return SigmaResult(None, False, True, rn, it)
                t *= 0.5
                continue
            c1, r1, h1 = evaluate(trial)
            if np.linalg.norm(r1) < rn:
                sigma, c0, r, hess = trial, c1, r1, h1
                break
            t *= 0.5
        else:
            break
    rn = float(np.linalg.norm(r))
    warnings.warn(f"stationary_sigma stagnated (residual {rn:.3g})", ConvergenceWarning, stacklevel=3)
    return SigmaResult(sigma, True, False, rn, it, c0)


def _z_from(res, b, abar):
    if not res.in_domain:
        return INFINITE
    if not res.converged:
        return math.nan
    z = float(res.sigma @ (b - abar) - res.chi)
    return 0.0 if -1e-12 < z < 0 else z


def rate_Z(sys, b, theta, disc=FOURIER_128) -> float:
    """Z(b, theta) = <sigma*, b - A_bar> - chi_hat(sigma*); INFINITE off the domain."""
    b = _check_b(sys, b)
    res = stationary_sigma(sys, b, theta, disc)
    return _z_from(res, b, mean_field(sys, theta, disc))


# ------------------------------------------------------------------ domain

@dataclass
class PeriodicOrbit:
    period: int
    points: np.ndarray
    average: np.ndarray


@dataclass
class DomainEstimate:
    orbits: list
    halfspaces: np.ndarray  # rows (n, c): inside when n.b + c <= 0
    skipped: int = 0
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def interval(self):
        """Hull for a single observable as (lower, upper)."""
        if self.halfspaces.shape[1] != 2:
            raise PreconditionError("interval is only defined for d = 1")
        return float(self.vertices[:, 0].min()), float(self.vertices[:, 0].max())

    def distance(self, b):
        """Signed Euclidean distance to the boundary, positive inside."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        n, c = self.halfspaces[:, :-1], self.halfspaces[:, -1]
        return float(np.min(-(n @ b + c)))


def _orbit(f, theta, x, p):
    """x, f(x), ..., f^p(x) reduced mod 1."""
    pts = np.empty(p + 1)
    y = x
    for j in range(p + 1):
        pts[j] = y % 1.0
        y = f(y, theta)
    return pts


def _periodic_roots(sys, theta, p):
    f, fx = sys.f, sys.df_dx
    th = np.asarray(float(theta))

    def G(x):
        y = np.asarray(x, dtype=float)
        for _ in range(p):
            y = f(y, th)
        return y - x

    def dG(x):
        y = np.asarray(x, dtype=float)
        d = np.ones_like(y)
        for _ in range(p):
            d = d * fx(y, th)
            y = f(y, th)
        return d - 1.0

    g0 = float(G(np.array(0.0)))
    k0 = math.ceil(g0)
    ks = k0 + np.arange(sys.degree ** p - 1, dtype=float)
    ks = ks[ks < g0 + sys.degree ** p - 1]
    roots = solve_increasing(G, dG, ks, 0.0, 1.0)
    ok = np.abs(G(roots) - ks) < 1e-8
    return roots[ok], int(np.count_nonzero(~ok))


@lru_cache(maxsize=64)
def _domain(sys, theta, p_max):
    orbits, seen, skipped = [], set(), 0
    for p in range(1, p_max + 1):
        roots, bad = _periodic_roots(sys, theta, p)
        skipped += bad
        for x in roots:
            pts = _orbit(sys.f, theta, x, p)
            minimal = next(q for q in range(1, p + 1) if p % q == 0 and _circ(pts[q], pts[0]) < 1e-9)
            if minimal != p:
                continue
            key = int(round(pts[:p].min() * 1e9))
            if seen.intersection((key - 1, key, key + 1)):
                continue
            seen.add(key)
            avg = np.array([float(np.mean(a(pts[:p], theta))) for a in sys.A])
            orbits.append(PeriodicOrbit(p, pts[:p], avg))
    return orbits, skipped


def _circ(a, b):
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def _hull(points):
    d = points.shape[1]
    if d == 1:
        lo, hi = points[:, 0].min(), points[:, 0].max()
        return np.array([[1.0, -hi], [-1.0, lo]]), np.array([[lo], [hi]])
    from scipy.spatial import ConvexHull, QhullError
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise NumericDomainError(f"periodic averages span a degenerate hull: {exc}") from exc
    return hull.equations, points[hull.vertices]


def domain_estimate(sys, theta, p_max=10) -> DomainEstimate:
    """Averages of A over all periodic orbits of f(., theta) up to period p_max, and their hull."""
    if p_max < 1:
        raise PreconditionError("p_max must be at least 1")
    if sys.degree ** p_max > 4096:
        raise PreconditionError("degree**p_max above 4096 periodic points")
    orbits, skipped = _domain(sys, float(theta) % 1.0, int(p_max))
    pts = np.array([o.average for o in orbits])
    eqs, verts = _hull(pts)
    return DomainEstimate(list(orbits), eqs, skipped, verts)


def rate_Z_reg(sys, b, theta, eps_tilde, disc=FOURIER_128, p_max=10):
    """(Z_plus, Z_minus): Z_plus is INFINITE in the eps_tilde collar of the domain, Z_minus is
    Z at the point pulled towards A_bar until it leaves the collar."""
    if not 0.0 < eps_tilde < 0.5:
        raise PreconditionError("eps_tilde must lie in (0, 0.5)")
    b = _check_b(sys, b)
    dom = domain_estimate(sys, theta, p_max)
    abar = mean_field(sys, theta, disc)
    if dom.distance(b) >= eps_tilde:
        z = rate_Z(sys, b, theta, disc)
        return z, z
    if dom.distance(abar) < eps_tilde:
        raise PreconditionError("the collar covers the mean; reduce eps_tilde")
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if dom.distance(b + mid * (abar - b)) >= eps_tilde:
            hi = mid
        else:
            lo = mid
    return INFINITE, rate_Z(sys, b + hi * (abar - b), theta, disc)


# ------------------------------------------------------------------- paths

@dataclass(frozen=True)
class PathSpec:
    """Piecewise-linear path through (t_i, gamma(t_i)) with gamma(0) = 0."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or len(t) < 2 or len(v) != len(t):
            raise ConfigError("a path needs at least two breakpoints with one value each")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise ConfigError("breakpoints must start at 0 and increase strictly")
        if np.any(v[0] != 0.0) or not np.all(np.isfinite(v)):
            raise ConfigError("a path must start at 0 and be finite")
        object.__setattr__(self, "breakpoints", tuple(t))
        object.__setattr__(self, "values", tuple(map(tuple, v)))

    @classmethod
    def line(cls, slope, T):
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        return cls((0.0, float(T)), (np.zeros_like(slope), slope * T))

    @property
    def t(self):
        return np.asarray(self.breakpoints)

    @property
    def v(self):
        return np.asarray(self.values)

    @property
    def T(self):
        return self.breakpoints[-1]

    @property
    def d(self):
        return len(self.values[0])

    def slopes(self):
        return np.diff(self.v, axis=0) / np.diff(self.t)[:, None]

    def __call__(self, s):
        return np.stack([np.interp(s, self.t, self.v[:, i]) for i in range(self.d)], axis=-1)


def _validate_path(sys, gamma):
    if gamma.d != sys.d:
        raise ConfigError(f"path has {gamma.d} components, system has {sys.d}")
    lip = float(np.max(np.linalg.norm(gamma.slopes(), axis=1)))
    if lip > 2.0 * float(np.linalg.norm(sys.sup_A)) + 1e-12:
        raise ConfigError(f"path Lipschitz constant {lip:.4g} exceeds 2 sup|A|")


def _segments(gamma, quad_dt):
    """Per segment: node times (including both ends) and the constant slope."""
    if not quad_dt > 0:
        raise PreconditionError("quad_dt must be positive")
    grid = np.arange(0.0, gamma.T, quad_dt)
    out = []
    for (a, b), slope in zip(zip(gamma.t[:-1], gamma.t[1:]), gamma.slopes()):
        inner = grid[(grid > a) & (grid < b)]
        out.append((np.concatenate([[a], inner, [b]]), slope))
    return out


def _theta_reference(sys, gamma, theta0, mode, disc):
    if mode == "frozen":
        path = solve_averaged(sys, theta0, gamma.T, min(1e-3, gamma.T), disc)
        return lambda s: np.interp(s, path.t_grid, path.theta_bar)
    if mode == "moving":
        return lambda s: theta0 + gamma(s)[..., 0]
    raise ConfigError(f"mode must be 'frozen' or 'moving', got {mode!r}")


def _key(*arrays):
    return tuple(round(float(x), 12) for a in arrays for x in np.atleast_1d(a))


def path_rate(sys, gamma: PathSpec, theta0, quad_dt=1e-2, mode="frozen", disc=FOURIER_128) -> float:
    """Trapezoid of Z(gamma'(s), theta_ref(s)); INFINITE if any node leaves the domain."""
    _validate_path(sys, gamma)
    theta_ref = _theta_reference(sys, gamma, theta0, mode, disc)
    cache = {}
    total = 0.0
    for ts, slope in _segments(gamma, quad_dt):
        vals = np.empty(len(ts))
        for i, th in enumerate(theta_ref(ts)):
            k = _key(slope, th % 1.0)
            if k not in cache:
                cache[k] = rate_Z(sys, slope, th % 1.0, disc)
            vals[i] = cache[k]
            if is_infinite(cache[k]):
                return INFINITE
        total += float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)))
    return total


def rate_quadratic(sys, gamma: PathSpec, theta0, quad_dt=1e-2, disc=FOURIER_128) -> float:
    """1/2 int <gamma' - A_bar, Sigma^-2 (gamma' - A_bar)> along the frozen averaged flow."""
    _validate_path(sys, gamma)
    theta_ref = _theta_reference(sys, gamma, theta0, "frozen", disc)
    cache = {}
    total = 0.0
    for ts, slope in _segments(gamma, quad_dt):
        vals = np.empty(len(ts))
        for i, th in enumerate(theta_ref(ts) % 1.0):
            k = _key(th)
            if k not in cache:
                sig2 = green_kubo(sys, th, disc=disc)
                if sig2[0, 0] < 1e-8 or np.min(np.linalg.eigvalsh(sig2)) < 1e-8:
                    raise DegenerateVarianceError(
                        f"Sigma^2 is singular at theta={th:.6g}; the observable looks like a coboundary")
                cache[k] = (mean_field(sys, th, disc), sig2)
            abar, sig2 = cache[k]
            dev = slope - abar
            vals[i] = 0.5 * float(dev @ np.linalg.solve(sig2, dev))
        total += float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)))
    return total


def mgf_predict(sys, sigma_path, theta0, T, dt=1e-3, disc=FOURIER_128) -> float:
    """int_0^T <sigma(s), A_bar(theta_bar(s))> + chi_hat(sigma(s), theta_bar(s)) ds."""
    if T < 0:
        raise PreconditionError("T must be nonnegative")
    if T == 0:
        return 0.0
    if not callable(sigma_path):
        const = np.atleast_1d(np.asarray(sigma_path, dtype=float))
        sigma_path = lambda s: const  # noqa: E731
    path = solve_averaged(sys, theta0, T, min(dt, 1e-3), disc)
    n = max(1, math.ceil(T / dt - 1e-9))
    ts = np.linspace(0.0, T, n + 1)
    thetas = np.interp(ts, path.t_grid, path.theta_bar) % 1.0
    cache = {}
    vals = np.empty(len(ts))
    for i, (s, th) in enumerate(zip(ts, thetas)):
        sig = np.atleast_1d(np.asarray(sigma_path(s), dtype=float))
        if sig.shape != (sys.d,):
            raise ConfigError(f"sigma path must return {sys.d} components")
        if np.linalg.norm(sig) > 5.0:
            raise PreconditionError("sup |sigma| exceeds 5")
        k = _key(sig, th)
        if k not in cache:
            cache[k] = float(sig @ mean_field(sys, th, disc)) + chi_hat(sys, th, sig, disc)
        vals[i] = cache[k]
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)))


# -------------------------------------------------------------- rate table

@dataclass(frozen=True)
class RateTable:
    theta_grid: np.ndarray
    b_grid: np.ndarray
    Z_values: np.ndarray
    sigma_star: np.ndarray
    converged: np.ndarray


def rate_table(sys, theta_grid, b_grid, disc=FOURIER_128, threads=1) -> RateTable:
    """Z and sigma* on a (theta, b) grid; b_grid is (nb,) for d = 1 or (nb, d)."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    b_grid = np.asarray(b_grid, dtype=float)
    bs = b_grid[:, None] if b_grid.ndim == 1 else b_grid

    def row(theta):
        abar = mean_field(sys, theta, disc)
        z = np.empty(len(bs))
        sig = np.full((len(bs), sys.d), np.nan)
        conv = np.zeros(len(bs), dtype=bool)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for j, b in enumerate(bs):
                res = stationary_sigma(sys, b, theta, disc)
                z[j] = _z_from(res, _check_b(sys, b), abar)
                conv[j] = res.converged
                if res.sigma is not None:
                    sig[j] = res.sigma
        return z, sig, conv

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(row, theta_grid))
    else:
        rows = [row(t) for t in theta_grid]
    Z = np.array([r[0] for r in rows])
    S = np.array([r[1] for r in rows])
    C = np.array([r[2] for r in rows])
    if b_grid.ndim == 1:
        S = S[..., 0]
    for arr in (theta_grid, b_grid, Z, S, C):
        arr.setflags(write=False)
    return RateTable(theta_grid, b_grid, Z, S, C)
