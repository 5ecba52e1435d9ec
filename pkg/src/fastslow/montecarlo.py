"""Ensemble simulation and the empirical checks built on it.

Path i draws its initial point from counter 0 and its step-k dither from counter k + 1
of the key (seed, i), so results do not depend on how paths are split into chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .errors import InterfaceError, InvalidDensityError, PreconditionError, ResourceError
from .ldp import mgf_predict
from .standardpairs import StandardPair
from .statistics import averaged_table, solve_averaged, variance_profile
from .system import DITHER, Field, step_many

CDF_BINS = 4096
MAX_STEPS = 10 ** 9
CHUNK = 25_000


# ---------------------------------------------------------------- sampling

def _density_table(density):
    """(edges, cdf) of a density given as 'uniform', an expression, a callable or a pair."""
    if isinstance(density, StandardPair):
        if np.iscomplexobj(density.rho):
            raise InvalidDensityError("cannot sample from a complex density")
        lo, hi = density.a, density.b
        fn = lambda x: density.rho_at(x)  # noqa: E731
    else:
        lo, hi = 0.0, 1.0
        if isinstance(density, str):
            fld = Field(density)
            fn = lambda x: fld(x, 0.0)  # noqa: E731
        elif isinstance(density, Field):
            fn = lambda x: density(x, 0.0)  # noqa: E731
        elif callable(density):
            fn = density
        else:
            raise InvalidDensityError(f"unsupported density {density!r}")
    edges = np.linspace(lo, hi, CDF_BINS + 1)
    vals = np.asarray(fn(edges), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidDensityError("density is negative or not finite")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(edges))])
    if cdf[-1] <= 0:
        raise InvalidDensityError("density has zero mass")
    return edges, cdf / cdf[-1]


def _sample(density, keys):
    u = rng.uniform(keys, 0)
    if isinstance(density, str) and density == "uniform":
        return u
    edges, cdf = _density_table(density)
    return np.interp(u, cdf, edges) % 1.0


def sample_initial(density, n, seed=0):
    """Inverse-CDF samples on the circle; density is 'uniform', an expression in x,
    a callable on [0, 1) or a real standard pair."""
    if n < 0:
        raise PreconditionError("n must be nonnegative")
    return _sample(density, rng.stream_keys(seed, np.arange(n)))


# -------------------------------------------------------------- simulation

def _chunks(n, size=CHUNK):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def _map_chunks(fn, n_paths, threads):
    parts = _chunks(n_paths)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, parts))
    return [fn(p) for p in parts]


def _start(sys, theta0, density, seed, a, b):
    keys = rng.stream_keys(seed, np.arange(a, b))
    x = _sample(density, keys)
    z = np.zeros((sys.d, b - a))
    z[0] = theta0
    return keys, x, z


def _noise(keys, k, dither):
    return dither * rng.uniform(keys, k + 1) if dither else None


def _check_budget(n_paths, steps):
    if n_paths * steps > MAX_STEPS:
        raise ResourceError(f"{n_paths} paths x {steps} steps exceeds {MAX_STEPS} steps")


@dataclass
class PathEnsemble:
    eps: float
    T: float
    theta0: float
    n_paths: int
    seed: int
    t_grid: np.ndarray
    z: np.ndarray  # (n_paths, len(t_grid), d)

    @property
    def theta(self):
        return self.z[..., 0]


def _output_grid(T, out_dt):
    n = max(0, int(math.floor(T / out_dt + 1e-9)))
    t = np.arange(n + 1) * out_dt
    if T - t[-1] > 1e-12:
        t = np.append(t, T)
    return t


def ensemble_paths(sys, theta0, density, T, n_paths, seed=0, out_dt=1e-2, threads=1,
                   dither=DITHER) -> PathEnsemble:
    """Piecewise-linear interpolation of z_eps(t) = z at step t/eps, on a uniform output grid."""
    if T < 0 or out_dt <= 0:
        raise PreconditionError("need T >= 0 and out_dt > 0")
    t_grid = _output_grid(T, out_dt) if T > 0 else np.zeros(1)
    eps = sys.eps
    if eps == 0:
        z = np.zeros((n_paths, len(t_grid), sys.d))
        z[..., 0] = theta0
        return PathEnsemble(0.0, T, theta0, n_paths, seed, t_grid, z)
    pos = t_grid / eps
    k = np.floor(pos + 1e-9).astype(int)
    frac = np.where(pos - k > 1e-9, pos - k, 0.0)
    steps = int(np.max(k + (frac > 0)))
    _check_budget(n_paths, steps)

    def run(bounds):
        a, b = bounds
        keys, x, z = _start(sys, theta0, density, seed, a, b)
        out = np.zeros((len(t_grid), sys.d, b - a))
        for j in range(steps + 1):
            out[k == j] += (1.0 - frac[k == j])[:, None, None] * z
            hit = (k + 1 == j) & (frac > 0)
            out[hit] += frac[hit][:, None, None] * z
            if j < steps:
                x, z = step_many(sys, x, z, _noise(keys, j, dither))
        return out.transpose(2, 0, 1)

    parts = _map_chunks(run, n_paths, threads)
    z = np.concatenate(parts) if parts else np.zeros((0, len(t_grid), sys.d))
    return PathEnsemble(eps, T, theta0, n_paths, seed, t_grid, z)


@dataclass
class AveragingReport:
    sup_deviation: np.ndarray
    quantiles: dict


def averaging_error(ens: PathEnsemble, averaged) -> AveragingReport:
    """Per-path sup over the output grid of |theta_eps(t) - theta_bar(t)|."""
    idx = np.searchsorted(averaged.t_grid, ens.t_grid - 1e-9)
    idx = np.minimum(idx, len(averaged.t_grid) - 1)
    if np.any(np.abs(averaged.t_grid[idx] - ens.t_grid) > 1e-9):
        raise InterfaceError("ensemble output grid is not contained in the averaged-path grid")
    dev = np.max(np.abs(ens.theta - averaged.theta_bar[idx][None, :]), axis=1) if ens.n_paths else np.zeros(0)
    q = {p: float(np.quantile(dev, p)) for p in (0.5, 0.9, 0.99)} if len(dev) else {}
    return AveragingReport(dev, q)


def _reference(sys, theta0, n_steps):
    """theta_bar at the step times k * eps, k = 0..n_steps."""
    if n_steps == 0:
        return np.array([float(theta0)])
    path = solve_averaged(sys, theta0, n_steps * sys.eps, min(sys.eps, 1e-2))
    return np.interp(np.arange(n_steps + 1) * sys.eps, path.t_grid, path.theta_bar)


# -------------------------------------------------------------- eta reference

@dataclass
class EtaRefReport:
    k: int
    H: np.ndarray
    delta: np.ndarray
    bound_term: np.ndarray  # k eps^2 + eps * sum_j (Delta_j^2 + eps |Delta_j|)
    max_abs_diff: float


def etaref_process(sys, theta0, density, t, n_paths, seed=0, threads=1, dither=DITHER) -> EtaRefReport:
    """H_{k+1} = exp(eps omega_bar'(theta_bar_k)) H_k + eps omega_hat(x_k, theta_k) next to Delta_k."""
    eps = sys.eps
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    n = int(math.floor(t / eps + 1e-9))
    _check_budget(n_paths, n)
    ref = _reference(sys, theta0, n)
    table = averaged_table(sys)
    growth = np.exp(eps * table.omega_bar_prime(ref))

    def run(bounds):
        a, b = bounds
        keys, x, z = _start(sys, theta0, density, seed, a, b)
        H = np.zeros(b - a)
        acc = np.zeros(b - a)
        for j in range(n):
            d = z[0] - ref[j]
            acc += eps * (d * d + eps * np.abs(d))
            w = sys.omega(x, z[0] % 1.0) - table.omega_bar(z[0])
            H = growth[j] * H + eps * w
            x, z = step_many(sys, x, z, _noise(keys, j, dither))
        return H, z[0] - ref[n], acc

    parts = _map_chunks(run, n_paths, threads)
    H = np.concatenate([p[0] for p in parts])
    D = np.concatenate([p[1] for p in parts])
    B = n * eps ** 2 + np.concatenate([p[2] for p in parts])
    return EtaRefReport(n, H, D, B, float(np.max(np.abs(H - D))) if n_paths else 0.0)


# ----------------------------------------------------------- final deviation

def _final_deviation(sys, theta0, density, n, n_paths, seed, threads, dither, ref=None):
    """Delta at step n for every path (theta unwrapped)."""
    _check_budget(n_paths, n)
    ref = _reference(sys, theta0, n) if ref is None else ref

    def run(bounds):
        a, b = bounds
        keys, x, z = _start(sys, theta0, density, seed, a, b)
        for j in range(n):
            x, z = step_many(sys, x, z, _noise(keys, j, dither))
        return z[0] - ref[n]

    parts = _map_chunks(run, n_paths, threads)
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class LLTReport:
    t: float
    eps: float
    shift: float
    bin_width: float
    edges: np.ndarray
    density: np.ndarray
    predicted: np.ndarray
    ks: float
    variance_ratio: float
    variance_target: float
    mean: float
    stderr: float
    window_count: int
    window_expected: float
    insufficient: bool


def llt_check(sys, theta0, t, shift=0.0, bins=64, n_paths=100_000, seed=0, threads=1,
              density="uniform", dither=DITHER) -> LLTReport:
    """Histogram of Delta_eps(t)/sqrt(eps) against N(0, Var_t^2), plus a window of width eps."""
    eps = sys.eps
    if eps <= 0 or n_paths < 2:
        raise PreconditionError("need eps > 0 and at least two paths")
    n = int(math.floor(t / eps + 1e-9))
    delta = _final_deviation(sys, theta0, density, n, n_paths, seed, threads, dither)
    X = delta / math.sqrt(eps)
    var = float(variance_profile(sys, theta0, n * eps).var_t[-1])
    sd = math.sqrt(var)
    counts, edges = np.histogram(X, bins=bins, range=(float(X.min()), float(X.max())))
    width = float(edges[1] - edges[0])
    dens = counts / (n_paths * width) if width > 0 else np.zeros(bins)
    centres = 0.5 * (edges[1:] + edges[:-1])
    pred = stats.norm.pdf(centres, scale=sd) if sd > 0 else np.zeros(bins)
    ks = float(stats.kstest(X, stats.norm(scale=sd).cdf).statistic) if sd > 0 else 1.0
    centre = shift * math.sqrt(eps)
    window = int(np.count_nonzero(np.abs(delta - centre) <= 0.5 * eps))
    expected = n_paths * eps * stats.norm.pdf(centre, scale=sd * math.sqrt(eps)) if sd > 0 else 0.0
    return LLTReport(n * eps, eps, shift, width, edges, dens, pred, ks,
                     float(np.var(X, ddof=1) / var) if var > 0 else math.inf, var,
                     float(np.mean(X)), float(np.std(X, ddof=1) / math.sqrt(n_paths)),
                     window, float(expected), window < 10)


# ------------------------------------------------------- moderate deviations

def wilson_interval(hits, n, z=1.96):
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the ends equal p exactly at p = 0 or 1; keep rounding from crossing it
    return max(0.0, min(p, mid - half)), min(1.0, max(p, mid + half))


@dataclass
class ModerateRow:
    eps: float
    hits: int
    n_paths: int
    p_hat: float
    ci: tuple
    scaled: float  # -eps^(1-2 beta) log p_hat, or the value at the upper CI end if no hits
    upper_only: bool
    target: float


def moderate_probe(sys, theta0, C_event, beta, eps_list, T, n_paths, seed=0, threads=1,
                   density="uniform", dither=DITHER) -> list:
    """Frequency of |theta_eps(k eps) - theta_bar(k eps)| >= eps^beta C k eps at every step k."""
    if not 0.25 < beta < 0.5:
        raise PreconditionError("beta must lie in (1/4, 1/2)")
    sig2 = float(averaged_table(sys).sigma2(theta0)[0, 0])
    target = C_event ** 2 * T / (2.0 * sig2) if sig2 > 0 else math.inf
    rows = []
    for eps in eps_list:
        s = sys.with_eps(eps)
        n = int(math.floor(T / eps + 1e-9))
        _check_budget(n_paths, n)
        ref = _reference(s, theta0, n)
        line = eps ** beta * C_event * eps * np.arange(n + 1)

        def run(bounds, s=s, n=n, ref=ref, line=line):
            a, b = bounds
            keys, x, z = _start(s, theta0, density, seed, a, b)
            alive = np.ones(b - a, dtype=bool)
            for j in range(n):
                x, z = step_many(s, x, z, _noise(keys, j, dither))
                alive &= np.abs(z[0] - ref[j + 1]) >= line[j + 1]
                if not alive.any():
                    break
            return int(np.count_nonzero(alive))

        hits = sum(_map_chunks(run, n_paths, threads))
        lo, hi = wilson_interval(hits, n_paths)
        scale = eps ** (1.0 - 2.0 * beta)
        p = hits / n_paths if n_paths else 0.0
        # adding 0.0 turns -0.0 into 0.0 when every path hits
        scaled = 0.0 - scale * math.log(p if hits else hi)
        rows.append(ModerateRow(eps, hits, n_paths, p, (lo, hi), scaled, hits == 0, target))
    return rows


# --------------------------------------------------------------------- MGF

@dataclass
class MGFReport:
    empirical: float
    predicted: float
    ess: float
    low_ess: bool


def mgf_probe(sys, theta0, sigma, T, n_paths, seed=0, threads=1, density="uniform",
              dither=DITHER) -> MGFReport:
    """eps * log mean exp(sum_k <sigma, A(x_k, theta_k)>) against the chi_hat prediction."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if sigma.shape != (sys.d,):
        raise PreconditionError(f"sigma must have {sys.d} components")
    if np.max(np.abs(sigma)) > 0.2:
        raise PreconditionError("|sigma| must be at most 0.2")
    eps = sys.eps
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    n = int(math.floor(T / eps + 1e-9))
    _check_budget(n_paths, n)

    def run(bounds):
        a, b = bounds
        keys, x, z = _start(sys, theta0, density, seed, a, b)
        L = np.zeros(b - a)
        for j in range(n):
            th = z[0] % 1.0
            for i, A in enumerate(sys.A):
                if sigma[i]:
                    L += sigma[i] * A(x, th)
            x, z = step_many(sys, x, z, _noise(keys, j, dither))
        return L

    L = np.concatenate(_map_chunks(run, n_paths, threads))
    top = float(np.max(L))
    w = np.exp(L - top)
    empirical = eps * (top + math.log(float(np.mean(w))))
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    predicted = mgf_predict(sys, sigma, theta0, T)
    return MGFReport(empirical, predicted, ess, ess < 100)
