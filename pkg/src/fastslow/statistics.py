"""Averaged dynamics, Green-Kubo variances and the diffusive limit of the deviation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng
from .errors import NumericDomainError, PreconditionError
from .transfer import FOURIER_128, mean_field, tilted_moments

TABLE_NODES = 256


def averaged_field(sys, theta, disc=FOURIER_128):
    """A_bar(theta); component 0 is omega_bar(theta)."""
    return mean_field(sys, theta, disc)


def green_kubo(sys, theta, tol=1e-12, disc=FOURIER_128):
    """Sigma^2(theta) = mu(A_hat A_hat^T) + sum_m [C_m + C_m^T], C_m = mu(A_hat o f^m A_hat^T)."""
    _, sig2 = tilted_moments(sys, theta, np.zeros(sys.d), disc, tol=tol)
    if np.min(np.linalg.eigvalsh(sig2)) < -1e-8:
        raise NumericDomainError("Green-Kubo matrix is not positive semidefinite")
    return sig2


class AveragedTable:
    """Periodic cubic interpolants of A_bar, omega_bar' and Sigma^2 on a theta grid."""

    def __init__(self, sys, disc=FOURIER_128, nodes=TABLE_NODES):
        self.sys = sys
        self.disc = disc
        self.nodes = np.arange(nodes + 1) / nodes
        vals = np.array([mean_field(sys, t, disc) for t in self.nodes[:-1]])
        vals = np.vstack([vals, vals[:1]])
        self._abar = CubicSpline(self.nodes, vals, bc_type="periodic")
        w = vals[:-1, 0]
        dw = (np.roll(w, -1) - np.roll(w, 1)) * nodes / 2.0
        self._dw = CubicSpline(self.nodes, np.append(dw, dw[0]), bc_type="periodic")
        self._sigma2 = None

    def abar(self, theta):
        return self._abar(np.asarray(theta) % 1.0)

    def omega_bar(self, theta):
        return self._abar(np.asarray(theta) % 1.0)[..., 0]

    def omega_bar_prime(self, theta):
        return self._dw(np.asarray(theta) % 1.0)

    def sigma2(self, theta):
        """Interpolated d x d Green-Kubo matrix."""
        if self._sigma2 is None:
            tab = np.array([green_kubo(self.sys, t, disc=self.disc) for t in self.nodes[:-1]])
            tab = np.concatenate([tab, tab[:1]])
            self._sigma2 = CubicSpline(self.nodes, tab, bc_type="periodic")
        return self._sigma2(np.asarray(theta) % 1.0)


_TABLES = {}


def averaged_table(sys, disc=FOURIER_128) -> AveragedTable:
    # the tables depend only on f and A, not on eps
    key = (sys.f, sys.A, sys.degree, disc)
    if key not in _TABLES:
        if len(_TABLES) >= 32:
            _TABLES.pop(next(iter(_TABLES)))
        _TABLES[key] = AveragedTable(sys, disc)
    return _TABLES[key]


@dataclass
class AveragedPath:
    t_grid: np.ndarray
    theta_bar: np.ndarray
    zeta_bar: np.ndarray
    error_estimate: float = 0.0


def _rk4(table, theta0, ts):
    d = table.sys.d
    y = np.zeros((len(ts), d))
    y[0, 0] = theta0
    rhs = lambda z: table.abar(z[0])  # noqa: E731
    for k in range(len(ts) - 1):
        h = ts[k + 1] - ts[k]
        k1 = rhs(y[k])
        k2 = rhs(y[k] + 0.5 * h * k1)
        k3 = rhs(y[k] + 0.5 * h * k2)
        k4 = rhs(y[k] + h * k3)
        y[k + 1] = y[k] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _time_grid(T, dt):
    n = max(1, math.ceil(T / dt - 1e-9))
    ts = np.arange(n + 1) * dt
    ts[-1] = T
    return ts


def solve_averaged(sys, theta0, T, dt=1e-3, disc=FOURIER_128, tol=1e-8, max_refine=6) -> AveragedPath:
    """RK4 for theta' = omega_bar(theta) (and zeta' = A_bar(theta)) with step-halving control."""
    if dt > 1e-2 or dt <= 0:
        raise PreconditionError("averaged ODE needs 0 < dt <= 1e-2")
    if T < 0:
        raise PreconditionError("T must be nonnegative")
    if T == 0:
        return AveragedPath(np.zeros(1), np.array([float(theta0)]), np.zeros((1, sys.d - 1)))
    table = averaged_table(sys, disc)
    ts = _time_grid(T, dt)
    sub = 1
    for _ in range(max_refine + 1):
        coarse = _rk4(table, theta0, _refine(ts, sub))
        fine = _rk4(table, theta0, _refine(ts, 2 * sub))
        err = float(np.max(np.abs(fine[::2] - coarse))) * 16.0 / 15.0
        if err <= tol * max(T, 1.0):
            y = fine[:: 2 * sub]
            return AveragedPath(ts, y[:, 0], y[:, 1:], err)
        sub *= 2
    raise NumericDomainError(f"averaged ODE error {err:.3g} above tolerance after refinement")


def _refine(ts, sub):
    if sub == 1:
        return ts
    frac = np.arange(sub) / sub
    inner = (ts[:-1, None] + np.diff(ts)[:, None] * frac[None, :]).ravel()
    return np.append(inner, ts[-1])


@dataclass
class VarianceProfile:
    t_grid: np.ndarray
    var_t: np.ndarray
    sigma2_of_theta: object


def variance_profile(sys, theta0, T, dt=1e-3, disc=FOURIER_128, path=None) -> VarianceProfile:
    """Var_t^2 = int_0^t exp(2 int_s^t omega_bar'(theta_bar)) Sigma^2_11(theta_bar(s)) ds."""
    path = path or solve_averaged(sys, theta0, T, dt, disc)
    table = averaged_table(sys, disc)
    t = path.t_grid
    if len(t) == 1:
        return VarianceProfile(t, np.zeros(1), table.sigma2)
    g = table.omega_bar_prime(path.theta_bar)
    G = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
    s2 = np.maximum(table.sigma2(path.theta_bar)[:, 0, 0], 0.0)
    integrand = np.exp(-2.0 * G) * s2
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    return VarianceProfile(t, np.maximum(np.exp(2.0 * G) * inner, 0.0), table.sigma2)


def _chunks(n, size):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def sde_reference(sys, theta0, T, dt=1e-3, n_paths=10_000, seed=0, threads=1,
                  disc=FOURIER_128, chunk=25_000) -> np.ndarray:
    """Euler-Maruyama samples of Delta(T) for d Delta = omega_bar' Delta dt + Sigma dB."""
    if dt > 1e-3 or dt <= 0:
        raise PreconditionError("sde_reference needs 0 < dt <= 1e-3")
    path = solve_averaged(sys, theta0, T, min(dt, 1e-3), disc)
    table = averaged_table(sys, disc)
    ts = _time_grid(T, dt) if T > 0 else np.zeros(1)
    th = np.interp(ts, path.t_grid, path.theta_bar)
    drift = table.omega_bar_prime(th)
    diff = np.sqrt(np.maximum(table.sigma2(th)[:, 0, 0], 0.0))

    def run(bounds):
        a, b = bounds
        keys = rng.stream_keys(seed, np.arange(a, b))
        x = np.zeros(b - a)
        for k in range(len(ts) - 1):
            h = ts[k + 1] - ts[k]
            x = x + drift[k] * x * h + diff[k] * math.sqrt(h) * rng.normal(keys, k)
        return x

    parts = _chunks(n_paths, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(run, parts))
    else:
        out = [run(p) for p in parts]
    if not all(np.all(np.isfinite(o)) for o in out):
        raise NumericDomainError("non-finite SDE sample")
    return np.concatenate(out) if out else np.zeros(0)
