import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastslow import build_system, preset
from fastslow.errors import InvalidDensityError, PreconditionError, ResourceError
from fastslow.montecarlo import (averaging_error, ensemble_paths, etaref_process, llt_check, mgf_probe,
                                 moderate_probe, sample_initial, wilson_interval)
from fastslow.statistics import solve_averaged


def test_sample_initial_moment():
    x = sample_initial("1 + 0.5*sin(2*pi*x)", 100_000, seed=3)
    exact = 0.5 - 1 / (4 * math.pi)
    assert abs(x.mean() - exact) <= 3 * x.std() / math.sqrt(len(x))
    assert x.min() >= 0.0 and x.max() < 1.0


def test_negative_density():
    with pytest.raises(InvalidDensityError):
        sample_initial("cos(2*pi*x)", 10)


def test_coarse_averaging(doubling):
    s = doubling.with_eps(1e-2)
    ens = ensemble_paths(s, 0.25, "uniform", 1.0, 1000, seed=1)
    rep = averaging_error(ens, solve_averaged(s, 0.25, 1.0, 1e-2))
    assert rep.quantiles[0.5] <= 0.5


def test_averaging_improves(doubling):
    med = []
    for eps in (1e-2, 1e-3):
        s = doubling.with_eps(eps)
        ens = ensemble_paths(s, 0.25, "uniform", 1.0, 300, seed=2)
        med.append(averaging_error(ens, solve_averaged(s, 0.25, 1.0, 1e-3)).quantiles[0.5])
    assert med[1] < med[0]


def test_zero_eps_paths_are_constant(doubling):
    ens = ensemble_paths(doubling, 0.4, "uniform", 1.0, 5)
    assert np.all(ens.theta == 0.4)


def test_ensemble_independent_of_threads(perturbed):
    s = perturbed.with_eps(1e-2)
    a = ensemble_paths(s, 0.1, "uniform", 0.5, 64, seed=8)
    b = ensemble_paths(s, 0.1, "uniform", 0.5, 64, seed=8, threads=3)
    assert np.array_equal(a.z, b.z)


def test_budget(doubling):
    with pytest.raises(ResourceError):
        ensemble_paths(doubling.with_eps(1e-6), 0.1, "uniform", 1.0, 10_000)


def test_etaref_exact_without_drift():
    # omega independent of theta: omega_bar = 0 and H is the deviation itself
    s = build_system("2*x", "cos(2*pi*x)")
    for eps in (1e-3, 5e-4):
        assert etaref_process(s.with_eps(eps), 0.3, "uniform", 0.5, 500, seed=1).max_abs_diff <= 1e-12


def test_etaref_bound_constant_stable(doubling):
    c = []
    for eps in (1e-3, 5e-4):
        r = etaref_process(doubling.with_eps(eps), 0.3, "uniform", 0.5, 1000, seed=1)
        c.append(np.max(np.abs(r.H - r.delta) / r.bound_term))
    assert abs(c[1] / c[0] - 1) <= 0.3


def test_etaref_scaling(doubling):
    for eps in (1e-3, 1e-4):
        r = etaref_process(doubling.with_eps(eps), 0.3, "uniform", 0.5, 1000, seed=1)
        assert np.quantile(np.abs(r.H - r.delta) / eps ** 1.2, 0.99) <= 5.0


def test_coboundary_fluctuations_concentrate(coboundary):
    rep = llt_check(coboundary.with_eps(1e-4), 0.5, 1.0, n_paths=2000, seed=5)
    assert rep.variance_ratio == math.inf or rep.variance_target <= 1e-6
    assert rep.stderr ** 2 * 2000 <= 1e-2


def test_llt_small_run(doubling):
    rep = llt_check(doubling.with_eps(1e-3), 0.5, 1.0, n_paths=20_000, seed=6)
    assert rep.ks <= 0.03
    assert 0.93 <= rep.variance_ratio <= 1.07
    assert rep.density.shape == rep.predicted.shape == (64,)


@given(st.integers(0, 1000), st.integers(1, 1000))
def test_wilson_contains_estimate_and_shrinks(hits, n):
    hits = min(hits, n)
    lo, hi = wilson_interval(hits, n)
    assert 0.0 <= lo <= hits / n <= hi <= 1.0
    lo4, hi4 = wilson_interval(4 * hits, 4 * n)
    assert hi4 - lo4 <= hi - lo + 1e-12


def test_moderate_probe_rows(doubling):
    rows = moderate_probe(doubling, 0.5, 1.0, 0.4, [1e-2], 0.2, 2000, seed=1)
    r = rows[0]
    assert r.target == pytest.approx(0.2, rel=1e-6)
    assert r.ci[0] <= r.p_hat <= r.ci[1]
    assert r.scaled >= 0.0


def test_moderate_beta_range(doubling):
    with pytest.raises(PreconditionError):
        moderate_probe(doubling, 0.5, 1.0, 0.6, [1e-2], 0.2, 10)


def test_mgf_probe_small(doubling):
    rep = mgf_probe(doubling.with_eps(1e-2), 0.5, 0.1, 0.5, 4000, seed=2)
    assert not rep.low_ess
    assert rep.predicted == pytest.approx(0.5 * 0.002629633807659064, abs=1e-10)
    with pytest.raises(PreconditionError):
        mgf_probe(doubling.with_eps(1e-2), 0.5, 0.3, 0.5, 10)
