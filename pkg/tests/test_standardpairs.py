import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastslow import preset
from fastslow.errors import DecompositionError, PreconditionError
from fastslow.standardpairs import (ZERO_POTENTIAL, PairPotential, StandardFamily, default_bounds,
                                    family_measure, iterate_family, pushforward_decompose)

EPS = 1e-2


@pytest.fixture(scope="module")
def sys():
    return preset("doubling-cos", eps=EPS)


def _start(sys, phi=ZERO_POTENTIAL, a=0.3, theta0=0.25, length=None):
    bd = default_bounds(sys, [phi])
    return StandardFamily.single(a, length or bd.delta, theta0, bd, eps=sys.eps)


def test_single_pair_closed_form(sys):
    a, b = 0.3, 0.35
    fam = StandardFamily.single(a, b - a, 0.1, default_bounds(sys), eps=EPS)
    exact = (np.exp(2j * np.pi * b) - np.exp(2j * np.pi * a)) / (2j * np.pi * (b - a))
    assert abs(family_measure(fam, lambda x, t: np.exp(2j * np.pi * x)) - exact) <= 1e-10


@pytest.mark.parametrize("phi", [ZERO_POTENTIAL, PairPotential("cos(2*pi*x)", 0.1),
                                 PairPotential("cos(2*pi*x) + 0.5*sin(2*pi*theta)", 0.5j)],
                         ids=["zero", "real", "imaginary"])
def test_measure_identity(sys, phi):
    fam = _start(sys, phi)
    out = pushforward_decompose(fam, phi, sys)
    g = lambda x, t: np.exp(2j * np.pi * x)  # noqa: E731

    def pulled(x, t):
        return np.exp(phi(x, t)) * g(sys.f(x, t), t + EPS * sys.omega(x, t))

    assert abs(family_measure(out, g) - family_measure(fam, pulled)) <= 1e-8


def test_piece_count_and_lengths(sys):
    fam = _start(sys)
    delta = fam.bounds.delta
    out = pushforward_decompose(fam, ZERO_POTENTIAL, sys)
    assert len(out) in (2, 3)
    length = out.b - out.a
    assert np.all(length >= delta / 2 - 1e-12) and np.all(length <= delta + 1e-12)


def test_birkhoff_identity(sys):
    phi = PairPotential("cos(2*pi*x)", 0.1)
    fam = _start(sys, phi)
    out = iterate_family(fam, phi, 3, sys)
    # direct midpoint quadrature of e^{S_3 phi} over the initial pair
    a, b = fam.a[0], fam.b[0]
    x = a + (np.arange(100_000) + 0.5) / 100_000 * (b - a)
    th = np.full_like(x, 0.25)
    s = np.zeros_like(x)
    for _ in range(3):
        s += phi(x, th)
        x, th = sys.f(x, th) % 1.0, th + EPS * sys.omega(x, th)
    direct = np.mean(np.exp(s))
    assert abs(family_measure(out, lambda x, t: np.ones_like(x)) - direct) <= 1e-6


def test_iteration_preserves_probability(sys):
    out = iterate_family(_start(sys), ZERO_POTENTIAL, 5, sys)
    assert out.is_real
    assert abs(np.sum(out.nu) - 1.0) <= 1e-7
    assert all(v <= 1.0 for v in out.check().values())


def test_twisted_weights_decay(sys):
    phi = PairPotential(sys.omega, 5j)
    fam = _start(sys, phi)
    sums = []
    for _ in range(10):
        fam = pushforward_decompose(fam, phi, sys)
        sums.append(abs(np.sum(fam.nu)))
    assert max(sums) <= 1 + 1e-8
    assert all(b <= a + 1e-3 for a, b in zip(sums, sums[1:]))


def test_complex_needs_small_pairs(sys):
    phi = PairPotential(sys.omega, 5j)
    fam = _start(sys, ZERO_POTENTIAL)
    with pytest.raises(PreconditionError):
        pushforward_decompose(fam, phi, sys)


def test_eps_mismatch(sys):
    with pytest.raises(PreconditionError):
        pushforward_decompose(_start(sys), ZERO_POTENTIAL, preset("doubling-cos", eps=0.02))


def test_validate_rejects_long_pairs(sys):
    bd = default_bounds(sys)
    with pytest.raises(DecompositionError):
        StandardFamily.single(0.1, 3 * bd.delta, 0.0, bd, eps=EPS).validate()


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.0, 1.0), st.floats(-0.5, 0.5))
def test_real_in_real_out(a, theta0, amp):
    s = preset("perturbed-doubling", eps=EPS)
    phi = PairPotential("sin(2*pi*(x + theta))", amp)
    fam = _start(s, phi, a=a, theta0=theta0)
    out = pushforward_decompose(fam, phi, s)
    assert out.is_real
    g = lambda x, t: np.cos(2 * np.pi * t) + np.sin(2 * np.pi * x) ** 2  # noqa: E731
    pulled = lambda x, t: np.exp(phi(x, t)) * g(s.f(x, t), t + EPS * s.omega(x, t))  # noqa: E731
    assert abs(family_measure(out, g) - family_measure(fam, pulled)) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.05, 1.5))
def test_density_integrates_to_one(a, k):
    s = preset("doubling-cos", eps=EPS)
    bd = default_bounds(s)
    fam = StandardFamily.single(a, bd.delta, 0.5, bd, eps=EPS, rho=lambda x: 1.0 + 0.1 * np.sin(k * x))
    out = pushforward_decompose(fam, ZERO_POTENTIAL, s)
    assert math.isclose(family_measure(out, lambda x, t: np.ones_like(x)).real, 1.0, abs_tol=1e-12)
    assert out.check()["mass"] <= 1.0
