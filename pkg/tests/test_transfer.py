import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastslow import preset
from fastslow.errors import ConfigError, PreconditionError
from fastslow.transfer import (Discretization, OperatorSpec, Potential, build_operator, chi_derivative_check,
                               chi_gradient, chi_hat, leading_eigentriple, spectral_radius_complex,
                               uni_estimate, zero_eigendata)


def test_cosine_is_annihilated(doubling):
    op = build_operator(doubling, OperatorSpec(0.5))
    x = op.frame.grid
    assert np.max(np.abs(op.matrix @ np.cos(2 * np.pi * x))) <= 1e-10


def test_coboundary_twist_has_unit_modulus(coboundary):
    # at theta = 0 the fast observable is exactly g o f - g with g = sin(2 pi x)/(2 pi)
    data = leading_eigentriple(build_operator(coboundary, OperatorSpec(0.0, Potential.complex(7.0))))
    assert abs(abs(data.eigenvalue) - 1.0) <= 1e-6


@pytest.mark.parametrize("kind, size", [("fourier", 128), ("ulam", 256)])
def test_zero_potential_eigentriple(doubling, kind, size):
    data = zero_eigendata(doubling, 0.3, Discretization(kind, size))
    assert abs(data.chi) <= 1e-8
    assert np.max(np.abs(data.h - 1.0)) <= 1e-8
    assert data.gap <= 0.5


def test_small_real_potential(doubling):
    assert chi_hat(doubling, 0.5, 0.1) == pytest.approx(0.1 ** 2 / 4, abs=3e-4)


def test_quadratic_regime_at_0_2(doubling):
    assert chi_hat(doubling, 0.5, 0.2) == pytest.approx(0.01, abs=1e-3)


# log E exp(sigma S_{n+1}) - log E exp(sigma S_n) for S_n = sum_{k<n} cos(2 pi 2^k x),
# by a 2^22-point midpoint rule at n = 15; independent of the operator code
@pytest.mark.parametrize("sigma, oracle", [(0.1, 0.002629633807659064), (0.2, 0.011072208390829813),
                                           (-0.3, 0.019497548099705164)])
def test_chi_hat_against_birkhoff_quadrature(doubling, sigma, oracle):
    assert chi_hat(doubling, 0.5, sigma) == pytest.approx(oracle, abs=1e-12)


def test_variance_formula_at_zero(doubling):
    chk = chi_derivative_check(doubling, 0.5, np.zeros(1))
    assert abs(chk.formula2[0, 0] - 0.5) <= 1e-8


@pytest.mark.parametrize("name", ["doubling-cos", "perturbed-doubling", "coboundary-control"])
def test_derivative_identities(name):
    chk = chi_derivative_check(preset(name), 0.5, np.array([0.3]))
    assert np.max(np.abs(chk.fd1 - chk.formula1)) <= 1e-5
    assert np.max(np.abs(chk.fd2 - chk.formula2)) <= 1e-3


def test_two_observables_hessian_symmetric():
    s = preset("perturbed-doubling", extra=("sin(2*pi*x)",))
    _, grad, hess = chi_gradient(s, 0.2, np.array([0.1, -0.2]))
    assert grad.shape == (2,)
    assert np.allclose(hess, hess.T, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(hess) > 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.0, 1.0))
def test_chi_hat_convex(a, b, theta):
    s = preset("perturbed-doubling")
    mid = chi_hat(s, theta, 0.5 * (a + b))
    assert mid <= 0.5 * (chi_hat(s, theta, a) + chi_hat(s, theta, b)) + 1e-9
    assert isinstance(mid, float)


def test_chi_hat_vanishes_at_zero(perturbed):
    assert abs(chi_hat(perturbed, 0.7, 0.0)) <= 1e-12


def test_dolgopyat_contrast(doubling, coboundary):
    assert spectral_radius_complex(coboundary, 0.5, 10.0) >= 0.999
    assert spectral_radius_complex(doubling, 0.5, 10.0, n=40) <= 0.99


def test_radius_needs_enough_steps(doubling):
    with pytest.raises(PreconditionError):
        spectral_radius_complex(doubling, 0.5, 50.0, n=5)


def test_uni_contrast(doubling, coboundary):
    assert uni_estimate(coboundary, 0.5, 10) <= 1e-2
    assert uni_estimate(doubling, 0.5, 8) >= 0.1


@pytest.mark.parametrize("kind, size", [("chebyshev", 128), ("fourier", 100), ("ulam", 16)])
def test_bad_discretization(kind, size):
    with pytest.raises(ConfigError):
        Discretization(kind, size)
