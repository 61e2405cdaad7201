import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plgl.fields import (GaugeError, TwoFormField, exterior_derivative, gauge_matrix,
                         gauge_transform, homotopy_operator, jacobian_fd, jacobiator,
                         lie_poisson, pi_gstar, pushforward)
from plgl.lie_core import so3


def one_form(X):
    x, y, z = X.T
    return np.stack([x * y * z + y ** 2, x ** 3 - z, y * z ** 2 + 1.0], -1)


def two_form(X):
    x, y, z = X.T
    S = np.zeros((len(X), 3, 3))
    S[:, 0, 1] = x * y + z ** 2
    S[:, 0, 2] = y ** 3 - x
    S[:, 1, 2] = x * y * z + 2.0
    return S - np.swapaxes(S, 1, 2)


def test_gradient_of_polynomial(rng):
    X = rng.uniform(-1, 1, (5, 3))
    f = lambda Y: Y[:, 0] ** 2 * Y[:, 1] + Y[:, 2] ** 3
    d = exterior_derivative(f, 0, X)
    exact = np.stack([2 * X[:, 0] * X[:, 1], X[:, 0] ** 2, 3 * X[:, 2] ** 2], -1)
    assert np.abs(d - exact).max() < 1e-9


def test_d_of_one_form_is_curl(rng):
    X = rng.uniform(-1, 1, (5, 3))
    d = exterior_derivative(one_form, 1, X)
    x, y, z = X.T
    # (d a)_{ij} = d_i a_j - d_j a_i
    d01 = (3 * x ** 2) - (x * z + 2 * y)
    d02 = 0.0 - x * y
    d12 = z ** 2 - (-1.0)
    assert np.abs(d[:, 0, 1] - d01).max() < 1e-8
    assert np.abs(d[:, 0, 2] - d02).max() < 1e-8
    assert np.abs(d[:, 1, 2] - d12).max() < 1e-8
    assert np.abs(d + np.swapaxes(d, 1, 2)).max() < 1e-12


def test_d_of_two_form_is_divergence(rng):
    # on R^3 a 2-form S corresponds to the vector (S12, -S02, S01) and dS to its divergence
    X = rng.uniform(-1, 1, (5, 3))
    d = exterior_derivative(two_form, 2, X)
    x, y, z = X.T
    # d_x S12 - d_y S02 + d_z S01
    div = y * z - 3 * y ** 2 + 2 * z
    assert np.abs(d[:, 0, 1, 2] - div).max() < 1e-8
    # full antisymmetry
    assert np.abs(d[:, 0, 1, 2] + d[:, 1, 0, 2]).max() < 1e-12
    assert np.abs(d[:, 0, 1, 2] - d[:, 1, 2, 0]).max() < 1e-12


def test_d_squared_vanishes(rng):
    X = rng.uniform(-0.5, 0.5, (4, 3))
    dd = exterior_derivative(lambda Y: exterior_derivative(one_form, 1, Y), 2, X)
    assert np.abs(dd).max() < 1e-9


@pytest.mark.parametrize("alpha,q", [(one_form, 1), (two_form, 2)])
def test_homotopy_formula(rng, alpha, q):
    X = rng.uniform(-0.5, 0.5, (6, 3))
    d_alpha = lambda Y: exterior_derivative(alpha, q, Y)
    hd = homotopy_operator(d_alpha, q + 1)(X)
    dh = exterior_derivative(homotopy_operator(alpha, q), q - 1, X)
    assert np.abs(dh + hd - alpha(X)).max() < 1e-7


def test_homotopy_of_exact_form_is_primitive(rng):
    # h(df) = f - f(0)
    f = lambda Y: np.sin(Y[:, 0]) * Y[:, 1] + Y[:, 2] ** 2 + 3.0
    X = rng.uniform(-0.5, 0.5, (6, 3))
    hdf = homotopy_operator(lambda Y: exterior_derivative(f, 0, Y), 1)(X)
    assert np.abs(hdf - (f(X) - 3.0)).max() < 1e-9


def test_lie_poisson_satisfies_jacobi(rng):
    X = rng.uniform(-1, 1, (10, 3))
    assert np.max(jacobiator(lie_poisson(so3()), X)) < 1e-9


@given(arrays(np.float64, 3, elements=st.floats(-1, 1)))
@settings(max_examples=30, deadline=None)
def test_gauge_involution(mu):
    pi = lie_poisson(so3())
    sig = TwoFormField(lambda Y: 0.3 * two_form(Y), 3)
    neg = TwoFormField(lambda Y: -0.3 * two_form(Y), 3)
    back = gauge_transform(gauge_transform(pi, sig), neg)
    assert np.abs(back(mu) - pi(mu)).max() < 1e-11


def test_gauge_singular_raises():
    P = np.array([[0.0, 1.0], [-1.0, 0.0]])
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])   # I + P S = 0
    with pytest.raises(GaugeError):
        gauge_matrix(P, S)


def test_pushforward_under_linear_map(rng):
    # a Lie algebra automorphism (rotation) preserves the Lie-Poisson structure on so(3)*
    c, s = np.cos(0.4), np.sin(0.4)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    pi = lie_poisson(so3())
    X = rng.uniform(-1, 1, (5, 3))
    out = pushforward(lambda Y: Y @ R.T, pi, X)
    assert np.abs(out - pi(X @ R.T)).max() < 1e-9


def test_jacobian_fd_of_linear_map(rng):
    A = rng.standard_normal((4, 3))
    J = jacobian_fd(lambda Y: Y @ A.T, rng.standard_normal((2, 3)))
    assert np.abs(J - A).max() < 1e-9


def test_pi_gstar_is_linearized_by_lie_poisson(su2):
    # pi_{G*} vanishes at e and its linearization is the Lie-Poisson structure
    pg = pi_gstar(su2.group)
    assert np.abs(pg(np.zeros(3))).max() < 1e-14
    eta = np.array([0.01, -0.02, 0.015])
    t = 1e-3
    lin = (pg(t * eta) - pg(-t * eta)) / (2 * t)
    assert np.abs(lin - su2.lie_poisson(eta)).max() < 1e-8


def test_pi_gstar_is_poisson(su2, rng):
    X = rng.uniform(-0.2, 0.2, (5, 3))
    assert np.max(jacobiator(pi_gstar(su2.group), X)) < 1e-8
