import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plgl.fields import exterior_derivative, jacobian_fd, pi_gstar, pushforward
from plgl.linearization import Numerics, moser_linearize, scaled_pipeline
from plgl.matrix_groups import DomainError

ball = arrays(np.float64, 3, elements=st.floats(-0.1, 0.1))


@pytest.fixture(scope="module")
def flow(su2):
    return moser_linearize(su2.me, 50)


def test_exp_fixes_origin_with_identity_differential(su2):
    me = su2.me
    assert np.abs(me(np.zeros(3))).max() < 1e-15
    assert np.abs(jacobian_fd(me, np.zeros(3)) - np.eye(3)).max() < 1e-9


def test_analytic_jacobian_matches_finite_differences(su2, rng):
    me = su2.me
    X = rng.uniform(-0.2, 0.2, (4, 3))
    assert np.abs(me.jacobian(X) - jacobian_fd(me, X)).max() < 1e-8


@given(ball)
@settings(max_examples=15, deadline=None)
def test_inverse_round_trip(su2, mu):
    me = su2.me
    assert np.abs(me.inverse(me(mu)) - mu).max() < 1e-12


def test_exp_is_equivariant(su2, rng):
    X = rng.uniform(-0.2, 0.2, (8, 3))
    K = rng.uniform(-0.5, 0.5, (8, 3))
    assert su2.me.equivariance_residual(K, X).max() < 1e-12


def test_contraction_identity(su2, rng):
    X = rng.uniform(-0.2, 0.2, (8, 3))
    assert su2.me.contraction_residual(X, rng.standard_normal(3)).max() < 1e-10


def test_sigma_is_a_closed_two_form(su2, rng):
    X = rng.uniform(-0.1, 0.1, (4, 3))
    S = su2.me.sigma(X)
    assert np.abs(S + np.swapaxes(S, 1, 2)).max() < 1e-14
    assert np.abs(exterior_derivative(su2.me.sigma, 2, X)).max() < 1e-7


def test_moser_form_matches_finite_difference_in_t(su2, rng):
    X = rng.uniform(-0.1, 0.1, (4, 3))
    assert np.abs(su2.me.a1(X) - su2.me.moser_form_fd(X)).max() < 1e-9


def test_flow_is_invertible_and_bisection_consistent(flow, rng):
    X = rng.uniform(-0.1, 0.1, (4, 3))
    Y = flow.F1(X)
    assert np.abs(flow.F1_inverse(Y) - X).max() < 1e-12
    assert np.abs(flow.A(Y) - X).max() < 1e-12


def test_linearization_is_poisson(su2, flow, rng):
    X = rng.uniform(-0.1, 0.1, (3, 3))
    L = lambda Y: su2.me(flow.F1(Y))
    push = pushforward(L, su2.lie_poisson, X)
    assert np.abs(push - pi_gstar(su2.group)(L(X))).max() < 1e-8


def test_exp_alone_is_not_poisson(su2, rng):
    # the Moser correction is needed: Exp by itself misses pi_{G*} at second order
    X = np.array([[0.1, -0.05, 0.08]])
    push = pushforward(su2.me, su2.lie_poisson, X)
    assert np.abs(push - pi_gstar(su2.group)(su2.me(X))).max() > 1e-5


def test_trivial_bialgebra_is_exactly_linear(trivial, rng):
    me = trivial.me
    X = rng.uniform(-0.2, 0.2, (5, 3))
    assert np.abs(me(X) - X).max() < 1e-15
    assert me.sigma_vanishes and np.abs(me.sigma(X)).max() == 0.0
    out = moser_linearize(me, 10)
    assert np.all(out.F1(X) == X)


def test_flow_domain_is_enforced(su2, flow):
    with pytest.raises(DomainError):
        flow.F1(np.array([[0.9, 0.0, 0.0]]))


def test_scaled_pipeline_reproduces_sigma_law(su2, rng):
    # sigma of the t-scaled double equals t sigma(t mu) after the coordinate change
    X = rng.uniform(-0.1, 0.1, (3, 3))
    t = 0.5
    pt = scaled_pipeline(su2, t)
    assert pt.n == su2.n
    assert np.abs(pt.me.sigma(X) - t * su2.me.sigma(t * X)).max() < 1e-10


def test_numerics_serialize():
    d = Numerics().as_dict()
    assert set(d) >= {"rk4_steps", "quad_nodes", "fd_step", "newton_tol"}
