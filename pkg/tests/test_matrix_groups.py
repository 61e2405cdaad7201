import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plgl.matrix_groups import DomainError, expm, logm, phi

small = arrays(np.float64, (4, 4), elements=st.floats(-0.4, 0.4))


def test_expm_rotation_closed_form():
    t = 0.7
    A = np.array([[0.0, -t], [t, 0.0]])
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    assert np.abs(expm(A) - R).max() < 1e-15


def test_expm_nilpotent_is_polynomial():
    N = np.diag([1.0, 2.0], k=1)
    assert np.allclose(expm(N), np.eye(3) + N + N @ N / 2, atol=1e-15)


@given(small)
@settings(max_examples=40, deadline=None)
def test_log_inverts_exp_near_identity(A):
    assert np.abs(logm(expm(A)) - A).max() < 1e-12


def _taylor_exp(A, terms=40):
    out, term = np.eye(len(A)), np.eye(len(A))
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def test_expm_batched_matches_taylor_series(rng):
    A = rng.standard_normal((3, 5, 5)) * 0.3
    out = expm(A)
    for i in range(3):
        assert np.abs(out[i] - _taylor_exp(A[i])).max() < 1e-13


def test_phi_is_derivative_of_exp(rng):
    # d/ds exp(X + sY) at 0 equals exp(X) phi_L(ad_X) applied to Y in the left trivialization
    X = rng.standard_normal((3, 3)) * 0.3
    Y = rng.standard_normal((3, 3))
    h = 1e-6
    fd = (expm(X + h * Y) - expm(X - h * Y)) / (2 * h)
    adX = np.kron(np.eye(3), X) - np.kron(X.T, np.eye(3))   # row-major vec of [X, .]
    v = (phi(adX) @ Y.ravel(order="F")).reshape(3, 3, order="F")
    vr = (phi(adX, right=True) @ Y.ravel(order="F")).reshape(3, 3, order="F")
    assert min(np.abs(fd - expm(X) @ v).max(), np.abs(fd - vr @ expm(X)).max()) < 1e-8


def test_factorization_recovers_product(su2, rng):
    G = su2.group
    x = rng.standard_normal((6, 2 * su2.n)) * 0.3
    d = G.mexp(x)
    h, k = G.factorize(d)
    assert np.abs(h @ k - d).max() < 1e-13
    # h in H and k in G
    assert np.abs(G.mlog(h)[..., G.gi]).max() < 1e-10
    assert np.abs(G.mlog(k)[..., G.hi]).max() < 1e-10


def test_newton_factorization_trivial(trivial, rng):
    G = trivial.group
    x = rng.standard_normal((4, 6)) * 0.3
    h, k = G.factorize(G.mexp(x))
    assert np.abs(G.chart(h) - x[:, 3:]).max() < 1e-13


def test_chart_round_trip(su2, rng):
    G = su2.group
    eta = rng.standard_normal((5, 3)) * 0.2
    assert np.abs(G.chart(G.chart_inv(eta)) - eta).max() < 1e-13


def test_chart_rejects_elements_outside_h(su2):
    G = su2.group
    with pytest.raises(DomainError):
        G.chart(G.mexp(G.embed_g(np.array([0.3, 0.0, 0.0]))))


def test_representation_is_faithful_homomorphism(su2):
    chk = su2.group.check()
    assert chk["homomorphism"] < 1e-12 and chk["faithful"] == 0.0


def test_Ad_is_a_homomorphism(su2, rng):
    G = su2.group
    a, b = G.mexp(rng.standard_normal((2, 6)) * 0.3)
    assert np.abs(G.Ad(a @ b) - G.Ad(a) @ G.Ad(b)).max() < 1e-12


def test_dressing_generator_matches_flow(su2, rng):
    # d/ds chart(pr_H(exp(-s xi) u)) at s = 0
    G = su2.group
    eta = rng.standard_normal(3) * 0.2
    xi = rng.standard_normal(3)
    u = G.chart_inv(eta)
    s = 1e-5
    def at(t):
        return G.chart(G.factorize(G.mexp(G.embed_g(-t * xi)) @ u)[0])
    fd = (at(s) - at(-s)) / (2 * s)
    assert np.abs(fd - G.dressing_generator(xi, eta)).max() < 1e-8
