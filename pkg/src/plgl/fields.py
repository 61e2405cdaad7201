"""Chart-level tensor calculus: bivector fields, differential forms, finite
differences, the homotopy operator and gauge transformations.

Fields are value evaluators on batches of points of shape ``(B, m)``; a single
point of shape ``(m,)`` is accepted as well.  Conventions for matrices at a
point: ``pi[i, j] = pi(dx_i, dx_j)`` with ``pi#(alpha) = pi^T alpha``, and
``sigma[i, j] = sigma(d_i, d_j)`` with ``sigma_flat(v) = sigma^T v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .lie_core import LieAlgebra

FD_STEP = 1e-5
QUAD_NODES = 16


class GaugeError(RuntimeError):
    """I + sigma_flat pi_sharp is singular: the gauge transform is undefined here."""


@lru_cache(maxsize=16)
def _gl01(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_01(nodes: int = QUAD_NODES):
    """Gauss-Legendre nodes and weights on [0, 1] (read-only arrays)."""
    return _gl01(int(nodes))


def _as_batch(mu):
    mu = np.asarray(mu, dtype=float)
    return (mu[None, :], True) if mu.ndim == 1 else (mu, False)


@dataclass(frozen=True)
class Field:
    """Value evaluator on a chart ball; ``degree`` is the tensor rank of the values."""
    evaluator: Callable
    dim: int
    degree: int
    radius: float = np.inf

    def __call__(self, mu):
        X, single = _as_batch(mu)
        out = np.asarray(self.evaluator(X))
        return out[0] if single else out


def BivectorField(evaluator, dim, radius=np.inf):
    return Field(evaluator, dim, 2, radius)


def TwoFormField(evaluator, dim, radius=np.inf):
    return Field(evaluator, dim, 2, radius)


def OneFormField(evaluator, dim, radius=np.inf):
    return Field(evaluator, dim, 1, radius)


def lie_poisson(g: LieAlgebra) -> Field:
    """pi(mu)_ab = -sum_c f_ab^c mu_c."""
    f = g.f
    return BivectorField(lambda X: -np.einsum("abc,...c->...ab", f, X), g.dim)


def gauge_matrix(P, S, skew_tol: float = 1e-12):
    """Pointwise gauge transform (I + P S)^-1 P of bivector values P by 2-form values S."""
    P = np.asarray(P, dtype=float)
    S = np.asarray(S, dtype=float)
    m = P.shape[-1]
    M = np.eye(m) + P @ S
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise GaugeError("gauge transform undefined here (I + sigma pi singular)")
    out = np.linalg.solve(M, P)
    skew = np.abs(out + np.swapaxes(out, -1, -2)).max() if out.size else 0.0
    scale = max(1.0, float(np.abs(out).max())) if out.size else 1.0
    if skew > skew_tol * scale:
        raise GaugeError(f"gauge transform lost skew-symmetry ({skew:.2e})")
    return out


def gauge_transform(pi: Field, sigma: Field) -> Field:
    return BivectorField(lambda X: gauge_matrix(pi.evaluator(X), sigma.evaluator(X)),
                         pi.dim, min(pi.radius, sigma.radius))


def fd_step(mu, h: float = FD_STEP):
    """Central-difference step h * max(1, |mu|) per point."""
    mu = np.asarray(mu, dtype=float)
    return h * np.maximum(1.0, np.linalg.norm(mu, axis=-1))


def stencil(X, h: float = FD_STEP):
    """Central-difference stencil: array (2m, B, m) of X +- s e_i and the steps s (B,)."""
    X = np.asarray(X, dtype=float)
    B, m = X.shape
    s = fd_step(X, h)
    E = np.eye(m)
    pts = np.empty((2 * m, B, m))
    for i in range(m):
        pts[2 * i] = X + s[:, None] * E[i]
        pts[2 * i + 1] = X - s[:, None] * E[i]
    return pts, s


def stencil_derivative(vals, s):
    """Partial derivatives from stencil values of shape (2m, B, ...): returns (B, m, ...)."""
    vals = np.asarray(vals)
    d = (vals[0::2] - vals[1::2]) / (2.0 * s.reshape((1, -1) + (1,) * (vals.ndim - 2)))
    return np.moveaxis(d, 0, 1)


def jacobian_fd(F: Callable, mu, h: float = FD_STEP):
    """Numerical Jacobian J[..., k, i] = d F_k / d mu_i by central differences."""
    X, single = _as_batch(mu)
    pts, s = stencil(X, h)
    B, m = X.shape
    vals = np.asarray(F(pts.reshape(-1, m)))
    vals = vals.reshape((2 * m, B) + vals.shape[1:])
    D = stencil_derivative(vals, s)          # (B, m, k)
    J = np.swapaxes(D, 1, 2)
    return J[0] if single else J


def pushforward(F: Callable, pi, mu, h: float = FD_STEP):
    """J pi J^T at F(mu); ``pi`` is a Field or a callable on batches."""
    X, single = _as_batch(mu)
    J = jacobian_fd(F, X, h)
    P = pi(X) if isinstance(pi, Field) else np.asarray(pi(X))
    out = J @ P @ np.swapaxes(J, -1, -2)
    return out[0] if single else out


def jacobiator(pi, mu, h: float = FD_STEP):
    """max |[pi, pi]^{ijk}| with [pi,pi]^{ijk} = sum_l pi^{il} d_l pi^{jk} + cyclic."""
    X, single = _as_batch(mu)
    ev = pi.evaluator if isinstance(pi, Field) else pi
    P = np.asarray(ev(X))
    B, m = X.shape
    pts, s = stencil(X, h)
    vals = np.asarray(ev(pts.reshape(-1, m))).reshape(2 * m, B, m, m)
    dP = stencil_derivative(vals, s)                      # (B, l, j, k)
    T = np.einsum("bil,bljk->bijk", P, dP)
    S = T + np.transpose(T, (0, 2, 3, 1)) + np.transpose(T, (0, 3, 1, 2))
    res = np.abs(S).reshape(B, -1).max(axis=1)
    return float(res[0]) if single else res


def exterior_derivative(alpha: Callable, q: int, mu, h: float = FD_STEP):
    """(d alpha)_{i0..iq} = sum_k (-1)^k d_{ik} alpha_{i0..^ik..iq} by central differences.

    ``alpha`` evaluates a q-form on a batch, returning shape (B,) + (m,)*q.
    """
    X, single = _as_batch(mu)
    B, m = X.shape
    pts, s = stencil(X, h)
    vals = np.asarray(alpha(pts.reshape(-1, m))).reshape((2 * m, B) + (m,) * q)
    D = stencil_derivative(vals, s)                       # (B, i0, i1..iq)
    out = np.zeros((B,) + (m,) * (q + 1))
    for k in range(q + 1):
        # derivative index goes to slot k
        out = out + (-1) ** k * np.moveaxis(D, 1, 1 + k)
    return out[0] if single else out


def homotopy_operator(alpha: Callable, q: int, nodes: int = QUAD_NODES) -> Callable:
    """(h alpha)_mu(v1..v_{q-1}) = int_0^1 t^{q-1} alpha_{t mu}(mu, v1, ..) dt.

    ``alpha`` evaluates a q-form on a batch; the result evaluates a (q-1)-form
    (a function when q = 1) on a batch.  Gauss-Legendre quadrature on [0, 1].
    """
    if q < 1:
        raise ValueError("homotopy operator needs q >= 1")
    tn, tw = gauss_legendre_01(nodes)

    def h_alpha(mu):
        X, single = _as_batch(mu)
        B, m = X.shape
        pts = (tn[:, None, None] * X[None]).reshape(-1, m)
        vals = np.asarray(alpha(pts)).reshape((len(tn), B) + (m,) * q)
        # contraction of the first slot with mu
        contracted = np.einsum("tbi...,bi->tb...", vals, X)
        out = np.einsum("t,tb...->b...", tw * tn ** (q - 1), contracted)
        return out[0] if single else out

    return h_alpha


def contract_euler(alpha_vals, X):
    """iota_E alpha for the Euler field E(mu) = mu (first slot)."""
    return np.einsum("bi...,bi->b...", alpha_vals, X)


def moment_residual(Phi: Callable, pi, sigma, xi_M: Callable, xi, mu, target_covector=None,
                    h: float = FD_STEP):
    """Residual |xi_M + (pi^sigma)# Phi^* beta| of the twisted moment map condition.

    ``beta`` is <d nu, xi> for maps into g* (default) or a supplied covector
    field on the target chart such as <theta^R, xi> on G*.  ``sigma`` may be
    None for an untwisted check.
    """
    X, single = _as_batch(mu)
    B, m = X.shape
    J = jacobian_fd(Phi, X, h)                              # (B, k, m)
    xi = np.asarray(xi, dtype=float)
    if target_covector is None:
        beta = np.broadcast_to(xi, (B, J.shape[1]))
    else:
        beta = np.asarray(target_covector(np.asarray(Phi(X)), xi))
    pull = np.einsum("bki,bk->bi", J, beta)
    P = pi(X) if isinstance(pi, Field) else np.asarray(pi(X))
    if sigma is not None:
        S = sigma(X) if isinstance(sigma, Field) else np.asarray(sigma(X))
        P = gauge_matrix(P, S)
    v = np.einsum("bij,bi->bj", P, pull)
    res = np.abs(np.asarray(xi_M(X)) + v).max(axis=-1)
    return float(res[0]) if single else res


def coadjoint_generator(g: LieAlgebra, xi):
    """xi_{g*}(mu) = -ad*_xi mu, with components mu([xi, e_b])."""
    f = g.f
    xi = np.asarray(xi, dtype=float)
    return lambda X: np.einsum("a,abc,...c->...b", xi, f, X)


def pi_gstar(group) -> Field:
    """Poisson structure of G* in the logarithmic chart.

    The unique skew pi with pi#<theta^R, xi_a> = -(xi_a)_{G*} for a basis xi_a
    of g, assembled from dressing generators and the right-trivialized dexp.
    """
    n = group.n

    def ev(eta):
        R = group.dexp_h(eta, right=True)                     # theta^R(u') = R eta'
        B = eta.shape[0]
        E = np.eye(n)
        V = np.stack([group.dressing_generator(np.broadcast_to(E[a], (B, n)), eta)
                      for a in range(n)], axis=-1)            # (B, n, n): column a
        return -np.linalg.solve(R, np.swapaxes(V, -1, -2))

    return BivectorField(ev, n, group.radius)


def theta_right_covector(group):
    """Covector <theta^R, xi> on the G*-chart: chart vector eta' -> <xi, (R eta')>."""
    def cov(eta, xi):
        R = group.dexp_h(np.atleast_2d(eta), right=True)
        if np.ndim(xi) == 1:
            return np.einsum("bij,i->bj", R, xi)
        return np.einsum("bij,bi->bj", R, xi)
    return cov
