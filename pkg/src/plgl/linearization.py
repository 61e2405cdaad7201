"""The twisted linearization (Exp, sigma) of G* and its Moser correction.

Exp(mu) = pr_{G*}(exp(j(mu))) in the logarithmic chart of G*, and sigma is the
closed 2-form on g* assembled from the Cartan 3-form of the double:

    sigma = Lambda^* eps - j^* varpi,     Lambda(mu) = (h(mu), k(mu)^-1),

where exp(j(mu)) = h(mu) k(mu), varpi is the homotopy image of exp^* eta and
eps = 1/2 <theta^L_H, theta^L_G>.  The Moser flow for the scaling family
sigma_t(mu) = t sigma(t mu) removes the twist and yields a bisection psi with
Exp o A(psi)^-1 a Poisson linearization of G*.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import (FD_STEP, QUAD_NODES, Field, TwoFormField, exterior_derivative,
                     gauge_matrix, gauss_legendre_01, stencil, stencil_derivative)
from .lie_core import (LieBialgebra, ManinTriple, build_double, cobracket_from_r,
                       scaling_morphism)
from .matrix_groups import (DomainError, ManinGroup, MatrixRep, exp_family, expm, phi,
                            phi_family)

log = logging.getLogger(__name__)

RK4_STEPS = 200
FLOW_DOMAIN = 0.5


# --- Cartan 3-form and the forms built from it ----------------------------

def cartan_eta(metric, f, c: float = 0.5):
    """Left-invariant value eta(x, y, z) = c <x, [y, z]> on the double."""
    G = np.asarray(metric)

    def eta(x, y, z):
        yz = np.einsum("...a,...b,abc->...c", y, z, f)
        return c * np.einsum("...a,ab,...b->...", x, G, yz)

    return eta


def fit_cartan_constant(group: ManinGroup, points: int = 20, seed: int = 0,
                        radius: float = 0.3, h: float = 1e-4) -> float:
    """Least-squares constant c in iota(zeta_D) eta = -1/2 d<theta^L + theta^R, zeta>.

    Both sides are pulled back by exp to the ball in d.  The left side is
    evaluated with eta = <x, [y, z]> (c = 1) on left-trivialized vectors, the
    right side by a finite-difference exterior derivative.
    """
    rng = np.random.default_rng(seed)
    G = group.triple.metric.matrix
    m = group.triple.d.dim
    eta1 = cartan_eta(G, group.f, 1.0)
    num = den = 0.0
    for _ in range(points):
        x = rng.normal(size=m)
        x *= radius / np.linalg.norm(x)
        zeta, Y, Z = rng.normal(size=(3, m))
        adx = group.ad(x)
        A = phi(adx)
        # zeta^L - zeta^R at exp(x), left-trivialized
        zD = zeta - expm(-adx) @ zeta

        def beta(X):
            S = phi(group.ad(X)) + phi(group.ad(X), right=True)
            return np.einsum("bij,j->bi", np.swapaxes(S, -1, -2), G @ zeta)

        db = exterior_derivative(beta, 1, x, h=h)
        rhs = -0.5 * (Y @ db @ Z)
        lhs = eta1(zD, A @ Y, A @ Z)
        num += lhs * rhs
        den += lhs * lhs
    return float(num / den)


def varpi_matrix(group: ManinGroup, x, c: float = 0.5, nodes: int = QUAD_NODES):
    """varpi_x as a matrix on d: int_0^1 t^2 (exp^* eta)_{tx}(x, ., .) dt.

    (exp^* eta)_{tx}(x, X, Y) = c <x, [A X, A Y]> with A = (1 - e^{-t ad_x}) / (t ad_x).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tn, tw = gauss_legendre_01(nodes)
    adx = group.ad(x)
    M = np.swapaxes(adx, -1, -2) @ group.triple.metric.matrix      # <x,[U,V]> = U^T M V
    A = phi_family(adx, tn)                                         # (T, B, m, m)
    W = np.einsum("t,tbki,tbkj->bij", tw * tn ** 2, A, M[None] @ A)
    return c * W


def epsilon_form(group: ManinGroup, h, k, dh1, dk1, dh2, dk2):
    """eps((dh1, dk1), (dh2, dk2)) = 1/2 (<h^-1 dh1, k^-1 dk2> - <h^-1 dh2, k^-1 dk1>)."""
    hinv, kinv = group.inv(h), group.inv(k)
    G = group.triple.metric.matrix
    th = [group.rep.coords(hinv @ dh) for dh in (dh1, dh2)]
    tk = [group.rep.coords(kinv @ dk) for dk in (dk1, dk2)]

    def pair(a, b):
        return np.einsum("...i,ij,...j->...", a, G, b)

    return 0.5 * (pair(th[0], tk[1]) - pair(th[1], tk[0]))


def scaling_sigma_a1(sigma: Callable, nodes: int = QUAD_NODES) -> Callable:
    """Evaluator Y -> (sigma(Y), a_1(Y)) for an arbitrary closed 2-form.

    For the scaling family sigma_t(mu) = t sigma(t mu) the Moser form at t = 1
    is a_1 = h(sigma) - iota_E sigma, with h the homotopy operator and E the
    Euler field; then d sigma_t / dt = -d a_t with a_t(mu) = a_1(t mu) / t.
    """
    tn, tw = gauss_legendre_01(nodes)

    def ev(Y):
        Y = np.atleast_2d(Y)
        B, n = Y.shape
        pts = np.concatenate([Y, (tn[:, None, None] * Y[None]).reshape(-1, n)])
        S = np.asarray(sigma(pts))
        S0, Sn = S[:B], S[B:].reshape(len(tn), B, n, n)
        hS = np.einsum("t,bj,tbji->bi", tw * tn, Y, Sn)
        return S0, hS - np.einsum("bj,bji->bi", Y, S0)

    return ev


def coadjoint_exp(f, kappa, mu):
    """Ad*_{exp kappa} mu = (e^{-ad kappa})^T mu, batched."""
    E = expm(-np.einsum("...a,abc->...cb", kappa, f))
    return np.einsum("...ba,...b->...a", E, mu)


class ModifiedExp:
    """Exp: g* -> G* together with its twist sigma, for one coboundary bialgebra.

    Evaluators are pure functions of their inputs, so an instance can be
    shared freely.
    """

    def __init__(self, bialgebra: LieBialgebra, group: ManinGroup, cartan_c: float = 0.5,
                 quad_nodes: int = QUAD_NODES, radius: float = 0.3, fd_step: float = FD_STEP,
                 newton_tol: float = 1e-13):
        self.b = bialgebra
        self.group = group
        self.n = bialgebra.dim
        self.c = float(cartan_c)
        self.quad_nodes = int(quad_nodes)
        self.radius = float(radius)
        self.fd_step = float(fd_step)
        self.newton_tol = float(newton_tol)
        tr = group.triple
        J = np.zeros((tr.d.dim, self.n))
        J[tr.gi] = -bialgebra.r.r.T
        J[tr.hi] = np.eye(self.n)
        J.setflags(write=False)
        self.J = J
        self.gf = bialgebra.g.f
        self.untwisted = not np.any(bialgebra.r.r)
        # abelian g with r = 0: d is abelian and sigma vanishes identically
        self.sigma_vanishes = bool(self.untwisted and bialgebra.g.is_abelian)

    # -- the map
    def jmap(self, mu):
        return np.asarray(mu, dtype=float) @ self.J.T

    def factor(self, mu):
        """(h, k) with exp(j(mu)) = h k."""
        return self.group.factorize(self.group.mexp(self.jmap(mu)))

    def exp_group(self, mu):
        return self.factor(mu)[0]

    def __call__(self, mu):
        """Exp(mu) in the logarithmic chart of G*."""
        return self.group.chart(self.exp_group(mu))

    exp_map = __call__

    def lam(self, mu):
        """lambda(Exp mu) = Exp(mu)^-1 exp(j(mu)), an element of G."""
        return self.factor(mu)[1]

    def frames(self, mu):
        """(h, k, Z) with Z = Ad_k phi(ad_x) J, x = j(mu).

        Rows of Z in h give h^-1 dh, rows in g give dk k^-1, as linear maps of d mu.
        """
        g = self.group
        x = self.jmap(mu)
        h, k = g.factorize(g.mexp(x))
        return h, k, g.Ad(k) @ phi(g.ad(x)) @ self.J

    def jacobian(self, mu):
        """Analytic differential of Exp in chart coordinates, (..., n, n)."""
        g = self.group
        h, _, Z = self.frames(np.asarray(mu, dtype=float))
        return np.linalg.solve(g.dexp_h(g.chart(h)), Z[..., g.hi, :])

    def inverse(self, eta, maxit: int = 30):
        """Solve Exp(mu) = eta by Newton iteration on the analytic Jacobian."""
        eta = np.asarray(eta, dtype=float)
        Y = np.atleast_2d(eta)
        X = Y.copy()
        for _ in range(maxit):
            F = self(X) - Y
            if np.abs(F).max(initial=0.0) <= self.newton_tol:
                break
            X = X - np.linalg.solve(self.jacobian(X), F[..., None])[..., 0]
        else:
            raise DomainError("Exp inversion did not converge: outside germ domain")
        return X[0] if eta.ndim == 1 else X

    # -- the twist
    def _eps_from_frames(self, Z):
        """eps pulled back through Lambda from Z = Ad_k phi(ad_x) J, shape (..., m, n)."""
        g = self.group
        H = Z[..., g.hi, :]          # h^-1 dh
        Gg = -Z[..., g.gi, :]        # g^-1 dg for g = k^-1
        HtG = np.swapaxes(H, -1, -2) @ Gg
        return 0.5 * (HtG - np.swapaxes(HtG, -1, -2))

    def _twist(self, Y, ts):
        """Lambda^* eps at the points t Y (t in ``ts``) and j^* varpi at Y.

        One power series of ad_{j(Y)} serves every rescaled point and every
        quadrature node.
        """
        g = self.group
        ts = np.asarray(ts, dtype=float)
        x = self.jmap(Y)
        adx = g.ad(x)
        tn, tw = gauss_legendre_01(self.quad_nodes)
        PJ = phi_family(adx, np.concatenate([ts, tn]), post=self.J)     # (T, B, m, n)
        nt = len(ts)
        E = None
        if nt:
            k = g.factorize(exp_family(g.rho(x), ts))[1]
            E = self._eps_from_frames(g.Ad(k) @ PJ[:nt])
        M = np.swapaxes(adx, -1, -2) @ g.triple.metric.matrix
        Q = PJ[nt:]
        V = np.einsum("t,tbki,tbkj->bij", tw * tn ** 2, Q, M[None] @ Q)
        return E, self.c * V

    def eps_pullback(self, X):
        """Lambda^* eps as matrices (B, n, n)."""
        return self._twist(np.atleast_2d(X), [1.0])[0][0]

    def varpi_pullback(self, X):
        """j^* varpi as matrices (B, n, n)."""
        return self._twist(np.atleast_2d(X), [])[1]

    def sigma(self, mu):
        X = np.atleast_2d(np.asarray(mu, dtype=float))
        E, V = self._twist(X, [1.0])
        S = E[0] - V
        return S[0] if np.ndim(mu) == 1 else S

    def sigma_field(self) -> Field:
        return TwoFormField(self.sigma, self.n, self.radius)

    def sigma_and_a1(self, Y):
        """sigma and the Moser 1-form a_1 = h(sigma) - iota_E sigma at a batch Y.

        Only the eps part contributes: h(j^* varpi) = 0 since h o h = 0, and
        iota_E j^* varpi = 0 since varpi_x(x, .) = 0.
        """
        Y = np.atleast_2d(Y)
        tn, tw = gauss_legendre_01(self.quad_nodes)
        E, V = self._twist(Y, np.concatenate([[1.0], tn]))
        hE = np.einsum("t,bj,tbji->bi", tw * tn, Y, E[1:])
        a1 = hE - np.einsum("bj,bji->bi", Y, E[0])
        return E[0] - V, a1

    def a1(self, Y):
        return self.sigma_and_a1(Y)[1]

    def moser_form_fd(self, Y, dt: float = 1e-4):
        """a_1 = h(-d sigma_t / dt at t = 1), the t-derivative by central differences."""
        Y = np.atleast_2d(Y)
        B, n = Y.shape
        tn, tw = gauss_legendre_01(self.quad_nodes)
        pts = (tn[:, None, None] * Y[None]).reshape(-1, n)
        up = (1 + dt) * self.sigma((1 + dt) * pts)
        dn = (1 - dt) * self.sigma((1 - dt) * pts)
        dsig = -((up - dn) / (2 * dt)).reshape(len(tn), B, n, n)
        return np.einsum("t,bj,tbji->bi", tw * tn, Y, dsig)

    # -- diagnostics
    def coadjoint_vectors(self, X, xi):
        """xi_{g*}(mu) with components mu([xi, e_b]) at a batch of points."""
        return np.einsum("za,abc,zc->zb", xi, self.gf, X)

    def contraction_residual(self, mu, xi):
        """max |iota(xi_{g*}) sigma + Exp^* <theta^R, xi> - <d mu, xi>| per point."""
        X = np.atleast_2d(np.asarray(mu, dtype=float))
        xi = np.broadcast_to(np.asarray(xi, dtype=float), X.shape)
        iota = np.einsum("zi,zij->zj", self.coadjoint_vectors(X, xi), self.sigma(X))
        R = self.group.dexp_h(self(X), right=True)
        beta = np.einsum("zkl,zk->zl", R, xi)
        pull = np.einsum("zki,zk->zi", self.jacobian(X), beta)
        return np.abs(iota + pull - xi).max(axis=-1)

    def equivariance_residual(self, kappa, mu):
        """max |Exp(Ad*_g mu) - g . Exp(mu)| with g = exp(kappa) in G, per point."""
        g = self.group
        X = np.atleast_2d(np.asarray(mu, dtype=float))
        K = np.atleast_2d(np.asarray(kappa, dtype=float))
        lhs = self(coadjoint_exp(self.gf, K, X))
        ge = g.mexp(g.embed_g(K))
        rhs = g.chart(g.factorize(ge @ self.exp_group(X))[0])
        return np.abs(lhs - rhs).max(axis=-1)


def check_contraction(me: ModifiedExp, xi, mu):
    """Residual of the contraction identity for (Exp, sigma) at the points mu."""
    res = me.contraction_residual(mu, xi)
    return float(res[0]) if np.ndim(mu) == 1 else res


# --- pipelines ------------------------------------------------------------

@dataclass(frozen=True)
class Numerics:
    rk4_steps: int = RK4_STEPS
    quad_nodes: int = QUAD_NODES
    fd_step: float = FD_STEP
    newton_tol: float = 1e-12
    radius: float = 0.3
    moser_nodes: int = 8       # quadrature for Moser 1-forms of composite 2-forms

    def as_dict(self) -> dict:
        return {"rk4_steps": self.rk4_steps, "quad_nodes": self.quad_nodes,
                "fd_step": self.fd_step, "newton_tol": self.newton_tol, "radius": self.radius,
                "moser_nodes": self.moser_nodes}


@dataclass(frozen=True)
class Pipeline:
    """Everything built from one coboundary bialgebra with a faithful representation."""
    bialgebra: LieBialgebra
    triple: ManinTriple
    group: ManinGroup
    me: ModifiedExp
    numerics: Numerics

    @property
    def n(self) -> int:
        return self.bialgebra.dim

    def lie_poisson(self, X):
        return -np.einsum("abc,...c->...ab", self.bialgebra.g.f, X)


def build_pipeline(bialgebra: LieBialgebra, triple: ManinTriple, rep: MatrixRep,
                   factor: str = "newton", numerics: Numerics = Numerics()) -> Pipeline:
    group = ManinGroup(triple, rep, factor=factor, radius=numerics.radius,
                       newton_tol=numerics.newton_tol)
    me = ModifiedExp(bialgebra, group, quad_nodes=numerics.quad_nodes, radius=numerics.radius,
                     fd_step=numerics.fd_step)
    return Pipeline(bialgebra, triple, group, me, numerics)


def scaled_pipeline(base: Pipeline, t: float) -> Pipeline:
    """Rebuild the pipeline on the double d_t with cobracket t lambda.

    The representation is rho o s_t, where s_t(xi + mu) = xi + t mu is a Lie
    algebra morphism d_t -> d.
    """
    b_t = cobracket_from_r(base.bialgebra.g, t * base.bialgebra.r.r)
    tr_t = build_double(base.bialgebra, t)
    if base.triple.g_indices != tr_t.g_indices:
        raise DomainError("scaling family needs the triple in (g, g*) block order")
    rep_t = base.group.rep.scaled(scaling_morphism(base.n, t))
    return build_pipeline(b_t, tr_t, rep_t, base.group.factor_method, base.numerics)


# --- Moser flow -----------------------------------------------------------

ORIENTATIONS = (("left", 1.0), ("left", -1.0), ("right", 1.0), ("right", -1.0))


@dataclass(frozen=True)
class FlowResult:
    x: np.ndarray          # x_1 = F_1(mu)
    kappa: np.ndarray      # log of the bisection element g_1 in g-coordinates
    residual: np.ndarray   # |Ad*_{g_1} x_1 - mu| per point


class MoserFlow:
    """RK4 integration of the Moser flow from pi_LP (t = 0) to pi^sigma (t = 1).

    With the scaling family sigma_t(mu) = t sigma(t mu) and a_t(mu) = a_1(t mu) / t,
    the time-dependent vector field is v_t = -pi b_t with b_t = (I + sigma_t pi)^-1 a_t.
    The bisection element is carried along as g_t = exp(kappa_t) with
    g^-1 dg/dt = s b (left) or dg/dt g^-1 = s b (right); ``orientation`` is
    the pair (side, s).
    """

    def __init__(self, f, sigma_a1: Callable, orientation: tuple, steps: int = RK4_STEPS,
                 a0_eps: float = 1e-3, domain: float = FLOW_DOMAIN, trivial: bool = False):
        self.trivial = bool(trivial)    # sigma = 0: the flow is the identity
        self.f = np.asarray(f, dtype=float)
        self.n = self.f.shape[0]
        self.sigma_a1 = sigma_a1
        self.orientation = tuple(orientation)
        self.steps = int(steps)
        self.a0_eps = float(a0_eps)
        self.domain = float(domain)

    def pi(self, X):
        return -np.einsum("abc,zc->zab", self.f, X)

    def a0(self, X):
        """a_0(mu) = D a_1(0) mu by fourth-order central differences along mu."""
        e = self.a0_eps
        B = X.shape[0]
        pts = np.concatenate([e * X, -e * X, 2 * e * X, -2 * e * X])
        a = self.sigma_a1(pts)[1].reshape(4, B, self.n)
        return (8 * (a[0] - a[1]) - (a[2] - a[3])) / (12 * e)

    def b_field(self, t, X):
        """Covector b_t(x) with Moser vector field v_t = -pi(x) b_t(x)."""
        if t == 0.0:
            return self.a0(X)
        S1, A1 = self.sigma_a1(t * X)
        M = np.eye(self.n) + t * S1 @ self.pi(X)
        cond = np.linalg.cond(M)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
            raise DomainError("I + sigma_t pi is singular along the flow")
        return np.linalg.solve(M, (A1 / t)[..., None])[..., 0]

    def _kdot(self, K, b, side, sgn):
        A = phi(np.einsum("...a,abc->...cb", K, self.f), right=(side == "right"))
        return np.linalg.solve(A, sgn * b[..., None])[..., 0]

    def _rhs(self, t, X, K, orient, backward):
        if np.abs(X).max(initial=0.0) > self.domain:
            raise DomainError(f"Moser flow left the chart ball of radius {self.domain}")
        b = self.b_field(t, X)
        v = -np.einsum("zij,zj->zi", self.pi(X), b)
        side, sgn = orient
        if backward:
            # m_t = g_t^-1 g_1 solves dm/dt m^-1 = -s b with m_1 = e (left case)
            side, sgn = ("right" if side == "left" else "left"), -sgn
        return v, self._kdot(K, b, side, sgn)

    def integrate(self, X, t0, t1, steps, orient=None, backward=False):
        orient = self.orientation if orient is None else orient
        X = np.asarray(X, dtype=float)
        K = np.zeros_like(X)
        if self.trivial:
            if np.abs(X).max(initial=0.0) > self.domain:
                raise DomainError(f"Moser flow left the chart ball of radius {self.domain}")
            return X.copy(), K
        h = (t1 - t0) / steps
        for i in range(steps):
            t = t0 + i * h
            k1x, k1k = self._rhs(t, X, K, orient, backward)
            k2x, k2k = self._rhs(t + h / 2, X + h / 2 * k1x, K + h / 2 * k1k, orient, backward)
            k3x, k3k = self._rhs(t + h / 2, X + h / 2 * k2x, K + h / 2 * k2k, orient, backward)
            k4x, k4k = self._rhs(t + h, X + h * k3x, K + h * k3k, orient, backward)
            X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            K = K + h / 6 * (k1k + 2 * k2k + 2 * k3k + k4k)
        return X, K

    def forward(self, mu, steps: Optional[int] = None) -> FlowResult:
        X = np.atleast_2d(np.asarray(mu, dtype=float))
        x1, k1 = self.integrate(X, 0.0, 1.0, steps or self.steps)
        res = np.abs(coadjoint_exp(self.f, k1, x1) - X).max(axis=-1)
        return FlowResult(x1, k1, res)

    def backward(self, y, steps: Optional[int] = None):
        """(mu, kappa) from the time-reversed flow started at x_1 = y; exp(kappa) = g_1."""
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.integrate(Y, 1.0, 0.0, steps or self.steps, backward=True)


def probe_orientation(f, sigma_a1, mu, steps: int = 20, domain: float = FLOW_DOMAIN):
    """Side and sign of the bisection ODE for which Ad*_{g_1} x_1 = mu on a coarse run."""
    X = np.atleast_2d(np.asarray(mu, dtype=float))
    results = []
    for orient in ORIENTATIONS:
        flow = MoserFlow(f, sigma_a1, orient, steps, domain=domain)
        r = flow.forward(X)
        results.append((float(r.residual.max()), orient))
        log.debug("orientation %s residual %.3e", orient, results[-1][0])
    best = min(results, key=lambda p: p[0])
    return best[1], best[0], results


@dataclass(frozen=True)
class MoserOutput:
    """Time-1 Moser map F1 = A(psi)^-1 together with the bisection psi.

    ``psi`` returns g-coordinates of log psi(y); A(psi)(y) = Ad*_{psi(y)} y.
    """
    flow: MoserFlow
    orientation: tuple
    diagnostics: dict = field(default_factory=dict)

    def forward(self, mu, steps=None) -> FlowResult:
        return self.flow.forward(mu, steps)

    def F1(self, mu, steps=None):
        out = self.flow.forward(mu, steps).x
        return out[0] if np.ndim(mu) == 1 else out

    def psi(self, y, steps=None):
        k = self.flow.backward(y, steps)[1]
        return k[0] if np.ndim(y) == 1 else k

    def F1_inverse(self, y, steps=None):
        x = self.flow.backward(y, steps)[0]
        return x[0] if np.ndim(y) == 1 else x

    def A(self, y, steps=None):
        """A(psi)(y) = Ad*_{psi(y)} y."""
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        out = coadjoint_exp(self.flow.f, np.atleast_2d(self.psi(Y, steps)), Y)
        return out[0] if np.ndim(y) == 1 else out


DEFAULT_PROBE = (0.05, -0.03, 0.04)


def moser_from_sigma_a1(f, sigma_a1, steps: int = RK4_STEPS, probe=None,
                        domain: float = FLOW_DOMAIN, orientation=None) -> MoserOutput:
    """Moser flow for any closed 2-form given through its (sigma, a_1) evaluator.

    Without ``orientation`` the bisection ODE convention is fixed by a coarse probe.
    """
    if orientation is not None:
        return MoserOutput(MoserFlow(f, sigma_a1, tuple(orientation), steps, domain=domain),
                           tuple(orientation), {})
    n = np.asarray(f).shape[0]
    if probe is None:
        probe = np.resize(np.array(DEFAULT_PROBE), n)
    orient, res, table = probe_orientation(f, sigma_a1, probe, domain=domain)
    diag = {"orientation_probe_residual": res,
            "orientation_table": [(o[0], o[1], r) for r, o in table]}
    return MoserOutput(MoserFlow(f, sigma_a1, orient, steps, domain=domain), orient, diag)


def moser_linearize(me: ModifiedExp, steps: int = RK4_STEPS, quad_nodes: Optional[int] = None,
                    probe=None) -> MoserOutput:
    """Moser flow removing the twist sigma of ``me``; Exp o F1 linearizes pi_{G*}."""
    if me.sigma_vanishes:
        flow = MoserFlow(me.gf, me.sigma_and_a1, ORIENTATIONS[1], steps, trivial=True)
        return MoserOutput(flow, ORIENTATIONS[1], {"trivial": True})
    sa = me.sigma_and_a1
    if quad_nodes is not None and quad_nodes != me.quad_nodes:
        sa = scaling_sigma_a1(me.sigma, quad_nodes)
    return moser_from_sigma_a1(me.gf, sa, steps, probe)


def sigma_psi_matrices(f, Phi, K, dPhi, dK):
    """Phi^* sigma_psi from values and first derivatives of Phi and kappa.

    With psi(Phi) = exp(kappa) and theta_i = (left dexp at kappa) d_i kappa:
    (Phi^* sigma_psi)_ij = <Phi, [theta_i, theta_j]> - <d_i Phi, theta_j> + <d_j Phi, theta_i>.
    ``dPhi`` and ``dK`` have shape (B, i, c).
    """
    A = phi(np.einsum("za,abc->zcb", K, f))
    th = np.einsum("zab,zib->zia", A, dK)
    t1 = np.einsum("zic,zjc->zij", dPhi, th)
    br = np.einsum("zia,zjb,abc->zijc", th, th, f)
    return np.einsum("zc,zijc->zij", Phi, br) - t1 + np.swapaxes(t1, 1, 2)


def sigma_psi_residual(out: MoserOutput, me, mu, h: float = FD_STEP,
                       steps: Optional[int] = None):
    """max |F1^* sigma_psi - F1^* sigma| per point, from forward flows on a stencil.

    ``me`` only needs a ``sigma`` evaluator.
    """
    X = np.atleast_2d(np.asarray(mu, dtype=float))
    B, n = X.shape
    pts, s = stencil(X, h)
    r = out.forward(np.concatenate([X, pts.reshape(-1, n)]), steps)
    Phi, K = r.x[:B], r.kappa[:B]
    dPhi = stencil_derivative(r.x[B:].reshape(2 * n, B, n), s)
    dK = stencil_derivative(r.kappa[B:].reshape(2 * n, B, n), s)
    lhs = sigma_psi_matrices(out.flow.f, Phi, K, dPhi, dK)
    rhs = dPhi @ me.sigma(Phi) @ np.swapaxes(dPhi, 1, 2)
    return np.abs(lhs - rhs).reshape(B, -1).max(axis=1)


# --- scaling laws and bisection pullback ----------------------------------

def relative_residual(a, b) -> float:
    """max |a - b| / max |b| (absolute when b vanishes)."""
    den = float(np.abs(b).max()) if np.size(b) else 0.0
    return float(np.abs(np.asarray(a) - b).max(initial=0.0)) / (den if den > 0 else 1.0)


def scaling_laws_check(base: Pipeline, ts, mus, dtau: float = 1e-4,
                       steps: Optional[int] = None, flow_base: Optional[MoserOutput] = None) -> dict:
    """Relative residuals of the four scaling laws against rebuilt pipelines on d_t.

    sigma^(t)(mu) = t sigma(t mu), pi^(t)(mu) = pi^sigma(t mu) / t,
    a^(t)(mu) = a_1(t mu) / t (a^(t) from -d sigma^(tau)/d tau at tau = t) and
    psi^(t)(mu) = psi(t mu).
    """
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    B, n = mus.shape
    me1 = base.me
    steps = steps or base.numerics.rk4_steps
    flow1 = flow_base or moser_linearize(me1, steps)
    tn, tw = gauss_legendre_01(me1.quad_nodes)
    node_pts = (tn[:, None, None] * mus[None]).reshape(-1, n)
    out = {}
    for t in ts:
        t = float(t)
        pt = scaled_pipeline(base, t)
        X = t * mus
        s1, a1 = me1.sigma_and_a1(X)
        sig_t = pt.me.sigma(mus)
        pi_t = gauge_matrix(base.lie_poisson(mus), sig_t)
        pi_1 = gauge_matrix(base.lie_poisson(X), s1) / t
        up = scaled_pipeline(base, t + dtau).me.sigma(node_pts)
        dn = scaled_pipeline(base, t - dtau).me.sigma(node_pts)
        vals = (-(up - dn) / (2 * dtau)).reshape(len(tn), B, n, n)
        a_t = np.einsum("t,bj,tbji->bi", tw * tn, mus, vals)
        psi_t = moser_linearize(pt.me, steps).psi(mus)
        psi_1 = flow1.psi(X)
        out[t] = {"sigma": relative_residual(sig_t, t * s1),
                  "pi": relative_residual(pi_t, pi_1),
                  "a": relative_residual(a_t, a1 / t),
                  "psi": relative_residual(psi_t, psi_1)}
        log.info("scaling t=%.3f: %s", t, out[t])
    return out


def pullback_bisection(nu, psi1: Callable) -> Callable:
    """psi2''(mu2) = N(psi1(tau mu2)) with tau = nu^T, in g-log coordinates.

    ``nu`` is the matrix of g1 -> g2; N(exp kappa) = exp(nu kappa).
    """
    nu = np.asarray(nu, dtype=float)

    def psi2(mu2):
        k1 = np.asarray(psi1(np.asarray(mu2, dtype=float) @ nu))
        return k1 @ nu.T

    return psi2
