"""Numerical verdicts for the linearization theorems and their proof-level constructions.

Every driver samples points with a seeded generator, evaluates both sides of
an identity independently and returns an :class:`ExperimentReport`.  Point
batches are processed in fixed-size chunks, so reports do not depend on the
number of worker threads.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import pi_gstar, stencil, stencil_derivative
from .linearization import (ModifiedExp, MoserOutput, Numerics, Pipeline, coadjoint_exp,
                            moser_from_sigma_a1, moser_linearize, scaling_laws_check,
                            scaling_sigma_a1, sigma_psi_matrices)
from .matrix_groups import DomainError, phi

log = logging.getLogger(__name__)

CHUNK = 128
SLOPE_STEPS = (50, 100, 200, 400)
SLOPE_RADIUS = 0.45


# --- reports --------------------------------------------------------------

def _f(x) -> float:
    return float(np.asarray(x, dtype=float))


@dataclass
class Check:
    id: str
    max_residual: float
    mean_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_residual) and self.max_residual <= self.tolerance)

    def as_dict(self) -> dict:
        return {"id": self.id, "max_residual": self.max_residual,
                "mean_residual": self.mean_residual, "tolerance": self.tolerance,
                "pass": self.passed}


def make_check(cid: str, residuals, tolerance: float) -> Check:
    r = np.atleast_1d(np.asarray(residuals, dtype=float))
    if r.size == 0:
        return Check(cid, 0.0, 0.0, float(tolerance))
    mx = _f(r.max()) if np.all(np.isfinite(r)) else float("inf")
    mn = _f(r.mean()) if np.all(np.isfinite(r)) else float("inf")
    return Check(cid, mx, mn, float(tolerance))


@dataclass
class ExperimentReport:
    """Residual statistics of one experiment; serializes to a stable JSON document."""
    name: str
    seed: int
    samples: int
    radius: float
    checks: list = field(default_factory=list)
    numerics: dict = field(default_factory=dict)
    table: Optional[dict] = None        # per-point data for CSV export, not serialized

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, cid: str, residuals, tolerance: float) -> Check:
        c = make_check(cid, residuals, tolerance)
        self.checks.append(c)
        log.info("%s/%s max %.3e tol %.1e %s", self.name, cid, c.max_residual, c.tolerance,
                 "ok" if c.passed else "FAIL")
        return c

    def check(self, cid: str) -> Check:
        for c in self.checks:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def as_dict(self) -> dict:
        return {"name": self.name, "seed": int(self.seed), "samples": int(self.samples),
                "radius": float(self.radius), "checks": [c.as_dict() for c in self.checks],
                "numerics": dict(self.numerics), "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


def merge_reports(name: str, reports) -> ExperimentReport:
    """Concatenate the checks of several reports, prefixing ids with the sub-report name."""
    reports = list(reports)
    out = ExperimentReport(name, reports[0].seed, sum(r.samples for r in reports),
                           max(r.radius for r in reports), numerics=reports[0].numerics)
    for r in reports:
        for c in r.checks:
            out.checks.append(Check(f"{r.name}/{c.id}", c.max_residual, c.mean_residual,
                                    c.tolerance))
    return out


# --- sampling and chunked evaluation --------------------------------------

def sample_ball(rng: np.random.Generator, count: int, n: int, radius: float) -> np.ndarray:
    """Uniform samples from the closed Euclidean ball of the given radius."""
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(size=(count, 1)) ** (1.0 / n))


def sample_sphere(rng: np.random.Generator, count: int, n: int, radius: float) -> np.ndarray:
    d = rng.standard_normal((count, n))
    return radius * d / np.linalg.norm(d, axis=1, keepdims=True)


def map_chunks(fn: Callable, X, threads: int = 1, chunk: int = CHUNK):
    """Apply ``fn`` to consecutive row blocks of X and concatenate in order.

    ``fn`` returns an array or a tuple of arrays with the batch on axis 0.
    Blocks have a fixed size, so the result is independent of ``threads``.
    """
    X = np.asarray(X)
    blocks = [X[i:i + chunk] for i in range(0, len(X), chunk)] or [X]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def _flow(out: MoserOutput, X, steps=None, threads=1):
    def run(b):
        r = out.forward(b, steps)
        return r.x, r.kappa, r.residual
    return map_chunks(run, X, threads)


# --- Poisson linearization -----------------------------------------------

def rk4_slopes(out: MoserOutput, points, steps=SLOPE_STEPS, threads: int = 1):
    """Observed orders log2(d_N / d_2N) with d_N = max |F1_N - F1_2N| per point."""
    xs = [_flow(out, points, N, threads)[0] for N in steps]
    d = np.array([np.abs(xs[i] - xs[i + 1]).max(axis=1) for i in range(len(xs) - 1)])
    return np.log2(d[:-1] / d[1:]), d


def verify_linearization(p: Pipeline, points: int = 50, radius: float = 0.2, seed: int = 0,
                         tol: float = 1e-5, steps: Optional[int] = None, threads: int = 1,
                         slope: bool = False, moser: Optional[MoserOutput] = None,
                         name: str = "linearize") -> ExperimentReport:
    """Linearization residuals for L = Exp o F1 on a sample ball.

    Checks: Poisson pushforward of the Lie-Poisson structure against pi_{G*},
    DL(0) = I, equivariance of Exp, sigma_psi = sigma along F1, the
    contraction identity and the bisection consistency A(psi)(F1 mu) = mu.
    L itself is not equivariant in general since sigma is not invariant.
    With ``slope`` the observed RK4 order is reported as |order - 4|.
    """
    me = p.me
    n = p.n
    steps = steps or p.numerics.rk4_steps
    h = p.numerics.fd_step
    rng = np.random.default_rng(seed)
    X = sample_ball(rng, points, n, radius)
    xi = rng.standard_normal(n)
    kap = sample_ball(rng, points, n, 0.5)
    out = moser or moser_linearize(me, steps)
    rep = ExperimentReport(name, seed, points, radius,
                           numerics=dict(p.numerics.as_dict(), rk4_steps=steps))

    pts, s = stencil(X, h)
    z0, s0 = stencil(np.zeros((1, n)), h)
    allp = np.concatenate([X, pts.reshape(-1, n), z0.reshape(-1, n)])
    x1, k1, res1 = _flow(out, allp, steps, threads)
    L = map_chunks(me, x1, threads)
    B = points
    o1, o2 = B, B + 2 * n * B

    # Poisson pushforward
    J = np.swapaxes(stencil_derivative(L[o1:o2].reshape(2 * n, B, n), s), 1, 2)   # (B, k, i)
    push = J @ p.lie_poisson(X) @ np.swapaxes(J, 1, 2)
    target = pi_gstar(p.group)(L[:B])
    rep.add("poisson_pushforward", np.abs(push - target).reshape(B, -1).max(axis=1), tol)

    # tangent map at the origin
    J0 = np.swapaxes(stencil_derivative(L[o2:].reshape(2 * n, 1, n), s0), 1, 2)[0]
    rep.add("tangent_identity", np.abs(J0 - np.eye(n)).max(), max(tol / 10, 1e-6))

    # equivariance
    rep.add("exp_equivariance", me.equivariance_residual(kap, X), 1e-8)

    # sigma_psi = sigma along F1
    dPhi = stencil_derivative(x1[o1:o2].reshape(2 * n, B, n), s)
    dK = stencil_derivative(k1[o1:o2].reshape(2 * n, B, n), s)
    lhs = sigma_psi_matrices(me.gf, x1[:B], k1[:B], dPhi, dK)
    sig = dPhi @ me.sigma(x1[:B]) @ np.swapaxes(dPhi, 1, 2)
    rep.add("sigma_psi", np.abs(lhs - sig).reshape(B, -1).max(axis=1), tol)

    # contraction identity for (Exp, sigma)
    rep.add("contraction", me.contraction_residual(X, xi), tol)

    rep.add("bisection_consistency", res1[:B], tol)

    if slope:
        probe = sample_sphere(rng, 3, n, SLOPE_RADIUS * min(1.0, p.group.radius / 0.3))
        orders, _ = rk4_slopes(out, probe, threads=threads)
        rep.add("rk4_order", np.abs(orders - 4.0).ravel(), 0.3)

    rep.table = {"mu": X, "exp": map_chunks(me, X, threads), "F1": x1[:B],
                 "pushforward": rep.checks[0].max_residual,
                 "point_residuals": np.abs(push - target).reshape(B, -1).max(axis=1)}
    return rep


def verify_scaling_laws(p: Pipeline, ts=(0.25, 0.5, 0.75), points: int = 5,
                        radius: float = 0.2, seed: int = 0, tol: float = 1e-5,
                        steps: Optional[int] = None,
                        moser: Optional[MoserOutput] = None) -> ExperimentReport:
    """Relative residuals of the sigma, pi, a and psi scaling laws against rebuilt doubles."""
    rng = np.random.default_rng(seed)
    X = sample_ball(rng, points, p.n, radius)
    steps = steps or p.numerics.rk4_steps
    res = scaling_laws_check(p, ts, X, steps=steps, flow_base=moser)
    rep = ExperimentReport("scaling-laws", seed, points, radius,
                           numerics=dict(p.numerics.as_dict(), rk4_steps=steps))
    for law in ("sigma", "pi", "a", "psi"):
        rep.add(f"{law}_law", [res[t][law] for t in sorted(res)], tol)
    return rep


# --- lambda map and the chi bisection ------------------------------------

def lambda_map(me: ModifiedExp, u, tol: float = 1e-9):
    """lambda(u) = u^-1 exp(j(mu)) for u = Exp(mu), given as chart coordinates of u.

    Returns representation matrices of elements of G.
    """
    g = me.group
    eta = np.atleast_2d(np.asarray(u, dtype=float))
    mu = me.inverse(eta)
    lam = g.chart_inv(-eta) @ g.mexp(me.jmap(mu))
    off = np.abs(g.mlog(lam, tol=None)[..., g.hi]).max(initial=0.0)
    if off > tol:
        raise DomainError(f"lambda(u) left G (h-component {off:.2e})")
    return lam[0] if np.ndim(u) == 1 else lam


def lambda_equivariance_residual(me: ModifiedExp, kappa, u):
    """|lambda(g . u) - (u^-1 * g) lambda(u) g^-1| per point, g = exp(kappa) in G."""
    g = me.group
    K = np.atleast_2d(kappa)
    eta = np.atleast_2d(u)
    ge = g.mexp(g.embed_g(K))
    gu, ug = g.factorize(ge @ g.chart_inv(eta))
    lhs = lambda_map(me, g.chart(gu))
    rhs = ug @ lambda_map(me, eta) @ g.inv(ge)
    return np.abs(lhs - rhs).reshape(len(eta), -1).max(axis=1)


def twisted_diagonal_generators(group, xi, u1):
    """(xi_1, xi_2) = (xi, pr_g Ad_{u1^-1} xi) for u1 in chart coordinates."""
    xi = np.asarray(xi, dtype=float)
    eta = np.atleast_2d(np.asarray(u1, dtype=float))
    xib = np.broadcast_to(xi, eta.shape[:-1] + xi.shape[-1:])
    xi2 = group.adjoint(group.chart_inv(-eta), group.embed_g(xib))[..., group.gi]
    if np.ndim(u1) == 1:
        return xi.copy(), xi2[0]
    return np.array(xib), xi2


def chart_mult(group, eta1, eta2):
    """Chart coordinates of u1 u2."""
    return group.chart(group.chart_inv(eta1) @ group.chart_inv(eta2))


def twisted_relation_residual(group, xi, eta1, eta2, h: float = 1e-4):
    """|DMult(v1, v2) - v| for the dressing generators of (xi_1, xi_2) and xi at u1 u2."""
    xi1, xi2 = twisted_diagonal_generators(group, xi, eta1)
    v1 = group.dressing_generator(xi1, eta1)
    v2 = group.dressing_generator(xi2, eta2)
    dm = (chart_mult(group, eta1 + h * v1, eta2 + h * v2)
          - chart_mult(group, eta1 - h * v1, eta2 - h * v2)) / (2 * h)
    v = group.dressing_generator(xi1, chart_mult(group, eta1, eta2))
    return np.abs(dm - v).max(axis=-1)


@dataclass(frozen=True)
class ChiBisection:
    """chi(u1, u2) = (e, lambda(u1)) on G* x G*; A(chi)(u1, u2) = (u1, lambda(u1) . u2)."""
    me: ModifiedExp

    def A(self, eta1, eta2):
        g = self.me.group
        lam = lambda_map(self.me, np.atleast_2d(eta1))
        u2 = g.factorize(lam @ g.chart_inv(np.atleast_2d(eta2)))[0]
        out = np.atleast_2d(eta1).copy(), g.chart(u2)
        if np.ndim(eta1) == 1:
            return out[0][0], out[1][0]
        return out

    def intertwining_residual(self, xi, eta1, eta2, h: float = 1e-4):
        """D A(chi) maps the diagonal generator of xi to the twisted diagonal one."""
        g = self.me.group
        e1, e2 = np.atleast_2d(eta1), np.atleast_2d(eta2)
        xib = np.broadcast_to(xi, e1.shape)
        v1 = g.dressing_generator(xib, e1)
        v2 = g.dressing_generator(xib, e2)
        p1, p2 = self.A(e1 + h * v1, e2 + h * v2)
        m1, m2 = self.A(e1 - h * v1, e2 - h * v2)
        d1, d2 = (p1 - m1) / (2 * h), (p2 - m2) / (2 * h)
        a1, a2 = self.A(e1, e2)
        xi1, xi2 = twisted_diagonal_generators(g, xi, a1)
        w1 = g.dressing_generator(xi1, a1)
        w2 = g.dressing_generator(xi2, a2)
        return np.maximum(np.abs(d1 - w1).max(axis=1), np.abs(d2 - w2).max(axis=1))

    def constant_section_residual(self, xi, eta1, h: float = 1e-4):
        """Ad(chi) sends the constant section (xi, xi) to (xi, pr_g Ad_{u1^-1} xi).

        Second slot: Ad_{lambda(u1)} xi - (D lambda [v]) lambda^-1 with v the
        dressing generator of xi at u1.
        """
        g = self.me.group
        e1 = np.atleast_2d(eta1)
        xib = np.broadcast_to(xi, e1.shape)
        v = g.dressing_generator(xib, e1)
        lam = lambda_map(self.me, e1)
        dlam = (lambda_map(self.me, e1 + h * v) - lambda_map(self.me, e1 - h * v)) / (2 * h)
        lhs = g.adjoint(lam, g.embed_g(xib)) - g.rep.coords(dlam @ g.inv(lam))
        want = twisted_diagonal_generators(g, xi, e1)[1]
        return np.maximum(np.abs(lhs[:, g.gi] - want).max(axis=1),
                          np.abs(lhs[:, g.hi]).max(axis=1))


def chi_bisection(me: ModifiedExp) -> ChiBisection:
    return ChiBisection(me)


# --- functoriality -----------------------------------------------------------

@dataclass(frozen=True)
class DualMorphism:
    """A bialgebra morphism nu: g1 -> g2 with the integrated dual morphism T: G2* -> G1*.

    ``nu`` is the (n2, n1) matrix of nu, so tau = nu^T maps g2* to g1*.  ``T``
    acts on chart coordinates and must be a group homomorphism with T_e T = tau.
    """
    p1: Pipeline
    p2: Pipeline
    nu: np.ndarray
    T: Callable
    name: str = "morphism"
    identity: bool = False     # nu = id and T = id, so sigma_2' = 0 exactly

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.nu, dtype=float).T

    def compatibility(self) -> dict:
        """Residuals of nu being a Lie algebra morphism and of lambda_2 nu = (nu x nu) lambda_1."""
        nu = np.asarray(self.nu, dtype=float)
        f1, f2 = self.p1.bialgebra.g.f, self.p2.bialgebra.g.f
        lhs = np.einsum("abc,ic->abi", f1, nu)
        rhs = np.einsum("ia,jb,ijk->abk", nu, nu, f2)
        l1, l2 = self.p1.bialgebra.lam, self.p2.bialgebra.lam
        clhs = np.einsum("ia,ipq->apq", nu, l2)
        crhs = np.einsum("abc,pb,qc->apq", l1, nu, nu)
        return {"bracket": float(np.abs(lhs - rhs).max(initial=0.0)),
                "cobracket": float(np.abs(clhs - crhs).max(initial=0.0))}

    def Phi(self, mu2):
        """Exp1^-1 o T o Exp2 and its Jacobian."""
        me1, me2 = self.p1.me, self.p2.me
        X = np.atleast_2d(mu2)
        y = me1.inverse(self.T(me2(X)))
        Z2 = me2.frames(X)[2][..., me2.group.hi, :]
        Z1 = me1.frames(y)[2][..., me1.group.hi, :]
        D = np.linalg.solve(Z1, self.tau @ Z2)
        return y, D

    def pulled_sigma1(self, mu2):
        """Phi^* sigma_1 at a batch of points."""
        y, D = self.Phi(mu2)
        return np.swapaxes(D, -1, -2) @ self.p1.me.sigma(y) @ D

    def sigma_prime(self, mu2):
        """sigma_2' = sigma_2 - Phi^* sigma_1, the twist of (Exp1, sigma1)^-1 o T o (Exp2, sigma2)."""
        X = np.atleast_2d(mu2)
        if self.identity:
            S = np.zeros(X.shape + X.shape[-1:])
        elif sigma_vanishes(self.p1.me):
            S = self.p2.me.sigma(X)
        else:
            S = self.p2.me.sigma(X) - self.pulled_sigma1(X)
        return S[0] if np.ndim(mu2) == 1 else S

    def sigma_prime_a1(self):
        """(sigma_2', a_1') evaluator for the scaling family of sigma_2'.

        a_1 is linear in the form, so the sigma_2 part reuses the dedicated
        evaluator and only Phi^* sigma_1 goes through generic quadrature.
        """
        if self.identity:
            return None
        sa2 = self.p2.me.sigma_and_a1
        if sigma_vanishes(self.p1.me):
            return sa2
        sa1 = scaling_sigma_a1(self.pulled_sigma1, self.p2.numerics.moser_nodes)

        def ev(Y):
            S2, A2 = sa2(Y)
            S1, A1 = sa1(Y)
            return S2 - S1, A2 - A1
        return ev


def sigma_vanishes(me: ModifiedExp) -> bool:
    """sigma is identically zero for an abelian g with r = 0."""
    return me.sigma_vanishes


def identity_morphism(p: Pipeline) -> DualMorphism:
    return DualMorphism(p, p, np.eye(p.n), lambda eta: np.array(eta, dtype=float), "identity",
                        identity=True)


def block_morphism(p1: Pipeline, p2: Pipeline, name: str = "block") -> DualMorphism:
    """Inclusion g1 -> g2 as the top-left block of matrices; T restricts to that block.

    Both pipelines must use matrix representations in which H consists of
    upper triangular matrices, so that the block restriction is a homomorphism.
    """
    r1, r2 = p1.group.rep, p2.group.rep
    k = r1.N
    gi1 = p1.group.gi
    nu = np.zeros((p2.n, p1.n))
    for a in range(p1.n):
        M = np.zeros((r2.N, r2.N), dtype=r2.mats.dtype)
        M[:k, :k] = r1.mats[gi1[a]]
        c = r2.coords(M, tol=1e-10)
        if np.abs(c[p2.group.hi]).max() > 1e-10:
            raise DomainError("block inclusion does not map g1 into g2")
        nu[:, a] = c[p2.group.gi]

    def T(eta2):
        u = p2.group.chart_inv(np.asarray(eta2, dtype=float))
        return p1.group.chart(np.ascontiguousarray(u[..., :k, :k]))

    return DualMorphism(p1, p2, nu, T, name)


def u1_into_u2(numerics: Numerics = Numerics()) -> DualMorphism:
    from .registry import lu_weinstein_pipeline
    return block_morphism(lu_weinstein_pipeline("u", 1, numerics),
                          lu_weinstein_pipeline("u", 2, numerics), "u1-into-u2")


@dataclass(frozen=True)
class FunctorialMaps:
    """psi_1's flow, the Moser flow of sigma_2' and the composite diagram maps."""
    mor: DualMorphism
    flow1: MoserOutput
    flow2p: Optional[MoserOutput]     # None when sigma_2' = 0, so that F1' = id

    def z(self, Y, steps=None):
        """A(psi_2'')^-1 (y) = Ad*_{exp(-nu kappa_1)} y with kappa_1 from F1 at tau y."""
        r = self.flow1.forward(Y @ self.mor.nu, steps)
        return coadjoint_exp(self.mor.p2.me.gf, -(r.kappa @ self.mor.nu.T), Y), r

    def lhs(self, Y, steps=None):
        """T o Exp2 o A(psi_2)^-1 and Exp2 o A(psi_2)^-1."""
        z, _ = self.z(Y, steps)
        w = z if self.flow2p is None else self.flow2p.F1(z, steps)
        e2 = self.mor.p2.me(w)
        return self.mor.T(e2), e2

    def rhs(self, Y, steps=None):
        _, r = self.z(Y, steps)
        return self.mor.p1.me(r.x)


def functorial_maps(mor: DualMorphism, steps: Optional[int] = None,
                    flow1: Optional[MoserOutput] = None) -> FunctorialMaps:
    steps = steps or mor.p2.numerics.rk4_steps
    flow1 = flow1 or moser_linearize(mor.p1.me, steps)
    sa = mor.sigma_prime_a1()
    flow2p = None
    if sa is not None:
        flow2p = moser_from_sigma_a1(mor.p2.me.gf, sa, steps, orientation=flow1.orientation)
    return FunctorialMaps(mor, flow1, flow2p)


def verify_functoriality(mor: DualMorphism, points: int = 30, radius: float = 0.15,
                         seed: int = 0, tol: float = 1e-5, steps: Optional[int] = None,
                         threads: int = 1, certificate_points: int = 8,
                         name: str = "functoriality") -> ExperimentReport:
    """Commutativity of T o Exp2 o A(psi_2)^-1 = Exp1 o A(psi_1)^-1 o tau.

    psi_2 = psi_2'' psi_2' with psi_2'' the pullback of psi_1 under nu and
    psi_2' from the Moser flow of sigma_2'.  Also reported: compatibility of
    nu, T_e T = tau, T Poisson, and the certificate that Exp2 o A(psi_2)^-1
    pushes the Lie-Poisson structure to pi_{G2*}.
    """
    p1, p2 = mor.p1, mor.p2
    steps = steps or p2.numerics.rk4_steps
    h = p2.numerics.fd_step
    rng = np.random.default_rng(seed)
    Y = sample_ball(rng, points, p2.n, radius)
    rep = ExperimentReport(name, seed, points, radius,
                           numerics=dict(p2.numerics.as_dict(), rk4_steps=steps))
    comp = mor.compatibility()
    rep.add("nu_bracket", comp["bracket"], 1e-10)
    rep.add("nu_cobracket", comp["cobracket"], 1e-10)

    # T_e T = tau and T Poisson
    z0, s0 = stencil(np.zeros((1, p2.n)), h)
    DT0 = np.swapaxes(stencil_derivative(mor.T(z0.reshape(-1, p2.n)).reshape(2 * p2.n, 1, p1.n),
                                         s0), 1, 2)[0]
    rep.add("tangent_tau", np.abs(DT0 - mor.tau).max(), 1e-8)
    E = sample_ball(rng, points, p2.n, radius)
    pts, s = stencil(E, h)
    DT = np.swapaxes(stencil_derivative(mor.T(pts.reshape(-1, p2.n)).reshape(2 * p2.n, points, p1.n),
                                        s), 1, 2)
    push = DT @ pi_gstar(p2.group)(E) @ np.swapaxes(DT, 1, 2)
    rep.add("T_poisson", np.abs(push - pi_gstar(p1.group)(mor.T(E))).reshape(points, -1).max(axis=1),
            1e-7)

    maps = functorial_maps(mor, steps)

    def diagram(b):
        return np.abs(maps.lhs(b, steps)[0] - maps.rhs(b, steps)).max(axis=1)

    rep.add("diagram", map_chunks(diagram, Y, threads), tol)

    # certificate: Exp2 o A(psi_2)^-1 is a Poisson linearization of G2*
    if certificate_points:
        C = Y[:certificate_points]
        m = len(C)
        pts, s = stencil(C, h)
        L = map_chunks(lambda b: maps.lhs(b, steps)[1], np.concatenate([C, pts.reshape(-1, p2.n)]),
                       threads)
        J = np.swapaxes(stencil_derivative(L[m:].reshape(2 * p2.n, m, p2.n), s), 1, 2)
        push = J @ p2.lie_poisson(C) @ np.swapaxes(J, 1, 2)
        rep.add("certificate_pushforward",
                np.abs(push - pi_gstar(p2.group)(L[:m])).reshape(m, -1).max(axis=1), tol)
    return rep


# --- orbit products -------------------------------------------------------

def _orthonormal_to(x, rng):
    """Unit vectors orthogonal to the rows of x."""
    w = rng.standard_normal(x.shape)
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    xh = np.where(nx > 1e-14, x / np.where(nx > 0, nx, 1), 0.0)
    w -= np.sum(w * xh, axis=1, keepdims=True) * xh
    return w / np.linalg.norm(w, axis=1, keepdims=True), xh


def decompose_product(me: ModifiedExp, target, r_left: float, r_right: float, rng,
                      maxit: int = 60, tol: float = 1e-13, h: float = 1e-6):
    """Find y on the sphere of radius r_right with |Exp^-1(u Exp(y)^-1)| = r_left.

    ``target`` holds chart coordinates of u.  Gauss-Newton with the
    minimal-norm step on the sphere, seeded by the flat triangle.  Returns
    (y, x_left, residual) with residual = ||x_left| - r_left|.
    """
    g = me.group
    U = g.chart_inv(np.atleast_2d(target))
    x = me.inverse(np.atleast_2d(target))
    B, n = x.shape
    w, xh = _orthonormal_to(x, rng)
    nx = np.linalg.norm(x, axis=1)
    c = np.where(nx > 1e-14, (nx ** 2 + r_right ** 2 - r_left ** 2) / (2 * np.maximum(nx, 1e-300)), 0.0)
    c = np.clip(c, -r_right, r_right)
    y = c[:, None] * xh + np.sqrt(np.maximum(r_right ** 2 - c ** 2, 0.0))[:, None] * w

    def resid(Yv):
        left = me.inverse(g.chart(U @ g.inv(me.exp_group(Yv))))
        return np.linalg.norm(left, axis=1) - r_left, left

    if r_right == 0.0:
        F, left = resid(np.zeros_like(x))
        return np.zeros_like(x), left, np.abs(F)
    for _ in range(maxit):
        F, left = resid(y)
        if np.abs(F).max() <= tol:
            break
        # tangent frame of the sphere at y
        yh = y / r_right
        t1, _ = _orthonormal_to(yh, rng)
        t2 = np.cross(yh, t1) if n == 3 else _orthonormal_to(np.stack([yh, t1]).sum(0), rng)[0]
        grad = np.stack([(resid(y + h * t)[0] - resid(y - h * t)[0]) / (2 * h) for t in (t1, t2)],
                        axis=1)
        gn = np.sum(grad ** 2, axis=1)
        step = -(F / np.where(gn > 0, gn, 1.0))[:, None] * grad
        step = np.clip(step, -0.5 * r_right, 0.5 * r_right)
        y = y + step[:, :1] * t1 + step[:, 1:] * t2
        y = r_right * y / np.linalg.norm(y, axis=1, keepdims=True)
    F, left = resid(y)
    return y, left, np.abs(F)


def minkowski_oracle(r1: float, r2: float, n: int = 3, pairs: int = 10000, bins: int = 20,
                     seed: int = 0) -> dict:
    """Brute-force check of O1 + O2 = {|r1 - r2| <= |x| <= r1 + r2} for round spheres."""
    rng = np.random.default_rng(seed)
    s = np.linalg.norm(sample_sphere(rng, pairs, n, r1) + sample_sphere(rng, pairs, n, r2), axis=1)
    lo, hi = abs(r1 - r2), r1 + r2
    outside = np.maximum(np.maximum(lo - s, s - hi), 0.0)
    # |s|^2 is uniform on [lo^2, hi^2] for independent uniform directions
    span = max(hi ** 2 - lo ** 2, 1e-300)
    gaps = [(s.min() ** 2 - lo ** 2) / span, (hi ** 2 - s.max() ** 2) / span] if hi > lo else [0.0]
    if hi > lo:
        counts = np.histogram(s, bins=bins, range=(lo, hi))[0]
        empty = int(np.sum(counts == 0))
    else:
        empty = 0
    return {"outside": float(outside.max()), "edge_gap": float(max(gaps)), "empty_bins": empty}


def orbit_product_check(p: Pipeline, r1: float = 0.06, r2: float = 0.1, samples: int = 100,
                        seed: int = 0, tol: float = 1e-6, oracle_pairs: int = 10000,
                        name: str = "orbit-product") -> ExperimentReport:
    """Two-sided test of Exp(O1 + O2) = D1 D2 for round coadjoint orbits.

    Coadjoint orbits must be Euclidean spheres in the chosen coordinates
    (true for su(2) in the Lu-Weinstein basis).
    """
    if r1 < 0 or r2 < 0 or r1 + r2 > 0.2 + 1e-12:
        raise DomainError("orbit radii must be non-negative with r1 + r2 <= 0.2")
    me = p.me
    n = p.n
    rng = np.random.default_rng(seed)
    rep = ExperimentReport(name, seed, samples, r1 + r2, numerics=p.numerics.as_dict())
    lo, hi = abs(r1 - r2), r1 + r2
    orc = minkowski_oracle(r1, r2, n, oracle_pairs, seed=seed)
    rep.add("oracle_inside_annulus", orc["outside"], 1e-12)
    rep.add("oracle_reaches_bounds", orc["edge_gap"], 1e-3)
    rep.add("oracle_empty_bins", orc["empty_bins"], 0)

    # D1 D2 inside Exp(annulus)
    u1 = me.exp_group(sample_sphere(rng, samples, n, r1))
    u2 = me.exp_group(sample_sphere(rng, samples, n, r2))
    prod = p.group.chart(u1 @ u2)
    x = me.inverse(prod)
    nx = np.linalg.norm(x, axis=1)
    rep.add("product_in_annulus", np.maximum(np.maximum(lo - nx, nx - hi), 0.0), tol)

    # Exp(annulus) inside D1 D2
    d = sample_sphere(rng, samples, n, 1.0)
    xs = d * rng.uniform(lo, hi, size=(samples, 1))
    _, _, res = decompose_product(me, me(xs), r1, r2, rng)
    rep.add("annulus_in_product", res, tol)

    # D1 D2 inside D2 D1
    _, _, res = decompose_product(me, prod, r2, r1, rng)
    rep.add("commutation", res, tol)
    return rep


# --- addition versus multiplication --------------------------------------

def product_structure(f) -> np.ndarray:
    """Structure constants of g + g (block diagonal)."""
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    F = np.zeros((2 * n,) * 3)
    F[:n, :n, :n] = f
    F[n:, n:, n:] = f
    return F


def twist_from_theta(f, Phi, dPhi, th):
    """-d <Phi, theta> for a g-valued 1-form theta = k^-1 dk and a g*-valued map Phi.

    ``dPhi`` and ``th`` have shape (B, i, c): derivative index first.
    """
    t1 = np.einsum("zic,zjc->zij", dPhi, th)
    br = np.einsum("zia,zjb,abc->zijc", th, th, f)
    return np.einsum("zc,zijc->zij", Phi, br) - t1 + np.swapaxes(t1, 1, 2)


@dataclass(frozen=True)
class AddMult:
    """Maps on g* x g* for comparing addition with multiplication in G*.

    Points of the product are rows (mu_1, mu_2) of length 2n.
    """
    p: Pipeline

    @property
    def n(self) -> int:
        return self.p.n

    def split(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return Y[:, :self.n], Y[:, self.n:]

    def chi_tilde(self, Y):
        """A(chi~)(mu_1, mu_2) = (mu_1, Ad*_{k(mu_1)} mu_2), k = lambda(Exp mu_1)."""
        m1, m2 = self.split(Y)
        k = self.p.me.lam(m1)
        return np.concatenate([m1, self.p.group.coadjoint(k, m2)], axis=1)

    def exp_mult(self, Y):
        """Mult o (Exp x Exp) o A(chi~) = chart of pr_H(exp(j mu_1) exp(j mu_2))."""
        g, me = self.p.group, self.p.me
        m1, m2 = self.split(Y)
        d = g.mexp(me.jmap(m1)) @ g.mexp(me.jmap(m2))
        return g.chart(g.factorize(d)[0])

    def m(self, Y):
        return self.p.me.inverse(self.exp_mult(Y))

    def sigma_prime(self, Y, with_m: bool = False):
        """sigma' = sigma_chi~ + A(chi~)^*(sigma + sigma) - m^* sigma."""
        g, me, f = self.p.group, self.p.me, self.p.me.gf
        n = self.n
        m1, m2 = self.split(Y)
        B = len(m1)
        gi, hi = g.gi, g.hi
        _, k, Z1 = me.frames(m1)
        w = Z1[:, gi, :]                                      # dk k^-1 per d mu_1
        Aki = g.Ad(g.inv(k))[:, gi[:, None], gi[None, :]]     # Ad_{k^-1} on g
        th = np.swapaxes(Aki @ w, 1, 2)                       # (B, j, c): k^-1 dk
        nu2 = np.einsum("zba,zb->za", Aki, m2)                # Ad*_k mu_2

        # sigma_chi~ = -d <mu_2, k^* theta^L> on the product
        TH = np.zeros((B, 2 * n, n))
        TH[:, :n] = th
        DP = np.zeros((B, 2 * n, n))
        DP[:, n:] = np.eye(n)
        S = twist_from_theta(f, m2, DP, TH)

        # A(chi~)^*(sigma + sigma)
        C = -np.einsum("zaj,abc,zc->zbj", w, f, nu2)
        D = np.zeros((B, 2 * n, 2 * n))
        D[:, :n, :n] = np.eye(n)
        D[:, n:, :n] = C
        D[:, n:, n:] = np.swapaxes(Aki, 1, 2)

        # m^* sigma via left-trivialized derivatives of exp(x_1) exp(x_2) = h k
        x1, x2 = me.jmap(m1), me.jmap(m2)
        dd = g.mexp(x1) @ g.mexp(x2)
        h, kk = g.factorize(dd)
        W = np.concatenate([g.Ad(g.mexp(-x2)) @ phi(g.ad(x1)) @ me.J,
                            phi(g.ad(x2)) @ me.J], axis=2)
        Hh = (g.Ad(kk) @ W)[:, hi, :]
        mm = me.inverse(g.chart(h))
        Zm = me.frames(mm)[2][:, hi, :]
        Dm = np.linalg.solve(Zm, Hh)

        sig = me.sigma(np.concatenate([m1, nu2, mm]))
        Sd = np.zeros((B, 2 * n, 2 * n))
        Sd[:, :n, :n] = sig[:B]
        Sd[:, n:, n:] = sig[B:2 * B]
        S = S + np.swapaxes(D, 1, 2) @ Sd @ D
        S = S - np.swapaxes(Dm, 1, 2) @ sig[2 * B:] @ Dm
        return (S, mm) if with_m else S

    def sigma_a1(self):
        return scaling_sigma_a1(self.sigma_prime, self.p.numerics.moser_nodes)


@dataclass(frozen=True)
class AddMultMaps:
    """The flows behind phi = phi'' o phi' o chi~^-1 and both sides of the diagram."""
    am: AddMult
    flow: MoserOutput               # psi, from the linearization of G*
    flowp: Optional[MoserOutput]    # phi', None when sigma' = 0

    def inner(self, Y, steps=None):
        """(z, w, x_1): z = A(phi'')^-1 y, w = A(phi')^-1 z and x_1 = F1(y_1 + y_2)."""
        n = self.am.n
        Y = np.atleast_2d(Y)
        r = self.flow.forward(Y[:, :n] + Y[:, n:], steps)
        f = self.am.p.me.gf
        z = np.concatenate([coadjoint_exp(f, -r.kappa, Y[:, :n]),
                            coadjoint_exp(f, -r.kappa, Y[:, n:])], axis=1)
        w = z if self.flowp is None else self.flowp.F1(z, steps)
        return z, w, r.x

    def sides(self, Y, steps=None):
        """Mult o (Exp x Exp) o A(phi)^-1 and Exp o A(psi)^-1 o Add at Y."""
        z, w, x1 = self.inner(Y, steps)
        return self.am.exp_mult(w), self.am.p.me(x1), z, w

    def product_linearization(self, Y, steps=None):
        """(Exp x Exp) o A(phi)^-1 at Y, as rows (eta_1, eta_2)."""
        n = self.am.n
        _, w, _ = self.inner(Y, steps)
        c = self.am.chi_tilde(w)
        me = self.am.p.me
        return np.concatenate([me(c[:, :n]), me(c[:, n:])], axis=1)


def addmult_maps(p: Pipeline, steps: Optional[int] = None,
                 flow: Optional[MoserOutput] = None) -> AddMultMaps:
    steps = steps or p.numerics.rk4_steps
    flow = flow or moser_linearize(p.me, steps)
    am = AddMult(p)
    flowp = None
    if not sigma_vanishes(p.me):
        flowp = moser_from_sigma_a1(product_structure(p.me.gf), am.sigma_a1(), steps,
                                    orientation=flow.orientation)
    return AddMultMaps(am, flow, flowp)


def verify_addmult(p: Pipeline, points: int = 30, radius: float = 0.1, seed: int = 0,
                   tol: float = 1e-4, steps: Optional[int] = None, threads: int = 1,
                   certificate_points: int = 1, sub_checks: bool = True,
                   name: str = "addmult") -> ExperimentReport:
    """Mult o (Exp x Exp) o A(phi)^-1 = Exp o A(psi)^-1 o Add on pairs from the ball.

    Also reported: m o A(phi')^-1 = Add for the equivariant Moser step, the
    lambda equivariance, the chi intertwining properties and, on a few
    pairs, that (Exp x Exp) o A(phi)^-1 is Poisson (sigma_phi = sigma + sigma).
    """
    n = p.n
    steps = steps or p.numerics.rk4_steps
    h = p.numerics.fd_step
    rng = np.random.default_rng(seed)
    Y = np.concatenate([sample_ball(rng, points, n, radius),
                        sample_ball(rng, points, n, radius)], axis=1)
    rep = ExperimentReport(name, seed, points, radius,
                           numerics=dict(p.numerics.as_dict(), rk4_steps=steps))
    maps = addmult_maps(p, steps)
    am = maps.am

    def run(b):
        lhs, rhs, z, w = maps.sides(b, steps)
        mom = np.abs(am.m(w) - (z[:, :n] + z[:, n:])).max(axis=1)
        return np.abs(lhs - rhs).max(axis=1), mom

    diag, mom = map_chunks(run, Y, threads)
    rep.add("diagram", diag, tol)
    rep.add("moser_moment_map", mom, tol)

    if sub_checks:
        me, g = p.me, p.group
        U1 = sample_ball(rng, points, n, radius)
        U2 = sample_ball(rng, points, n, radius)
        K = sample_ball(rng, points, n, 0.5)
        xi = rng.standard_normal(n)
        ch = chi_bisection(me)
        rep.add("lambda_equivariance", lambda_equivariance_residual(me, K, U1), 1e-8)
        rep.add("chi_intertwining", ch.intertwining_residual(xi, U1, U2), 1e-6)
        rep.add("chi_constant_section", ch.constant_section_residual(xi, U1), 1e-6)
        rep.add("twisted_generators", twisted_relation_residual(g, xi, U1, U2), 1e-6)

    if certificate_points:
        C = Y[:certificate_points]
        m = len(C)
        pts, s = stencil(C, h)
        L = map_chunks(lambda b: maps.product_linearization(b, steps),
                       np.concatenate([C, pts.reshape(-1, 2 * n)]), threads)
        J = np.swapaxes(stencil_derivative(L[m:].reshape(4 * n, m, 2 * n), s), 1, 2)
        F = product_structure(p.me.gf)
        push = J @ (-np.einsum("abc,zc->zab", F, C)) @ np.swapaxes(J, 1, 2)
        pg = pi_gstar(p.group)
        tgt = np.zeros_like(push)
        tgt[:, :n, :n] = pg(L[:m, :n])
        tgt[:, n:, n:] = pg(L[:m, n:])
        rep.add("certificate_pushforward", np.abs(push - tgt).reshape(m, -1).max(axis=1), tol)
    return rep
