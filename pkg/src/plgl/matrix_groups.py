"""Matrix groups of a Manin triple: exp/log, Ad, the factorization D = H.G,
dressing actions and the logarithmic chart on G*.

All group routines accept stacks of matrices with shape ``(..., N, N)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lie_core import AlgebraError, ManinTriple

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50


class DomainError(RuntimeError):
    """A point left the germ domain (factorization, log branch, chart)."""


# --- batched matrix functions ---------------------------------------------

def _norm1(A):
    return np.abs(A).sum(axis=-2).max(axis=-1)


def expm(A):
    """Matrix exponential by scaling and squaring of a degree-14 Taylor polynomial.

    With the scaled 1-norm at most 1/4 the truncation remainder is below
    0.25**15 / 15! ~ 1e-21, far under double precision.
    """
    A = np.asarray(A)
    if A.shape[-1] == 0:
        return A.copy()
    nrm = float(np.max(_norm1(A))) if A.ndim > 2 else float(_norm1(A))
    s = max(0, int(np.ceil(np.log2(nrm / 0.25)))) if nrm > 0.25 else 0
    X = A / (2.0 ** s)
    eye = np.broadcast_to(np.eye(A.shape[-1], dtype=A.dtype), A.shape)
    E = eye + X / 14.0
    for k in range(13, 0, -1):
        E = eye + (X @ E) / k
    for _ in range(s):
        E = E @ E
    return E


def _sqrtm_db(M, iters=60, tol=1e-15):
    """Principal square root by the (product form) Denman-Beavers iteration."""
    Y = M.copy()
    Z = np.broadcast_to(np.eye(M.shape[-1], dtype=M.dtype), M.shape).copy()
    for _ in range(iters):
        Yi = np.linalg.inv(Y)
        Zi = np.linalg.inv(Z)
        Yn = 0.5 * (Y + Zi)
        Zn = 0.5 * (Z + Yi)
        done = np.max(np.abs(Yn - Y)) <= tol * max(1.0, np.max(np.abs(Yn)))
        Y, Z = Yn, Zn
        if done:
            break
    return Y


def logm(M, check: bool = False):
    """Principal logarithm near the identity.

    Inverse scaling and squaring brings ||M - I|| below 0.25, then
    log M = 2 atanh((M - I)(M + I)^-1) is summed as a series.  With
    ``check`` the result is verified by exponentiating back, and a
    DomainError is raised when the principal branch was not reached.
    """
    M = np.asarray(M)
    N = M.shape[-1]
    eye = np.eye(N, dtype=M.dtype)
    k = 0
    X = M
    while np.max(_norm1(X - eye)) > 0.25 and k < 30:
        X = _sqrtm_db(X)
        k += 1
    # X commutes with (X + I)^-1, so the side of the solve does not matter
    Z = np.linalg.solve(X + eye, X - eye)
    Z2 = Z @ Z
    eyeb = np.broadcast_to(eye, Z.shape)
    S = eyeb / 25.0
    for j in range(11, -1, -1):
        S = eyeb / (2 * j + 1) + Z2 @ S
    L = (2.0 ** (k + 1)) * (Z @ S)
    if check or k >= 30:
        res = np.abs(expm(L) - M).max() / max(1.0, float(np.abs(M).max()))
        if not np.isfinite(res) or res > 1e-9 or k >= 30:
            raise DomainError("log outside principal-branch domain")
    return L


def _series_terms(nrm: float, tol: float = 1e-17) -> int:
    K = 2
    while nrm ** (K + 1) / math.factorial(K + 2) * np.exp(nrm) > tol and K < 80:
        K += 1
    return K


def phi(Z, right: bool = False):
    """Left-trivialized dexp operator (1 - e^{-Z}) / Z; ``right`` gives (e^{Z} - 1) / Z.

    Horner evaluation of sum_k (-Z)^k / (k+1)!, with the number of terms
    chosen from the norm so the remainder stays below 1e-17.
    """
    X = np.asarray(Z) if right else -np.asarray(Z)
    K = _series_terms(float(np.max(_norm1(X))) if X.size else 0.0)
    eye = np.broadcast_to(np.eye(X.shape[-1], dtype=X.dtype), X.shape)
    P = eye / math.factorial(K + 1)
    for k in range(K - 1, -1, -1):
        P = eye / math.factorial(k + 1) + X @ P
    return P


def phi_family(Z, ts, right: bool = False, post=None):
    """phi(t Z) for every t in ``ts`` at once: array (T, ..., m, m).

    The powers of Z are formed once; the t-dependence enters only through
    the series coefficients, which turns the evaluation into one matrix
    product.  ``post`` (m, p) is multiplied on the right of every power first.
    """
    Z = np.asarray(Z)
    ts = np.asarray(ts, dtype=float)
    sgn = 1.0 if right else -1.0
    tmax = float(np.max(np.abs(ts))) if ts.size else 0.0
    K = _series_terms(tmax * (float(np.max(_norm1(Z))) if Z.size else 0.0))
    cur = np.broadcast_to(np.eye(Z.shape[-1], dtype=Z.dtype), Z.shape)
    if post is not None:
        cur = cur @ post
    P = np.empty((K + 1,) + cur.shape, dtype=np.result_type(Z, cur))
    P[0] = cur
    for j in range(1, K + 1):
        P[j] = Z @ P[j - 1]
    k = np.arange(K + 1)
    c = (sgn * ts[:, None]) ** k / np.array([math.factorial(j + 1) for j in k], dtype=float)
    return (c @ P.reshape(K + 1, -1)).reshape((len(ts),) + cur.shape)


def exp_family(X, ts):
    """exp(t X) for every t in ``ts``: array (T, ..., N, N).

    Shares the powers of X across all t; for large arguments it falls back
    to scaling and squaring per t.
    """
    X = np.asarray(X)
    ts = np.asarray(ts, dtype=float)
    nrm = (float(np.max(np.abs(ts))) if ts.size else 0.0) * (float(np.max(_norm1(X))) if X.size else 0.0)
    if nrm > 2.0:
        return np.stack([expm(t * X) for t in ts])
    K = 2
    while nrm ** (K + 1) / math.factorial(K + 1) * np.exp(nrm) > 1e-17:
        K += 1
    P = np.empty((K + 1,) + X.shape, dtype=X.dtype)
    P[0] = np.eye(X.shape[-1])
    for j in range(1, K + 1):
        P[j] = X @ P[j - 1]
    k = np.arange(K + 1)
    c = ts[:, None] ** k / np.array([math.factorial(j) for j in k], dtype=float)
    return (c.astype(P.dtype) @ P.reshape(K + 1, -1)).reshape((len(ts),) + X.shape)


def realify(C):
    """Complex (..., N, N) -> real (..., 2N, 2N) with block layout [[Re, -Im], [Im, Re]]."""
    C = np.asarray(C)
    top = np.concatenate([C.real, -C.imag], axis=-1)
    bot = np.concatenate([C.imag, C.real], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def unrealify(R):
    N = R.shape[-1] // 2
    return R[..., :N, :N] + 1j * R[..., N:, :N]


def _rq_positive(D):
    """Batched complex RQ: D = R Q with R upper triangular, positive diagonal, Q unitary."""
    N = D.shape[-1]
    P = np.eye(N)[::-1]
    # (P D)^H = Q1 R1  =>  D = (P R1^H P) (P Q1^H)
    Q1, R1 = np.linalg.qr(np.conj(np.swapaxes(P @ D, -1, -2)))
    R = P @ np.conj(np.swapaxes(R1, -1, -2)) @ P
    Q = P @ np.conj(np.swapaxes(Q1, -1, -2))
    d = np.diagonal(R, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    R = R / ph[..., None, :]
    Q = Q * ph[..., :, None]
    return R, Q


@dataclass(frozen=True)
class MatrixRep:
    """Matrices rho(e_i) for the basis of d, possibly complex with real coefficients."""
    mats: np.ndarray

    def __post_init__(self):
        m = np.array(self.mats)
        if not np.iscomplexobj(m):
            m = m.astype(float)
        m.setflags(write=False)
        object.__setattr__(self, "mats", m)
        V = self._flat(m).T
        pinv = np.linalg.pinv(V)
        pinv.setflags(write=False)
        object.__setattr__(self, "_pinv", pinv)
        object.__setattr__(self, "_V", V)

    @staticmethod
    def _flat(M):
        M = np.asarray(M)
        sh = M.shape[:-2] + (-1,)
        if np.iscomplexobj(M):
            return np.concatenate([M.real.reshape(sh), M.imag.reshape(sh)], axis=-1)
        return M.reshape(sh)

    @property
    def N(self) -> int:
        return self.mats.shape[-1]

    @property
    def dim(self) -> int:
        return self.mats.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.mats)

    def rho(self, x):
        return np.einsum("...i,ijk->...jk", np.asarray(x, dtype=float), self.mats)

    def coords(self, M, tol: Optional[float] = None):
        M = np.asarray(M)
        if self.is_complex and not np.iscomplexobj(M):
            M = M.astype(complex)
        v = self._flat(M)
        c = v @ self._pinv.T
        if tol is not None:
            res = np.abs(c @ self._V.T - v).max() if v.size else 0.0
            if res > tol:
                raise DomainError(f"matrix left the span of the representation (residual {res:.2e})")
        return c

    def homomorphism_violation(self, f) -> float:
        A = self.mats
        C = np.einsum("iab,jbc->ijac", A, A)
        comm = C - np.swapaxes(C, 0, 1)
        rhs = np.einsum("ijk,kab->ijab", f, A)
        return float(np.abs(comm - rhs).max())

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self._V))

    def realified(self) -> "MatrixRep":
        return MatrixRep(realify(self.mats)) if self.is_complex else self

    def scaled(self, S) -> "MatrixRep":
        """The representation rho o S for a linear map S on d-coordinates."""
        return MatrixRep(np.einsum("ji,jab->iab", np.asarray(S, dtype=float), self.mats))


def generic_rep(triple: ManinTriple) -> MatrixRep:
    """Adjoint representation extended by a nilpotent block for the abelianization.

    Faithful whenever center(d) and [d, d] intersect trivially.
    """
    f = triple.d.f
    m = triple.d.dim
    ad = np.transpose(f, (0, 2, 1))  # ad(e_i)[c, b] = f[i, b, c]
    D = f.reshape(-1, m)
    # functionals vanishing on [d, d]
    if np.any(D):
        _, s, vt = np.linalg.svd(D)
        rk = int(np.sum(s > 1e-10 * max(1.0, s[0])))
        C = vt[rk:]
    else:
        C = np.eye(m)
    k = C.shape[0]
    N = m + (k + 1 if k else 0)
    mats = np.zeros((m, N, N))
    mats[:, :m, :m] = ad
    if k:
        mats[:, m, m + 1:] = C.T
    rep = MatrixRep(mats)
    if rep.rank() != m:
        raise AlgebraError("generic representation is not faithful for this double")
    return rep


class ManinGroup:
    """Group-level engine of a Manin triple with a faithful matrix representation.

    The h-basis of the triple must be dual to the g-basis under the metric,
    so h-coordinates are g*-coordinates.
    """

    def __init__(self, triple: ManinTriple, rep: MatrixRep, factor: str = "newton",
                 radius: float = 0.3, newton_tol: float = NEWTON_TOL, newton_maxit: int = NEWTON_MAXIT):
        P = triple.pairing()
        if np.abs(P - np.eye(triple.n)).max() > 1e-10:
            raise AlgebraError("h-basis must be dual to the g-basis under the metric")
        if rep.dim != triple.d.dim:
            raise AlgebraError("representation dimension does not match the double")
        if factor not in ("newton", "iwasawa"):
            raise AlgebraError(f"unknown factorization method {factor!r}")
        self.triple = triple
        self.rep = rep
        self.factor_method = factor
        self.radius = float(radius)
        self.newton_tol = float(newton_tol)
        self.newton_maxit = int(newton_maxit)
        self.n = triple.n
        self.gi = triple.gi
        self.hi = triple.hi
        self.f = triple.d.f

    # -- algebra helpers
    def ad(self, x):
        return np.einsum("...a,abc->...cb", x, self.f)

    def embed_g(self, xi):
        return self.triple.embed_g(xi)

    def embed_h(self, mu):
        return self.triple.embed_h(mu)

    def check(self) -> dict:
        return {"homomorphism": self.rep.homomorphism_violation(self.f),
                "faithful": 0.0 if self.rep.rank() == self.triple.d.dim else 1.0}

    # -- group operations
    def rho(self, x):
        return self.rep.rho(x)

    def mexp(self, x):
        return expm(self.rep.rho(x))

    def mlog(self, g, tol: Optional[float] = 1e-8):
        """d-coordinates of the principal log; ``tol`` enables span and branch checks."""
        return self.rep.coords(logm(g, check=tol is not None), tol=tol)

    @staticmethod
    def inv(g):
        return np.linalg.inv(g)

    def identity(self, shape=()):
        N = self.rep.N
        dt = complex if self.rep.is_complex else float
        return np.broadcast_to(np.eye(N, dtype=dt), tuple(shape) + (N, N)).copy()

    def adjoint(self, g, zeta):
        """Coordinates of Ad_g zeta."""
        return self.rep.coords(g @ self.rep.rho(zeta) @ self.inv(g))

    def Ad(self, g, ginv=None):
        """Matrix of Ad_g on d-coordinates (columns are images of basis vectors)."""
        ginv = self.inv(g) if ginv is None else ginv
        imgs = g[..., None, :, :] @ self.rep.mats @ ginv[..., None, :, :]
        return np.swapaxes(self.rep.coords(imgs), -1, -2)

    # -- factorization d = h k with h in H (= G*) and k in G
    def factorize(self, d, refine: bool = False):
        """d = h k; ``refine`` adds a Newton polishing step to the direct (RQ) method."""
        d = np.asarray(d)
        if self.factor_method == "iwasawa":
            h, k = self._factor_iwasawa(d)
            return self._newton(d, h, k, maxit=1) if refine else (h, k)
        x = self.mlog(d, tol=None)
        h = self.mexp(self.embed_h(x[..., self.hi]))
        k = self.mexp(self.embed_g(x[..., self.gi]))
        return self._newton(d, h, k, maxit=self.newton_maxit)

    def _factor_iwasawa(self, d):
        if self.rep.is_complex:
            R, Q = _rq_positive(d)
            return R, Q
        R, Q = _rq_positive(unrealify(d))
        return realify(R), realify(Q)

    def _newton(self, d, h, k, maxit):
        for it in range(maxit):
            R = self.inv(h) @ d @ self.inv(k)
            e = self.mlog(R, tol=None)
            err = float(np.abs(e).max()) if e.size else 0.0
            if err <= self.newton_tol:
                return h, k
            h = h @ self.mexp(self.embed_h(e[..., self.hi]))
            k = self.mexp(self.embed_g(e[..., self.gi])) @ k
        if maxit == 1:
            return h, k
        R = self.inv(h) @ d @ self.inv(k)
        err = float(np.abs(self.mlog(R, tol=None)).max())
        if err > self.newton_tol:
            raise DomainError(f"factorization Newton did not converge in {maxit} iterations "
                              f"(residual {err:.2e}): outside germ domain")
        return h, k

    def pr_gstar(self, d):
        return self.factorize(d)[0]

    def pr_g(self, d):
        return self.factorize(d)[1]

    # -- chart on G*
    def chart(self, u):
        x = self.mlog(u)
        if np.abs(x[..., self.gi]).max(initial=0.0) > 1e-8:
            raise DomainError("element is not in H")
        return x[..., self.hi]

    def chart_inv(self, eta):
        return self.mexp(self.embed_h(eta))

    def dexp_h(self, eta, right: bool = False):
        """h-block of the (left or right) trivialized dexp at the h-element eta."""
        A = phi(self.ad(self.embed_h(eta)), right=right)
        return A[..., self.hi[:, None], self.hi[None, :]]

    # -- actions
    def dressing_generator(self, xi, eta):
        """Chart velocity of the dressing generator of xi at u = chart_inv(eta).

        Left-trivialized value -pr_h(Ad_{u^-1} xi); this is d/ds of
        exp(-s xi) . u at s = 0.
        """
        eta = np.asarray(eta, dtype=float)
        uinv = self.chart_inv(-eta)
        w = -self.adjoint(uinv, self.embed_g(xi))[..., self.hi]
        return np.linalg.solve(self.dexp_h(eta), w[..., None])[..., 0]

    def dressing_flow(self, g, u):
        """(g . u, u^-1 * g) from the factorization g u = (g . u)(u^-1 * g)."""
        return self.factorize(g @ u)

    def coadjoint(self, g, mu):
        """Ad*_g mu = mu o Ad_{g^-1} for g in G."""
        A = self.Ad(self.inv(g))[..., self.gi[:, None], self.gi[None, :]]
        return np.einsum("...ba,...b->...a", A, mu)
