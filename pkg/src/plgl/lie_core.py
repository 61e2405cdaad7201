"""Finite-dimensional Lie algebras, coboundary Lie bialgebras and Manin triples.

Everything is stored as dense real tensors.  A structure constant array
``f`` of shape ``(n, n, n)`` means ``[e_a, e_b] = sum_c f[a, b, c] e_c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

ALG_TOL = 1e-10


class AlgebraError(ValueError):
    """Raised when algebraic input data violates a required identity."""


def jacobiator_algebra(f) -> float:
    """Largest violation of the Jacobi identity for structure constants ``f``."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]):
        raise AlgebraError(f"structure constants must have shape (n, n, n), got {f.shape}")
    # [[e_a,e_b],e_c] = f_ab^d f_dc^e
    t = np.einsum("abd,dce->abce", f, f)
    jac = t + np.transpose(t, (1, 2, 0, 3)) + np.transpose(t, (2, 0, 1, 3))
    return float(np.abs(jac).max()) if jac.size else 0.0


def jacobi_worst_triple(f):
    """(a, b, c, residual) for the basis triple with the largest Jacobi violation."""
    f = np.asarray(f, dtype=float)
    t = np.einsum("abd,dce->abce", f, f)
    jac = np.abs(t + np.transpose(t, (1, 2, 0, 3)) + np.transpose(t, (2, 0, 1, 3))).max(axis=-1)
    a, b, c = np.unravel_index(int(np.argmax(jac)), jac.shape)
    return int(a), int(b), int(c), float(jac[a, b, c])


def antisymmetry_violation(f) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.abs(f + np.transpose(f, (1, 0, 2))).max()) if f.size else 0.0


def ad_matrix(f, x):
    """Matrix of ``ad_x`` for coordinates ``x`` (batched over leading axes)."""
    return np.einsum("...a,abc->...cb", x, f)


@dataclass(frozen=True)
class LieAlgebra:
    f: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]):
            raise AlgebraError(f"structure constants must have shape (n, n, n), got {f.shape}")

    @property
    def dim(self) -> int:
        return self.f.shape[0]

    def bracket(self, x, y):
        return np.einsum("...a,...b,abc->...c", x, y, self.f)

    def ad(self, x):
        return ad_matrix(self.f, x)

    def jacobiator(self) -> float:
        return jacobiator_algebra(self.f)

    def check(self, tol: float = ALG_TOL) -> dict:
        return {"antisymmetry": antisymmetry_violation(self.f), "jacobi": self.jacobiator()}

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.f)


def abelian(n: int) -> LieAlgebra:
    return LieAlgebra(np.zeros((n, n, n)))


def so3() -> LieAlgebra:
    eps = np.zeros((3, 3, 3))
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[a, b, c] = 1.0
        eps[b, a, c] = -1.0
    return LieAlgebra(eps, labels=("e1", "e2", "e3"))


@dataclass(frozen=True)
class BilinearForm:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __call__(self, x, y):
        return np.einsum("...a,ab,...b->...", x, self.matrix, y)

    def invariance_violation(self, g: LieAlgebra) -> float:
        """max |<[x,y],z> + <y,[x,z]>| over basis triples."""
        B = self.matrix
        t = np.einsum("xyc,cz->xyz", g.f, B)
        return float(np.abs(t + np.transpose(t, (0, 2, 1))).max()) if t.size else 0.0

    def check(self, g: Optional[LieAlgebra] = None) -> dict:
        out = {
            "symmetric": float(np.abs(self.matrix - self.matrix.T).max()),
            "nondegenerate": 0.0 if abs(np.linalg.det(self.matrix)) > 1e-12 else 1.0,
        }
        if g is not None:
            out["invariant"] = self.invariance_violation(g)
        return out


def _ad_on_tensor(f, T):
    """Apply ad_{e_x} to every leg of a tensor in g^{(x)k}; returns shape (n,) + T.shape."""
    out = 0
    k = T.ndim
    letters = "ijkl"[:k]
    for leg in range(k):
        src = letters
        dst = letters[:leg] + "c" + letters[leg + 1:]
        # ad_x e_i = f[x, i, c] e_c on the chosen leg
        expr = f"x{letters[leg]}c,{src}->x{dst}"
        out = out + np.einsum(expr, f, T)
    return out


def yang_baxter_tensor(f, r):
    """YB(r) = [r12,r13] + [r12,r23] + [r13,r23] as an element of g^{(x)3}."""
    t1 = np.einsum("ika,ij,kl->ajl", f, r, r)
    t2 = np.einsum("jka,ij,kl->ial", f, r, r)
    t3 = np.einsum("jla,ij,kl->ika", f, r, r)
    return t1 + t2 + t3


@dataclass(frozen=True)
class RMatrix:
    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def symmetric_part(self):
        return 0.5 * (self.r + self.r.T)

    @property
    def skew_part(self):
        return 0.5 * (self.r - self.r.T)

    def sharp(self, mu):
        """r#(mu)_c = sum_a r^{ac} mu_a."""
        return np.einsum("ac,...a->...c", self.r, mu)

    def check(self, g: LieAlgebra) -> dict:
        s_inv = _ad_on_tensor(g.f, self.symmetric_part)
        yb_inv = _ad_on_tensor(g.f, yang_baxter_tensor(g.f, self.r))
        return {
            "symmetric_part_invariant": float(np.abs(s_inv).max()) if s_inv.size else 0.0,
            "yang_baxter_invariant": float(np.abs(yb_inv).max()) if yb_inv.size else 0.0,
        }


def coboundary_tensor(f, r):
    """lambda(e_a)^{bc} = sum_d (f_ad^b r^dc + f_ad^c r^bd), i.e. ad_{e_a} r."""
    return np.einsum("adb,dc->abc", f, r) + np.einsum("adc,bd->abc", f, r)


@dataclass(frozen=True)
class LieBialgebra:
    g: LieAlgebra
    r: RMatrix
    lam: np.ndarray
    dual: LieAlgebra

    @property
    def dim(self) -> int:
        return self.g.dim

    def splitting(self) -> np.ndarray:
        """Matrix of j(mu) = mu - r#(mu) into d-coordinates (g first, then g*)."""
        n = self.dim
        return np.vstack([-self.r.r.T, np.eye(n)])

    def j(self, mu):
        return np.einsum("ia,...a->...i", self.splitting(), mu)

    def cocycle_violation(self) -> float:
        f, lam = self.g.f, self.lam
        lhs = np.einsum("abd,dpq->abpq", f, lam)
        # ad_x on a 2-tensor: (ad_x (x) 1 + 1 (x) ad_x)
        adlam = np.einsum("acp,bcq->abpq", f, lam) + np.einsum("acq,bpc->abpq", f, lam)
        rhs = adlam - np.transpose(adlam, (1, 0, 2, 3))
        return float(np.abs(lhs - rhs).max()) if lhs.size else 0.0

    def check(self) -> dict:
        out = dict(self.g.check())
        out.update(self.r.check(self.g))
        out["dual_antisymmetry"] = antisymmetry_violation(self.dual.f)
        out["dual_jacobi"] = self.dual.jacobiator()
        out["cocycle"] = self.cocycle_violation()
        return out


def cobracket_from_r(g: LieAlgebra, r, tol: float = ALG_TOL) -> LieBialgebra:
    """Coboundary Lie bialgebra with cobracket ``lambda(xi) = ad_xi r``.

    Rejects ``r`` if its symmetric part or YB(r) fails ad-invariance.
    """
    rm = r if isinstance(r, RMatrix) else RMatrix(r)
    if rm.r.shape != (g.dim, g.dim):
        raise AlgebraError(f"r must be {g.dim}x{g.dim}, got {rm.r.shape}")
    for name, val in rm.check(g).items():
        if val > tol:
            raise AlgebraError(f"coboundary condition failed: {name} residual {val:.3e}")
    lam = coboundary_tensor(g.f, rm.r)
    # <[mu,nu], xi> = <mu (x) nu, lambda(xi)>
    dual = LieAlgebra(np.transpose(lam, (1, 2, 0)))
    return LieBialgebra(g=g, r=rm, lam=lam, dual=dual)


@dataclass(frozen=True)
class ManinTriple:
    d: LieAlgebra
    metric: BilinearForm
    g_indices: tuple
    h_indices: tuple
    t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "g_indices", tuple(int(i) for i in self.g_indices))
        object.__setattr__(self, "h_indices", tuple(int(i) for i in self.h_indices))
        n2 = self.d.dim
        if sorted(self.g_indices + self.h_indices) != list(range(n2)):
            raise AlgebraError("g_indices and h_indices must partition the basis of d")

    @property
    def n(self) -> int:
        return len(self.g_indices)

    @property
    def gi(self):
        return np.array(self.g_indices)

    @property
    def hi(self):
        return np.array(self.h_indices)

    def pairing(self) -> np.ndarray:
        """Block <e_g[a], e_h[b]> of the metric."""
        return self.metric.matrix[np.ix_(self.gi, self.hi)]

    def embed_g(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1] + (self.d.dim,))
        out[..., self.gi] = xi
        return out

    def embed_h(self, mu):
        mu = np.asarray(mu, dtype=float)
        out = np.zeros(mu.shape[:-1] + (self.d.dim,))
        out[..., self.hi] = mu
        return out

    def check(self) -> dict:
        f, G = self.d.f, self.metric.matrix
        gi, hi = self.gi, self.hi
        out = dict(self.d.check())
        out.update(self.metric.check(self.d))
        # closure: brackets of g stay in g, brackets of h stay in h
        out["g_closed"] = float(np.abs(f[np.ix_(gi, gi, hi)]).max()) if len(hi) else 0.0
        out["h_closed"] = float(np.abs(f[np.ix_(hi, hi, gi)]).max()) if len(gi) else 0.0
        out["g_isotropic"] = float(np.abs(G[np.ix_(gi, gi)]).max())
        out["h_isotropic"] = float(np.abs(G[np.ix_(hi, hi)]).max())
        P = self.pairing()
        out["pairing_nondegenerate"] = 0.0 if abs(np.linalg.det(P)) > 1e-12 else 1.0
        return out


def check_equivariance_j(b: LieBialgebra, triple: ManinTriple) -> float:
    """max over basis pairs of |[xi, j(mu)]_d - j(ad*_xi mu)|.

    The triple's h-basis is identified with g* through the metric pairing.
    """
    n = b.dim
    P = triple.pairing()
    # coordinates of mu in the h-basis: <e_a, h(mu)> = mu_a
    Hcoord = np.linalg.inv(P)  # column b gives h-coords of the dual vector e^b
    Jm = b.splitting()
    worst = 0.0
    for a in range(n):
        xi = triple.embed_g(np.eye(n)[a])
        for c in range(n):
            mu = np.eye(n)[c]
            jm = Jm @ mu
            x = triple.embed_g(jm[:n]) + triple.embed_h(Hcoord @ jm[n:])
            lhs = triple.d.bracket(xi, x)
            # (ad*_xi mu)_q = -mu([xi, e_q])
            admu = -b.g.f[a] @ mu
            jr = Jm @ admu
            rhs = triple.embed_g(jr[:n]) + triple.embed_h(Hcoord @ jr[n:])
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def double_structure_constants(b: LieBialgebra, t: float = 1.0) -> np.ndarray:
    """Structure constants of d_t = g + g* in the basis (e_a; e^a).

    [xi, xi'] is the g-bracket, [mu, mu'] is t times the dual bracket and the
    mixed bracket is [xi, mu] = ad*_xi mu - t ad*_mu xi.
    """
    n = b.dim
    f, F = b.g.f, b.dual.f
    D = np.zeros((2 * n, 2 * n, 2 * n))
    D[:n, :n, :n] = f
    D[n:, n:, n:] = t * F
    # [e_a, e^p] = -sum_q f[a,q,p] e^q + t sum_c F[p,c,a] e_c
    mixed_h = -np.transpose(f, (0, 2, 1))        # [a, p, q]
    mixed_g = t * np.transpose(F, (2, 0, 1))     # [a, p, c]
    D[:n, n:, n:] = mixed_h
    D[:n, n:, :n] = mixed_g
    D[n:, :n, :] = -np.transpose(D[:n, n:, :], (1, 0, 2))
    return D


def build_double(b: LieBialgebra, t: float = 1.0, tol: float = ALG_TOL) -> ManinTriple:
    """The double d_t with the dual bracket scaled by ``t`` and canonical pairing."""
    n = b.dim
    d = LieAlgebra(double_structure_constants(b, t))
    jac = d.jacobiator()
    if jac > tol:
        raise AlgebraError(f"assembled double fails Jacobi ({jac:.3e}); invalid bialgebra")
    G = np.block([[np.zeros((n, n)), np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    return ManinTriple(d=d, metric=BilinearForm(G), g_indices=tuple(range(n)),
                       h_indices=tuple(range(n, 2 * n)), t=float(t))


def scaling_morphism(n: int, t: float) -> np.ndarray:
    """s_t(xi + mu) = xi + t mu as a matrix on d-coordinates."""
    return np.diag(np.r_[np.ones(n), t * np.ones(n)])


def scaled_bialgebra(b: LieBialgebra, t: float) -> LieBialgebra:
    """Bialgebra with r replaced by t r (cobracket and dual bracket scale by t)."""
    return cobracket_from_r(b.g, t * b.r.r)


def algebra_from_dict(data: dict):
    """Parse an algebra description into (LieAlgebra, r).

    Keys: ``dim``, ``brackets`` as [[a, b, c, value], ...] meaning
    [e_a, e_b] = value e_c (antisymmetry is implied), optional ``r`` (dim x dim)
    and ``labels``.  Identities such as Jacobi are not enforced here so that
    the caller can report them.
    """
    if not isinstance(data, dict):
        raise AlgebraError("algebra description must be a JSON object")
    allowed = {"dim", "brackets", "r", "labels"}
    unknown = set(data) - allowed
    if unknown:
        raise AlgebraError(f"unknown keys in algebra description: {sorted(unknown)}")
    if "dim" not in data:
        raise AlgebraError("algebra description needs 'dim'")
    try:
        n = int(data["dim"])
    except (TypeError, ValueError):
        raise AlgebraError("dim must be an integer") from None
    if n <= 0:
        raise AlgebraError("dim must be positive")
    f = np.zeros((n, n, n))
    for entry in data.get("brackets", []):
        if not isinstance(entry, (list, tuple)) or len(entry) != 4:
            raise AlgebraError(f"bracket entry must be [a,b,c,value], got {entry}")
        try:
            a, bb, c, v = int(entry[0]), int(entry[1]), int(entry[2]), float(entry[3])
        except (TypeError, ValueError):
            raise AlgebraError(f"malformed bracket entry {entry}") from None
        if not all(0 <= i < n for i in (a, bb, c)):
            raise AlgebraError(f"bracket index out of range in {entry}")
        f[a, bb, c] += v
        f[bb, a, c] -= v
    labels = data.get("labels")
    g = LieAlgebra(f, labels=tuple(labels) if labels is not None else None)
    try:
        r = np.asarray(data.get("r", np.zeros((n, n))), dtype=float)
    except (TypeError, ValueError):
        raise AlgebraError("r must be a numeric matrix") from None
    if r.shape != (n, n):
        raise AlgebraError(f"r must be {n}x{n}")
    return g, r


# --- Lu-Weinstein data for su(n) and u(n) ---------------------------------

def gell_mann(n: int) -> list:
    """Generalized Gell-Mann matrices (tr(l_a l_b) = 2 delta_ab), off-diagonal pairs first."""
    mats = []
    for k in range(n):
        for l in range(k + 1, n):
            S = np.zeros((n, n), complex)
            S[k, l] = S[l, k] = 1.0
            A = np.zeros((n, n), complex)
            A[k, l] = -1j
            A[l, k] = 1j
            mats += [S, A]
    for l in range(1, n):
        D = np.zeros((n, n), complex)
        D[np.arange(l), np.arange(l)] = 1.0
        D[l, l] = -l
        mats.append(np.sqrt(2.0 / (l * (l + 1))) * D)
    return mats


def _realify_flat(mats):
    mats = np.asarray(mats)
    return np.concatenate([mats.real.reshape(len(mats), -1), mats.imag.reshape(len(mats), -1)], axis=1)


def _real_coords(basis, M, tol=1e-10):
    V = _realify_flat(basis).T
    v = np.concatenate([M.real.ravel(), M.imag.ravel()])
    c, *_ = np.linalg.lstsq(V, v, rcond=None)
    if np.abs(V @ c - v).max() > tol:
        raise AlgebraError("matrix is not in the real span of the basis")
    return c


def _complex_coords(basis, M, tol=1e-10):
    V = np.asarray(basis).reshape(len(basis), -1).T
    c, *_ = np.linalg.lstsq(V, M.ravel(), rcond=None)
    if np.abs(V @ c - M.ravel()).max() > tol:
        raise AlgebraError("matrix is not in the complex span of the basis")
    return c


@dataclass(frozen=True)
class LuWeinsteinBasis:
    """Complex matrices for the basis (e_a; h^a) of the realified complexification."""
    kind: str
    n: int
    scale: float
    g_mats: np.ndarray
    h_mats: np.ndarray
    r: np.ndarray

    @property
    def mats(self):
        return np.concatenate([self.g_mats, self.h_mats])


def lu_weinstein_basis(kind: str, n: int, scale: float = 1.0) -> LuWeinsteinBasis:
    kind = kind.lower()
    if kind not in ("su", "u"):
        raise AlgebraError(f"unsupported compact type {kind!r}")
    if kind == "su" and n < 2:
        raise AlgebraError("su(n) needs n >= 2")
    if n < 1:
        raise AlgebraError("u(n) needs n >= 1")
    lam = gell_mann(n)
    g = [-0.5j * L for L in lam]
    if kind == "u":
        g.append(-1j * np.eye(n) / np.sqrt(2 * n))
    raw = []
    for l in range(1, n):
        D = np.zeros((n, n), complex)
        D[np.arange(l), np.arange(l)] = 1.0
        D[l, l] = -l
        raw.append(D)
    if kind == "u":
        raw.append(np.eye(n, dtype=complex))
    for k in range(n):
        for l in range(k + 1, n):
            E = np.zeros((n, n), complex)
            E[k, l] = 1.0
            raw += [E, 1j * E]

    def met(X, Y):
        return np.imag(-scale * np.trace(X @ Y))

    P = np.array([[met(a, b) for b in raw] for a in g])
    M = np.linalg.inv(P).T
    h = [sum(M[b, c] * raw[c] for c in range(len(raw))) for b in range(len(raw))]
    # r = (i/2) sum_{alpha>0} (e_{-alpha} (x) e_alpha - e_alpha (x) e_{-alpha}),
    # root vectors normalized so that B(e_alpha, e_{-alpha}) = 2
    c = 1j * np.sqrt(2.0 / scale)
    r = np.zeros((len(g), len(g)), complex)
    for k in range(n):
        for l in range(k + 1, n):
            Ep = np.zeros((n, n), complex)
            Ep[k, l] = 1.0
            Em = Ep.T.copy()
            cp = _complex_coords(g, c * Ep)
            cm = _complex_coords(g, c * Em)
            r += 0.5j * (np.outer(cm, cp) - np.outer(cp, cm))
    if np.abs(r.imag).max() > 1e-12:
        raise AlgebraError("r-matrix is not real in the compact basis")
    return LuWeinsteinBasis(kind, n, float(scale), np.array(g), np.array(h), r.real.copy())


def structure_constants_from_matrices(mats) -> np.ndarray:
    mats = np.asarray(mats)
    m = len(mats)
    f = np.zeros((m, m, m))
    for a in range(m):
        for b in range(a + 1, m):
            C = mats[a] @ mats[b] - mats[b] @ mats[a]
            f[a, b] = _real_coords(mats, C)
            f[b, a] = -f[a, b]
    return f


def lu_weinstein_data(kind: str = "su", n: int = 2, scale: float = 1.0):
    """(LieBialgebra, ManinTriple) of the Lu-Weinstein structure on U(n) or SU(n)."""
    lw = lu_weinstein_basis(kind, n, scale)
    fd = structure_constants_from_matrices(lw.mats)
    m = len(lw.g_mats)
    g = LieAlgebra(fd[:m, :m, :m])
    b = cobracket_from_r(g, lw.r)
    mats = lw.mats
    G = np.array([[np.imag(-scale * np.trace(X @ Y)) for Y in mats] for X in mats])
    triple = ManinTriple(d=LieAlgebra(fd), metric=BilinearForm(G),
                         g_indices=tuple(range(m)), h_indices=tuple(range(m, 2 * m)))
    return b, triple
