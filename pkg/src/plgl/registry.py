"""Builtin algebras and pipeline assembly from names or JSON algebra files."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .lie_core import (ALG_TOL, AlgebraError, RMatrix, abelian, build_double, check_equivariance_j,
                       cobracket_from_r, algebra_from_dict, jacobi_worst_triple,
                       lu_weinstein_basis, lu_weinstein_data)
from .linearization import Numerics, Pipeline, build_pipeline
from .matrix_groups import MatrixRep, generic_rep


@dataclass(frozen=True)
class LWEntry:
    kind: str
    n: int


BUILTINS = {
    "trivial-3d": None,
    "su2-lu-weinstein": LWEntry("su", 2),
    "su3-lu-weinstein": LWEntry("su", 3),
    "u2-lu-weinstein": LWEntry("u", 2),
    "u1-into-u2": "morphism",
}


def builtin_names():
    return sorted(BUILTINS)


def trivial_pipeline(n: int = 3, numerics: Numerics = Numerics()) -> Pipeline:
    """Abelian g with r = 0, so that G* = g* and Exp is the identity chart."""
    b = cobracket_from_r(abelian(n), np.zeros((n, n)))
    tr = build_double(b)
    return build_pipeline(b, tr, generic_rep(tr), "newton", numerics)


def lu_weinstein_pipeline(kind: str, n: int, numerics: Numerics = Numerics()) -> Pipeline:
    b, tr = lu_weinstein_data(kind, n)
    lw = lu_weinstein_basis(kind, n)
    return build_pipeline(b, tr, MatrixRep(lw.mats), "iwasawa", numerics)


def pipeline_from_algebra(g, r, numerics: Numerics = Numerics()) -> Pipeline:
    b = cobracket_from_r(g, r)
    tr = build_double(b)
    return build_pipeline(b, tr, generic_rep(tr), "newton", numerics)


def load_algebra_file(path) -> dict:
    """Read a JSON algebra description; raises OSError or ValueError."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def resolve(source: str, numerics: Numerics = Numerics()):
    """Pipeline (or morphism bundle for ``u1-into-u2``) for a builtin name or file path."""
    if source in BUILTINS:
        entry = BUILTINS[source]
        if entry is None:
            return trivial_pipeline(3, numerics)
        if entry == "morphism":
            from .theorems import u1_into_u2
            return u1_into_u2(numerics)
        return lu_weinstein_pipeline(entry.kind, entry.n, numerics)
    p = Path(source)
    if not p.exists():
        raise FileNotFoundError(f"no builtin or file named {source!r}")
    g, r = algebra_from_dict(load_algebra_file(p))
    return pipeline_from_algebra(g, r, numerics)


def algebra_of(source: str):
    """(LieBialgebra or None, ManinTriple or None, LieAlgebra, r) without building groups.

    For files the bracket is returned raw so that a broken Jacobi identity can
    be reported instead of raised.
    """
    if source in BUILTINS:
        entry = BUILTINS[source]
        if entry is None:
            b = cobracket_from_r(abelian(3), np.zeros((3, 3)))
            return b, build_double(b), b.g, b.r.r
        if entry == "morphism":
            entry = LWEntry("u", 2)
        b, tr = lu_weinstein_data(entry.kind, entry.n)
        return b, tr, b.g, b.r.r
    p = Path(source)
    if not p.exists():
        raise FileNotFoundError(f"no builtin or file named {source!r}")
    g, r = algebra_from_dict(load_algebra_file(p))
    return None, None, g, r


def lw_rep(kind: str, n: int) -> MatrixRep:
    return MatrixRep(lu_weinstein_basis(kind, n).mats)


@dataclass
class InvariantSuite:
    """Named algebraic residuals for one source; ``failure`` explains an early stop."""
    source: str
    residuals: dict
    failure: Optional[str] = None

    def report(self, tol: float = ALG_TOL):
        from .theorems import ExperimentReport
        rep = ExperimentReport("check-algebra", 0, 0, 0.0, numerics={"tolerance": tol})
        for k in sorted(self.residuals):
            rep.add(k, self.residuals[k], tol)
        return rep


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}/{k}": float(v) for k, v in d.items()}


def _bialgebra_residuals(b, tr) -> dict:
    out = _prefixed("bialgebra", b.check())
    out.update(_prefixed("double", tr.check()))
    out["double/j_equivariance"] = check_equivariance_j(b, tr)
    return out


def invariant_suite(source: str, tol: float = ALG_TOL) -> InvariantSuite:
    """Jacobi, metric invariance, Manin-triple isotropy and closure, coboundary
    conditions on r and equivariance of j for a builtin name or algebra file.

    A broken Jacobi identity or a failing coboundary condition stops the suite
    with a message naming the offending basis triple or condition.
    """
    if source in BUILTINS and BUILTINS[source] == "morphism":
        from .theorems import u1_into_u2
        mor = u1_into_u2()
        out = {}
        for tag, p in (("source", mor.p1), ("target", mor.p2)):
            out.update(_prefixed(tag, _bialgebra_residuals(p.bialgebra, p.triple)))
            out[f"{tag}/rep_homomorphism"] = p.group.rep.homomorphism_violation(p.triple.d.f)
        out.update(_prefixed("morphism", mor.compatibility()))
        return InvariantSuite(source, out)
    b, tr, g, r = algebra_of(source)
    if b is not None:
        out = _bialgebra_residuals(b, tr)
        entry = BUILTINS[source]
        if isinstance(entry, LWEntry):
            out["double/rep_homomorphism"] = lw_rep(entry.kind, entry.n).homomorphism_violation(
                tr.d.f)
        return InvariantSuite(source, out)
    out = _prefixed("g", g.check())
    if out["g/jacobi"] > tol or out["g/antisymmetry"] > tol:
        a, bb, c, res = jacobi_worst_triple(g.f)
        return InvariantSuite(source, out, f"Jacobi identity fails for basis triple "
                                           f"({a}, {bb}, {c}): residual {res:.3e}")
    rchk = RMatrix(r).check(g)
    out.update(_prefixed("r", rchk))
    bad = [k for k, v in rchk.items() if v > tol]
    if bad:
        return InvariantSuite(source, out, f"r fails the coboundary condition(s): {', '.join(bad)}")
    b = cobracket_from_r(g, r, tol=np.inf)
    try:
        tr = build_double(b, tol=np.inf)
    except AlgebraError as e:
        return InvariantSuite(source, out, str(e))
    out.update(_bialgebra_residuals(b, tr))
    return InvariantSuite(source, out)


__all__ = ["BUILTINS", "builtin_names", "trivial_pipeline", "lu_weinstein_pipeline",
           "pipeline_from_algebra", "resolve", "algebra_of", "load_algebra_file", "AlgebraError",
           "InvariantSuite", "invariant_suite"]
