import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plgl.lie_core import (AlgebraError, LieAlgebra, abelian, build_double, check_equivariance_j,
                           cobracket_from_r, algebra_from_dict, jacobi_worst_triple,
                           lu_weinstein_data, so3, yang_baxter_tensor)
from plgl.registry import invariant_suite

vec3 = arrays(np.float64, 3, elements=st.floats(-2, 2))


def test_so3_brackets_match_cross_product():
    g = so3()
    x, y = np.array([1.0, 2.0, -1.0]), np.array([0.5, -1.0, 3.0])
    assert np.allclose(g.bracket(x, y), np.cross(x, y))


@given(vec3, vec3, vec3)
@settings(max_examples=50, deadline=None)
def test_so3_jacobi_on_random_vectors(x, y, z):
    g = so3()
    b = g.bracket
    jac = b(b(x, y), z) + b(b(y, z), x) + b(b(z, x), y)
    assert np.abs(jac).max() <= 1e-12 * (1 + np.abs(x).max() * np.abs(y).max() * np.abs(z).max())


def test_worst_triple_names_a_broken_bracket():
    f = so3().f.copy()
    f[0, 2, 2] = 0.5
    f[2, 0, 2] = -0.5
    a, b, c, res = jacobi_worst_triple(f)
    assert res == pytest.approx(LieAlgebra(f).jacobiator())
    assert res > 0.1
    assert len({a, b, c}) == 3


def test_algebra_dict_parsing():
    g, r = algebra_from_dict({"dim": 3, "brackets": [[0, 1, 2, 1.0], [1, 2, 0, 1.0], [2, 0, 1, 1.0]]})
    assert np.allclose(g.f, so3().f)
    assert np.all(r == 0)


@pytest.mark.parametrize("data", [
    [],
    {"dim": 2, "extra": 1},
    {"brackets": []},
    {"dim": "x"},
    {"dim": 0},
    {"dim": 2, "brackets": [[0, 1, 5, 1.0]]},
    {"dim": 2, "brackets": [[0, 1]]},
    {"dim": 2, "r": [[1, 0, 0]]},
    {"dim": 2, "r": "abc"},
])
def test_algebra_dict_rejects_malformed(data):
    with pytest.raises(AlgebraError):
        algebra_from_dict(data)


def test_standard_r_matrix_on_so3_is_coboundary():
    r = np.zeros((3, 3))
    r[0, 1], r[1, 0] = 1.0, -1.0
    b = cobracket_from_r(so3(), r)
    assert b.cocycle_violation() < 1e-12
    assert b.dual.jacobiator() < 1e-12


def test_non_invariant_symmetric_r_is_rejected():
    r = np.diag([1.0, 0.0, 0.0])
    with pytest.raises(AlgebraError):
        cobracket_from_r(so3(), r)


def test_yang_baxter_vanishes_for_r_zero():
    assert np.abs(yang_baxter_tensor(so3().f, np.zeros((3, 3)))).max() == 0.0


def test_double_of_abelian_is_abelian():
    b = cobracket_from_r(abelian(2), np.zeros((2, 2)))
    tr = build_double(b)
    assert not np.any(tr.d.f)
    assert max(tr.check().values()) == 0.0


@pytest.mark.parametrize("kind,n", [("su", 2), ("u", 2), ("su", 3)])
def test_lu_weinstein_triples(kind, n):
    b, tr = lu_weinstein_data(kind, n)
    assert max(b.check().values()) <= 1e-10
    assert max(tr.check().values()) <= 1e-10
    assert check_equivariance_j(b, tr) <= 1e-10
    # h is dual to g under the metric
    assert np.allclose(tr.pairing(), np.eye(tr.n))


def test_invariant_suite_reports_broken_jacobi(tmp_path):
    import json
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"dim": 3, "brackets": [[0, 1, 2, 1.0], [1, 2, 0, 1.0],
                                                     [2, 0, 1, 2.0], [0, 2, 2, 0.5]]}))
    s = invariant_suite(str(p))
    assert s.failure is not None and "triple" in s.failure
    assert not s.report().passed


@pytest.mark.parametrize("name", ["trivial-3d", "su2-lu-weinstein", "u2-lu-weinstein",
                                  "su3-lu-weinstein", "u1-into-u2"])
def test_invariant_suite_passes_on_builtins(name):
    s = invariant_suite(name)
    assert s.failure is None
    assert s.report().passed
