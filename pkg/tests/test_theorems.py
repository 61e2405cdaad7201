import json

import numpy as np
import pytest

from plgl import theorems as th
from plgl.matrix_groups import DomainError


def test_report_json_schema():
    rep = th.ExperimentReport("demo", 3, 10, 0.2, numerics={"rk4_steps": 5})
    rep.add("a", [1e-9, 2e-9], 1e-8)
    rep.add("b", [1.0], 1e-8)
    d = json.loads(rep.to_json())
    assert set(d) == {"name", "seed", "samples", "radius", "checks", "numerics", "pass"}
    assert set(d["checks"][0]) == {"id", "max_residual", "mean_residual", "tolerance", "pass"}
    assert d["checks"][0]["pass"] and not d["checks"][1]["pass"] and not d["pass"]


def test_nan_residual_fails():
    c = th.make_check("x", [np.nan, 0.0], 1.0)
    assert not c.passed


def test_merge_prefixes_ids():
    a = th.ExperimentReport("one", 0, 1, 0.1)
    a.add("x", 0.0, 1.0)
    b = th.ExperimentReport("two", 0, 2, 0.2)
    b.add("x", 2.0, 1.0)
    m = th.merge_reports("both", [a, b])
    assert [c.id for c in m.checks] == ["one/x", "two/x"]
    assert m.samples == 3 and not m.passed


def test_sample_ball_and_sphere(rng):
    X = th.sample_ball(rng, 500, 3, 0.2)
    assert np.linalg.norm(X, axis=1).max() <= 0.2
    S = th.sample_sphere(rng, 50, 3, 0.1)
    assert np.allclose(np.linalg.norm(S, axis=1), 0.1)


def test_map_chunks_independent_of_threads(rng):
    X = rng.standard_normal((300, 3))
    fn = lambda b: np.sin(b) @ np.ones((3, 2))
    one = th.map_chunks(fn, X, threads=1, chunk=64)
    four = th.map_chunks(fn, X, threads=4, chunk=64)
    assert np.array_equal(one, four)


def test_minkowski_oracle_matches_annulus():
    res = th.minkowski_oracle(0.06, 0.1, pairs=4000, seed=0)
    assert res["outside"] <= 1e-12
    assert res["edge_gap"] <= 1e-2
    assert res["empty_bins"] == 0


def test_orbit_product_with_point_orbit(su2):
    # r2 = 0: the product reduces to Exp(O1) = D1
    rep = th.orbit_product_check(su2, r1=0.1, r2=0.0, samples=10, oracle_pairs=500, tol=1e-8)
    assert rep.check("product_in_annulus").passed
    assert rep.check("annulus_in_product").passed


def test_orbit_product_rejects_large_radii(su2):
    with pytest.raises(DomainError):
        th.orbit_product_check(su2, r1=0.15, r2=0.1)


def test_lambda_equivariance(su2, rng):
    U = th.sample_ball(rng, 5, 3, 0.1)
    K = th.sample_ball(rng, 5, 3, 0.5)
    assert th.lambda_equivariance_residual(su2.me, K, U).max() < 1e-10


def test_chi_bisection_properties(su2, rng):
    ch = th.chi_bisection(su2.me)
    xi = rng.standard_normal(3)
    U1, U2 = th.sample_ball(rng, 4, 3, 0.1), th.sample_ball(rng, 4, 3, 0.1)
    assert np.max(ch.intertwining_residual(xi, U1, U2)) < 1e-7
    assert np.max(ch.constant_section_residual(xi, U1)) < 1e-7


def test_twisted_diagonal_relation(su2, rng):
    xi = rng.standard_normal(3)
    U1, U2 = th.sample_ball(rng, 4, 3, 0.1), th.sample_ball(rng, 4, 3, 0.1)
    assert np.max(th.twisted_relation_residual(su2.group, xi, U1, U2)) < 1e-7


def test_chart_mult_is_associative(su2, rng):
    a, b, c = th.sample_ball(rng, 3, 3, 0.1)
    g = su2.group
    lhs = th.chart_mult(g, th.chart_mult(g, a, b), c)
    rhs = th.chart_mult(g, a, th.chart_mult(g, b, c))
    assert np.abs(lhs - rhs).max() < 1e-13


def test_block_morphism_is_compatible():
    mor = th.u1_into_u2()
    c = mor.compatibility()
    assert c["bracket"] < 1e-12 and c["cobracket"] < 1e-12
    # T is a group homomorphism in charts
    rng = np.random.default_rng(0)
    a, b = th.sample_ball(rng, 2, mor.p2.n, 0.1)
    g1, g2 = mor.p1.group, mor.p2.group
    lhs = mor.T(th.chart_mult(g2, a, b))
    rhs = th.chart_mult(g1, mor.T(a), mor.T(b))
    assert np.abs(lhs - rhs).max() < 1e-13


def test_identity_morphism_has_no_twist(su2, rng):
    mor = th.identity_morphism(su2)
    assert np.all(mor.sigma_prime(th.sample_ball(rng, 3, 3, 0.1)) == 0.0)


def test_identity_functoriality_small(su2):
    rep = th.verify_functoriality(th.identity_morphism(su2), points=4, steps=40,
                                  certificate_points=0, tol=1e-10)
    assert rep.check("diagram").max_residual <= 1e-10
    assert rep.passed


def test_addmult_trivial_is_exact(trivial):
    rep = th.verify_addmult(trivial, points=10)
    assert rep.check("diagram").max_residual <= 1e-10
    assert rep.passed


def test_addmult_product_with_unit_factor(su2, rng):
    # one factor at 0: Mult o (Exp x Exp) reduces to a single linearization
    am = th.AddMult(su2)
    Y = np.concatenate([th.sample_ball(rng, 3, 3, 0.1), np.zeros((3, 3))], axis=1)
    assert np.abs(am.exp_mult(Y) - su2.me(Y[:, :3])).max() < 1e-13


def test_decompose_product_reconstructs_target(su2, rng):
    me, g = su2.me, su2.group
    target = np.array([[0.05, 0.06, -0.03]])
    y, left, res = th.decompose_product(me, target, 0.06, 0.1, rng)
    assert res.max() < 1e-12
    assert abs(np.linalg.norm(y) - 0.1) < 1e-12
    assert abs(np.linalg.norm(left) - 0.06) < 1e-12
    assert np.abs(th.chart_mult(g, me(left), me(y)) - target).max() < 1e-12
