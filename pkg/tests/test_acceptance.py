"""Acceptance suite: ten numbered criteria, each printing one PASS/FAIL line.

Tolerances are the stated ones; elapsed time is printed next to the budget
but not asserted, since it depends on the machine.
"""
import json
import time

import numpy as np
import pytest

from plgl import theorems as th
from plgl.cli import run
from plgl.fields import (BivectorField, TwoFormField, exterior_derivative, gauge_transform,
                         homotopy_operator)
from plgl.registry import invariant_suite, resolve


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def emit(number: int, title: str, ok: bool, detail: str, budget: float):
        dt = time.perf_counter() - t0
        with capsys.disabled():
            print(f"\ncriterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail} "
                  f"({dt:.1f} s, budget {budget:.0f} s)")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def su2():
    return resolve("su2-lu-weinstein")


def _worst(rep, ids):
    return max(rep.check(i).max_residual for i in ids)


def test_c01_algebraic_suite(verdict):
    worst = {}
    for name in ("trivial-3d", "su2-lu-weinstein", "u2-lu-weinstein", "su3-lu-weinstein"):
        s = invariant_suite(name)
        worst[name] = max(s.residuals.values()) if s.failure is None else np.inf
    ok = all(v <= 1e-10 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, "algebraic invariants <= 1e-10", ok, detail, 1)


def test_c02_gauge_involution(verdict, su2):
    rng = np.random.default_rng(2)
    X = th.sample_ball(rng, 100, 3, 0.2)
    me = su2.me
    P = BivectorField(su2.lie_poisson, 3)
    sig = TwoFormField(me.sigma, 3)
    neg = TwoFormField(lambda Y: -me.sigma(Y), 3)
    res = np.abs(gauge_transform(gauge_transform(P, sig), neg)(X) - P(X)).max()
    verdict(2, "(pi^sigma)^-sigma = pi at 100 points <= 1e-11", bool(res <= 1e-11),
            f"max {res:.2e}", 1)


def _forms():
    def a1(X):
        x, y, z = X.T
        return np.stack([x * y * z + y ** 2, x ** 3 - z, y * z ** 2 + 1.0], -1)

    def a2(X):
        x, y, z = X.T
        S = np.zeros((len(X), 3, 3))
        S[:, 0, 1] = x * y + z ** 2
        S[:, 0, 2] = y ** 3 - x
        S[:, 1, 2] = x * y * z + 2.0
        return S - np.swapaxes(S, 1, 2)

    def a3(X):
        x, y, z = X.T
        T = np.zeros((len(X), 3, 3, 3))
        v = 1.0 + x * y - z ** 3
        for (i, j, k), sgn in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
                               ((1, 0, 2), -1), ((0, 2, 1), -1), ((2, 1, 0), -1)):
            T[:, i, j, k] = sgn * v
        return T

    def b1(X):
        w, x, y, z = X.T
        return np.stack([w * x, y ** 2 * z, w ** 3 + z, x * y * w], -1)

    def b2(X):
        w, x, y, z = X.T
        S = np.zeros((len(X), 4, 4))
        S[:, 0, 1] = w * z
        S[:, 0, 3] = x ** 2 - y
        S[:, 1, 2] = w * x * y
        S[:, 2, 3] = 3.0 + z ** 2
        return S - np.swapaxes(S, 1, 2)

    return [(a1, 1, 3), (a2, 2, 3), (a3, 3, 3), (b1, 1, 4), (b2, 2, 4)]


def test_c03_homotopy_identity(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for alpha, q, m in _forms():
        X = rng.uniform(-0.5, 0.5, (6, m))
        d_alpha = lambda Y, alpha=alpha, q=q: exterior_derivative(alpha, q, Y)
        hd = homotopy_operator(d_alpha, q + 1)(X)
        dh = exterior_derivative(homotopy_operator(alpha, q), q - 1, X)
        worst = max(worst, float(np.abs(dh + hd - alpha(X)).max()))
    verdict(3, "d h + h d = id on 5 polynomial forms <= 1e-7", worst <= 1e-7,
            f"max {worst:.2e}", 1)


def test_c04_contraction(verdict, su2):
    rng = np.random.default_rng(4)
    X = th.sample_ball(rng, 50, 3, 0.2)
    res = su2.me.contraction_residual(X, rng.standard_normal(3)).max()
    verdict(4, "contraction identity, su(2), 50 points, 0.2-ball <= 1e-5", bool(res <= 1e-5),
            f"max {res:.2e}", 10)


def test_c05_linearization(verdict, su2):
    rep = th.verify_linearization(su2, points=50, radius=0.2, seed=0, tol=1e-5, slope=True)
    push = rep.check("poisson_pushforward").max_residual
    t0 = rep.check("tangent_identity").max_residual
    sp = rep.check("sigma_psi").max_residual
    order = rep.check("rk4_order")
    ok = push <= 1e-5 and t0 <= 1e-6 and sp <= 1e-5 and order.passed
    verdict(5, "Exp o F1 is a Poisson linearization of su(2)*", ok,
            f"pushforward {push:.1e}, T0 {t0:.1e}, sigma_psi {sp:.1e}, "
            f"|order - 4| {order.max_residual:.3f}", 60)


def test_c06_scaling_laws(verdict, su2):
    rep = th.verify_scaling_laws(su2, ts=(0.25, 0.5, 0.75), tol=1e-5)
    worst = _worst(rep, ["sigma_law", "pi_law", "a_law", "psi_law"])
    verdict(6, "four scaling laws, t in {0.25, 0.5, 0.75} <= 1e-5", rep.passed,
            f"max relative {worst:.1e}", 60)


def test_c07_functoriality(verdict):
    mor = th.u1_into_u2()
    rep = th.verify_functoriality(mor, points=30, radius=0.15, seed=0, tol=1e-5)
    ctrl = th.verify_functoriality(th.identity_morphism(mor.p2), points=30, radius=0.15,
                                   seed=0, tol=1e-10, certificate_points=0)
    d, c = rep.check("diagram").max_residual, ctrl.check("diagram").max_residual
    ok = rep.passed and d <= 1e-5 and c <= 1e-10
    verdict(7, "u(1) -> u(2) diagram <= 1e-5, identity control <= 1e-10", ok,
            f"diagram {d:.1e}, control {c:.1e}", 60)


def test_c08_addmult(verdict, su2):
    rep = th.verify_addmult(su2, points=30, radius=0.1, seed=0, tol=1e-4)
    ctrl = th.verify_addmult(resolve("trivial-3d"), points=30, radius=0.1, seed=0, tol=1e-10)
    d, c = rep.check("diagram").max_residual, ctrl.check("diagram").max_residual
    chi = _worst(rep, ["chi_intertwining", "chi_constant_section"])
    lam = rep.check("lambda_equivariance").max_residual
    ok = rep.passed and ctrl.passed and d <= 1e-4 and c <= 1e-10 and chi <= 1e-6 and lam <= 1e-8
    verdict(8, "addition vs multiplication diagram, su(2)", ok,
            f"diagram {d:.1e}, trivial {c:.1e}, chi {chi:.1e}, lambda {lam:.1e}", 90)


def test_c09_orbit_product(verdict, su2):
    rep = th.orbit_product_check(su2, r1=0.06, r2=0.1, samples=100, seed=0, tol=1e-6,
                                 oracle_pairs=10000)
    mem = _worst(rep, ["product_in_annulus", "annulus_in_product"])
    verdict(9, "Exp(O1 + O2) = D1 D2, r1 = 0.06, r2 = 0.1, tol 1e-6", rep.passed,
            f"membership {mem:.1e}, oracle gap {rep.check('oracle_reaches_bounds').max_residual:.1e}",
            30)


def test_c10_determinism(verdict, su2, tmp_path):
    same = []
    same.append(len({th.orbit_product_check(su2, samples=30, seed=5).to_json()
                     for _ in range(2)}) == 1)
    same.append(len({th.verify_scaling_laws(su2, points=3, seed=5).to_json()
                     for _ in range(2)}) == 1)
    same.append(len({th.verify_linearization(su2, points=10, seed=5, threads=k).to_json()
                     for k in (1, 1, 2)}) == 1)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"algebra": "su2-lu-weinstein", "experiment": "orbit-product",
                               "domain": {"samples": 20, "seed": 7}}))
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run(["verify", "--config", str(cfg), "--out", str(out)])
        blobs.append((out / "report.json").read_bytes())
    same.append(blobs[0] == blobs[1])
    verdict(10, "same seed gives byte-identical reports", all(same),
            f"{sum(same)}/{len(same)} comparisons identical", 60)
