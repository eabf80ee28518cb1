import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from shapecomp.metrics import (chamfer, emd, emd_cost, evaluate, f1_from, mmd, nn_dist, precision_recall_f1, tmd,
                               tmd_single, uhd)


def brute_emd(a, b):
    n = len(a)
    cost = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


def brute_nn(a, b):
    return np.array([min(np.linalg.norm(p - q) for q in b) for p in a])


def test_emd_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(100):
        n = int(r.integers(1, 7))
        a, b = r.random((n, 3)), r.random((n, 3))
        assert emd_cost(a, b) == pytest.approx(brute_emd(a, b), abs=1e-12)


def test_emd_reporting_convention():
    a = np.zeros((4, 3))
    b = np.zeros((4, 3))
    b[:, 0] = 0.5
    assert emd(a, b) == pytest.approx(50.0)  # mean distance x100
    with pytest.raises(ValueError):
        emd(a, b[:3])


def test_f1_and_chamfer_match_quadratic_oracles(rng):
    a, b = rng.random((40, 3)), rng.random((55, 3))
    da, db = brute_nn(a, b), brute_nn(b, a)
    tau = 0.1
    p, r, f = precision_recall_f1(a, b, tau)
    assert p == np.mean(da < tau) and r == np.mean(db < tau)
    assert f == pytest.approx(2 * p * r / (p + r))
    assert chamfer(a, b) == pytest.approx(np.mean(da ** 2) + np.mean(db ** 2))


def test_f1_zero_rule():
    assert f1_from(0.0, 0.0) == 0.0
    assert precision_recall_f1(np.zeros((2, 3)), np.ones((2, 3)), 0.01) == (0.0, 0.0, 0.0)


def test_identity_cases(rng):
    g = rng.random((30, 3))
    assert mmd([g], [g.copy()]) == 1.0
    assert tmd([g, g.copy(), g.copy()]) == 0.0
    partial = g[:10]
    assert uhd(partial, [g, g[::-1]]) == 0.0


def test_tmd_k2_and_permutation(rng):
    a, b, c = rng.random((20, 3)), rng.random((25, 3)), rng.random((15, 3))
    assert tmd([a, b]) == pytest.approx(2 * chamfer(a, b))
    assert tmd([a, b, c]) == pytest.approx(tmd([c, a, b]))
    assert tmd([[a, b], [a, a]]) == pytest.approx(chamfer(a, b))
    with pytest.raises(ValueError):
        tmd_single([a])


def test_mmd_picks_best_match(rng):
    g = rng.random((50, 3))
    far = g + 5.0
    assert mmd([g], [far, g]) == 1.0
    with pytest.raises(ValueError):
        mmd([], [g])


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        nn_dist(np.zeros((0, 3)), np.zeros((2, 3)))


clouds = st.integers(0, 2**31 - 1)


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_order_invariance(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((12, 3)), r.random((12, 3))
    pa, pb = a[r.permutation(12)], b[r.permutation(12)]
    assert precision_recall_f1(a, b, 0.2) == precision_recall_f1(pa, pb, 0.2)
    assert chamfer(a, b) == pytest.approx(chamfer(pa, pb), abs=1e-12)
    assert emd_cost(a, b) == pytest.approx(emd_cost(pa, pb), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_f1_between_p_and_r(seed):
    r = np.random.default_rng(seed)
    p, rec, f = precision_recall_f1(r.random((15, 3)), r.random((20, 3)), 0.25)
    if p + rec > 0:
        assert min(p, rec) - 1e-12 <= f <= max(p, rec) + 1e-12


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_emd_at_least_one_sided_nn(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((8, 3)), r.random((8, 3))
    assert emd_cost(a, b) / 8 >= nn_dist(a, b).mean() - 1e-12


@settings(max_examples=30, deadline=None)
@given(clouds)
def test_rigid_invariance(seed):
    r = np.random.default_rng(seed)
    a, b, c = r.random((10, 3)), r.random((10, 3)), r.random((10, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    t = r.normal(size=3)
    move = lambda x: x @ R.T + t
    assert precision_recall_f1(a, b, 0.3) == precision_recall_f1(move(a), move(b), 0.3)
    assert chamfer(a, b) == pytest.approx(chamfer(move(a), move(b)), abs=1e-9)
    assert emd_cost(a, b) == pytest.approx(emd_cost(move(a), move(b)), abs=1e-9)
    assert uhd(c, [a, b]) == pytest.approx(uhd(move(c), [move(a), move(b)]), abs=1e-9)
    assert tmd([a, b, c]) == pytest.approx(tmd([move(a), move(b), move(c)]), abs=1e-9)


def test_evaluate_report_fields(rng):
    gt = rng.random((300, 3))
    comps = [gt + 0.001 * rng.normal(size=gt.shape), gt + 0.002 * rng.normal(size=gt.shape)]
    rep = evaluate(comps, gt, partial=gt[:50], seed=3).to_dict()
    for k in ("precision", "recall", "f1", "emd", "chamfer", "uhd", "mmd", "tmd"):
        assert rep[k] is not None and np.isfinite(rep[k])
    assert rep["meta"]["k"] == 2 and rep["meta"]["uhd_source"] == "partial"
    assert rep["f1"] > 0.9
    again = evaluate(comps, gt, partial=gt[:50], seed=3).to_dict()
    assert again == rep
