import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from poseconf.oks import DegenerateWarning, GroundTruthInstance, NotEvaluableError, PredictedInstance
from poseconf.ranking import (
    COCO_THRESHOLDS,
    EvalConfig,
    ause,
    average_precision,
    average_recall,
    evaluate,
    pck,
    pearson,
    reliability_curve,
    reliability_deviation,
    sparsification_curve,
)

unit = st.floats(0.0, 1.0)
T50 = EvalConfig(thresholds=(0.5,))


def brute_ap(oks_in_rank_order, thresholds):
    """Plain-Python precision-at-hit sum divided by N, averaged over thresholds."""
    n = len(oks_in_rank_order)
    total = 0.0
    for t in thresholds:
        hits, s = 0, 0.0
        for i, o in enumerate(oks_in_rank_order, start=1):
            if o > t:
                hits += 1
                s += hits / i
        total += s / n
    return total / len(thresholds)


def ranked(oks, conf):
    # Python's sort is stable: equal confidences keep input order
    return [oks[i] for i in sorted(range(len(oks)), key=lambda i: -conf[i])]


def test_thresholds():
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


@pytest.mark.parametrize("bad", [(), (0.5, 0.5), (0.7, 0.5), (0.0,), (1.0,)])
def test_eval_config_rejects(bad):
    with pytest.raises(ValueError):
        EvalConfig(thresholds=bad)


def test_average_recall_examples():
    assert average_recall([0.9, 0.3], T50) == 0.5
    assert average_recall([0.9, 0.3]) == pytest.approx(0.4)
    assert average_recall(np.ones(7)) == 1.0


def test_average_precision_examples():
    assert average_precision([0.9, 0.3], [0.8, 0.2], T50)[0] == pytest.approx(0.5)
    assert average_precision([0.9, 0.3], [0.2, 0.8], T50)[0] == pytest.approx(0.25)


def test_ties_keep_input_order():
    # constant confidence ranks by index
    assert average_precision([0.3, 0.9], [1.0, 1.0], T50)[0] == pytest.approx(0.25)
    assert average_precision([0.9, 0.3], [1.0, 1.0], T50)[0] == pytest.approx(0.5)


def test_brute_force_and_permutation_maximum():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(1, 7))
        oks = list(rng.uniform(0, 1, n))
        conf = list(np.round(rng.uniform(0, 1, n), 1))  # rounding forces ties
        got = average_precision(oks, conf)[0]
        assert got == pytest.approx(brute_ap(ranked(oks, conf), COCO_THRESHOLDS), abs=1e-12)
        best = max(brute_ap(list(p), COCO_THRESHOLDS) for p in itertools.permutations(oks))
        assert average_precision(oks, oks)[0] == pytest.approx(best, abs=1e-12)
        assert got <= best + 1e-12


@given(st.lists(st.tuples(unit, unit), min_size=1, max_size=30))
def test_ap_bounded_by_recall(pairs):
    oks, conf = map(list, zip(*pairs))
    m, per_t, _ = average_precision(oks, conf)
    assert 0.0 <= m <= average_recall(oks) + 1e-12
    assert len(per_t) == 10


@given(st.lists(st.tuples(unit, unit), min_size=1, max_size=30))
def test_mar_ignores_confidence(pairs):
    oks, conf = map(np.array, zip(*pairs))
    a = evaluate(oks, conf) if len(oks) > 1 else None
    if a is not None:
        assert a.mar == evaluate(oks, conf[::-1]).mar


def test_pr_points_area_equals_ap():
    rng = np.random.default_rng(3)
    oks, conf = rng.uniform(size=40), rng.uniform(size=40)
    m, per_t, pts = average_precision(oks, conf, T50)
    r = np.array([p.recall for p in pts])
    pr = np.array([p.precision for p in pts])
    area = np.sum(np.diff(np.concatenate([[0.0], r])) * pr)
    assert area == pytest.approx(per_t[0])


def test_interpolated_perfect_and_empty():
    cfg = EvalConfig(interpolated=True)
    assert average_precision(np.ones(5), np.linspace(0, 1, 5), cfg)[0] == pytest.approx(1.0)
    assert average_precision(np.zeros(5), np.linspace(0, 1, 5), cfg)[0] == 0.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        average_precision([0.5], [0.5, 0.5])


def test_pck_examples():
    gt = GroundTruthInstance([[0, 0], [0, 0]], [True, True], 100.0)
    assert pck(PredictedInstance(gt.keypoints, [1, 1]), gt, 10.0, 0.5) == 1.0
    assert pck(PredictedInstance([[4, 0], [0, 6]], [1, 1]), gt, 10.0, 0.5) == 0.5
    with pytest.raises(NotEvaluableError):
        pck(PredictedInstance([[0, 0]], [1]), GroundTruthInstance([[0, 0]], [False], 1.0), 1.0, 0.5)


def test_pck_matches_indicator_count(rng):
    for _ in range(30):
        k = 5
        g, p = rng.normal(0, 3, (k, 2)), rng.normal(0, 3, (k, 2))
        vis = rng.uniform(size=k) < 0.7
        vis[0] = True
        norm, tau = 4.0, 0.5
        inside = [math.dist(p[j], g[j]) <= tau * norm for j in range(k) if vis[j]]
        got = pck(PredictedInstance(p, np.ones(k)), GroundTruthInstance(g, vis, 1.0), norm, tau)
        assert got == pytest.approx(sum(inside) / len(inside))


def test_ause_examples():
    assert ause([0.8, 0.2], [0.9, 0.1], steps=2) == pytest.approx(0.3)
    e = np.linspace(0, 1, 10)
    assert ause(e, 1 - e, steps=5) == 0.0


def test_ause_constant_confidence_matches_loop():
    # constant confidence keeps input order, so the last samples go first
    e = np.array([0.1, 0.9, 0.4, 0.7, 0.2, 0.6])
    steps = 3
    gaps = []
    for j in range(steps):
        keep = len(e) - j * len(e) // steps
        curve = e[:keep].mean()
        oracle = np.sort(e)[:keep].mean()
        gaps.append(max(curve - oracle, 0.0))
    assert ause(e, np.ones(6), steps) == pytest.approx(np.mean(gaps))


def test_sparsification_curve_shape():
    f, c, o = sparsification_curve(np.arange(10.0), np.arange(10.0), 4)
    np.testing.assert_allclose(f, [0, 0.25, 0.5, 0.75])
    assert c[0] == o[0] == pytest.approx(4.5)
    assert np.all(o <= c + 1e-12)


@given(st.lists(st.tuples(unit, unit), min_size=2, max_size=40))
def test_ause_nonnegative(pairs):
    e, s = map(list, zip(*pairs))
    assert ause(e, s, steps=4) >= 0.0


def test_pearson_examples():
    x = np.array([0.1, 0.4, 0.8])
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(1 - x, x) == pytest.approx(-1.0)
    # mpmath, 40 digits: cov 0.28 / sqrt(0.32 * 0.26)
    assert pearson([0.1, 0.5, 0.9], [0.2, 0.4, 0.9]) == pytest.approx(0.9707253433941510, abs=1e-12)


def test_pearson_zero_variance():
    with pytest.warns(DegenerateWarning):
        assert math.isnan(pearson([0.5, 0.5], [0.1, 0.9]))


def test_reliability_examples():
    rng = np.random.default_rng(1)
    oks = rng.uniform(0, 0.85, 200)
    rows = reliability_curve(oks, oks, bins=10)
    assert all(r.mean_conf == pytest.approx(r.mean_oks) for r in rows)
    rows = reliability_curve(np.minimum(oks + 0.1, 1.0), oks, bins=10)
    assert all(r.mean_conf - r.mean_oks == pytest.approx(0.1) for r in rows)
    assert reliability_deviation(rows) == pytest.approx(0.1)
    one = reliability_curve([0.51, 0.52, 0.55], [0.1, 0.2, 0.3], bins=10)
    assert len(one) == 1 and one[0].count == 3


def test_evaluate_excludes_nan():
    rep = evaluate([0.9, np.nan, 0.3], [0.8, 0.5, 0.2])
    assert rep.num_instances == 2 and rep.num_excluded == 1
    assert rep.map == pytest.approx(average_precision([0.9, 0.3], [0.8, 0.2])[0])
    d = rep.to_dict()
    assert set(d) >= {"map", "mar", "ause", "pearson", "reliability", "reliability_deviation"}
