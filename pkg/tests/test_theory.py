import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from poseconf.oks import keypoint_oks
from poseconf.theory import (
    AnnotationModel,
    EstimatorParams,
    clamp_unit,
    expected_oks,
    heatmap_confidence,
    imperfect_detection,
    imperfect_detection_unshifted_scale,
    imperfect_regression,
    laplace_misspec,
    misordered_pair,
    oracle_score,
    rescore,
    rle_confidence,
    sigma_from_maxval,
)

pos = st.floats(0.05, 20.0)
nonneg = st.floats(0.0, 20.0)


def test_expected_oks_examples():
    m = AnnotationModel((0.0, 0.0), 3.0)
    assert expected_oks((0.0, 0.0), m, 3.0) == pytest.approx(0.5)
    # mpmath: 0.8 * exp(-0.1)
    m1 = AnnotationModel((2.0, 5.0), 1.0)
    assert expected_oks((3.0, 5.0), m1, 2.0) == pytest.approx(0.7238699344287677, rel=1e-12)
    assert expected_oks((3.0, 5.0), m1, 2.0) == pytest.approx(0.7239, abs=5e-5)


@given(st.floats(-10, 10), st.floats(-10, 10), pos)
def test_expected_oks_noiseless_limit(dx, dy, l):
    m = AnnotationModel((1.0, -2.0), 0.0)
    p_hat = (1.0 + dx, -2.0 + dy)
    assert expected_oks(p_hat, m, l) == pytest.approx(keypoint_oks(p_hat, m.mu, l), rel=1e-12)


@given(nonneg, pos, nonneg)
def test_rescore_range_and_monotonicity(sigma, l, delta):
    v = rescore(sigma, l, delta)
    assert 0.0 <= v <= 1.0
    assert rescore(sigma, l, delta + 0.5) <= v + 1e-15
    # more noise lowers the score only once sigma^2 + l^2 exceeds delta^2 / 2
    if sigma ** 2 + l ** 2 >= delta ** 2 / 2:
        assert rescore(sigma + 0.5, l, delta) <= v + 1e-15
    elif v > 1e-200:  # deep in the tail both values underflow to 0
        assert rescore(sigma + 1e-3, l, delta) > v
    assert v <= oracle_score(sigma, l) + 1e-15


def test_rescore_examples():
    sigma = sigma_from_maxval(0.5, 2.0)
    assert sigma == pytest.approx(2.0)
    assert rescore(sigma, 4.0, 0.0) == pytest.approx(0.8)
    assert rescore(1.0, 2.0, 1.0) == pytest.approx(0.7238699344287677, rel=1e-12)
    assert rescore(1.0, 2.0, 1e4) == 0.0
    with pytest.raises(ValueError):
        rescore(1.0, 0.0)


@pytest.mark.parametrize("sigma, l, expected", [(0.0, 3.0, 1.0), (2.0, 2.0, 0.5), (1.0, 3.0, 0.9)])
def test_oracle_score(sigma, l, expected):
    assert oracle_score(sigma, l) == pytest.approx(expected)


@pytest.mark.parametrize("sigma, expected", [(0.0, 1.0), (2.0, 0.5), (1.0, 0.8)])
def test_heatmap_confidence(sigma, expected):
    assert heatmap_confidence(sigma, 2.0) == pytest.approx(expected)


def test_rle_confidence():
    assert rle_confidence(0.0) == 1.0
    assert rle_confidence(0.3) == pytest.approx(0.7)
    assert rle_confidence(1.5) == pytest.approx(-0.5)
    assert rle_confidence(1.5, clamp=True) == 0.0


@pytest.mark.parametrize("s, expected", [(0.5, 2.0), (1.0, 0.0), (0.8, 1.0)])
def test_sigma_from_maxval(s, expected):
    assert sigma_from_maxval(s, 2.0) == pytest.approx(expected, abs=1e-12)


@given(nonneg, st.floats(0.5, 5.0))
def test_maxval_roundtrip(sigma, lt):
    assert sigma_from_maxval(heatmap_confidence(sigma, lt), lt) == pytest.approx(sigma, abs=1e-6)


def test_sigma_from_maxval_rejects_zero():
    with pytest.raises(ValueError):
        sigma_from_maxval(0.0)


def test_imperfect_regression():
    assert imperfect_regression(1.3, 0.0)[0] == pytest.approx(1.3)
    s, c = imperfect_regression(1.0, 2.0)
    assert s == pytest.approx(math.sqrt(3)) and c == pytest.approx(1 - math.sqrt(3))


def test_imperfect_regression_matches_1d_nll_minimum():
    # Gaussian NLL over samples p ~ N(0, I) with the mean pinned at (2, 0)
    x = np.random.default_rng(5).standard_normal((1_000_000, 2))
    d2 = np.sum((x - [2.0, 0.0]) ** 2, axis=1).mean()
    res = optimize.minimize_scalar(lambda s: 2 * math.log(s) + d2 / (2 * s * s), bounds=(0.1, 10),
                                   method="bounded", options={"xatol": 1e-10})
    assert res.x == pytest.approx(math.sqrt(3), rel=0.01)


def test_imperfect_detection_consistency_limit():
    s, o = imperfect_detection(1.0, 2.0, 0.0)
    assert s == pytest.approx(5.0) and o == pytest.approx(0.8)


def _grid_detection_oracle(l_tilde, delta, pitch=0.05, half=14.0):
    # noiseless target, so no averaging is needed; plain grid MSE over (o, log s)
    ax = np.arange(-half, half + pitch / 2, pitch)
    X, Y = np.meshgrid(ax, ax)
    r2_t = X ** 2 + Y ** 2
    r2_p = (X - delta) ** 2 + Y ** 2
    target = np.exp(-r2_t / (2 * l_tilde ** 2))

    def mse(q):
        o, ls = q
        return np.mean((o * np.exp(-r2_p / (2 * np.exp(ls))) - target) ** 2)

    res = optimize.minimize(mse, [0.8, math.log(l_tilde ** 2)], method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-16, "maxiter": 4000})
    return math.exp(res.x[1]), res.x[0]


def test_imperfect_detection_against_grid_oracle():
    s, o = imperfect_detection(0.0, 2.0, math.sqrt(2.0))
    assert s == pytest.approx(math.sqrt(17) + 1, rel=1e-12)
    assert o == pytest.approx(0.7858569265892362, rel=1e-12)  # mpmath
    s_num, o_num = _grid_detection_oracle(2.0, math.sqrt(2.0))
    assert s_num == pytest.approx(s, rel=1e-3)
    assert o_num == pytest.approx(o, rel=1e-3)
    # the printed scale without the shift factor is off by about 10%
    assert imperfect_detection_unshifted_scale(0.0, 2.0, math.sqrt(2.0)) == pytest.approx(0.8769, abs=1e-4)
    assert abs(o_num - 0.8769) > 0.05


@given(nonneg.filter(lambda s: s < 5), st.floats(0.5, 4.0), st.floats(0.0, 4.0), st.floats(0.05, 2.0))
def test_imperfect_detection_scale_decreasing(sigma, lt, d, step):
    assert imperfect_detection(sigma, lt, d + step)[1] < imperfect_detection(sigma, lt, d)[1]


def test_laplace_misspec():
    assert laplace_misspec(0.0) == (0.0, 1.0)
    b, c = laplace_misspec(1.0)
    assert b == pytest.approx(0.7978845608028654, rel=1e-12)
    assert c == pytest.approx(0.2021154391971346, rel=1e-12)


def test_misordered_pair():
    pair = misordered_pair()
    a, b = pair["a"], pair["b"]
    assert a["heatmap_confidence"] > b["heatmap_confidence"]
    assert a["oracle_score"] < b["oracle_score"]
    with pytest.raises(ValueError):
        misordered_pair(l_small=8.0, l_large=8.0)


def test_dataclass_validation():
    with pytest.raises(ValueError):
        AnnotationModel((0, 0), -1.0)
    with pytest.raises(ValueError):
        EstimatorParams(l_tilde=0.0)
    with pytest.raises(ValueError):
        EstimatorParams(delta_hat=-1.0)


def test_clamp_unit():
    np.testing.assert_array_equal(clamp_unit([-0.5, 0.5, 1.5]), [0.0, 0.5, 1.0])


def test_vectorised():
    out = rescore(np.array([0.0, 1.0]), np.array([2.0, 2.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, [1.0, 0.8 * math.exp(-0.1)])
