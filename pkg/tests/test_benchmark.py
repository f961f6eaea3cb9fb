import itertools

import numpy as np
import pytest

from poseconf import pipeline
from poseconf.benchmark import SynthConfig, synth_benchmark
from poseconf.dataset import ConfigError
from poseconf.ranking import EvalConfig, average_precision
from poseconf.theory import sigma_from_maxval

SMALL = SynthConfig(n_instances=300)


def test_deterministic():
    a, b = synth_benchmark(SMALL, 4), synth_benchmark(SMALL, 4)
    for name in ("gt_keypoints", "pred_keypoints", "kp_scores", "features", "visibility", "areas"):
        np.testing.assert_array_equal(getattr(a.data, name), getattr(b.data, name))
    assert not np.array_equal(a.data.features, synth_benchmark(SMALL, 5).data.features)


def test_shapes_and_visibility():
    b = synth_benchmark(SMALL, 0)
    d = b.data
    assert d.gt_keypoints.shape == (300, 17, 2) and d.features.shape == (300, 17, 8)
    assert d.visibility.any(axis=1).all()
    assert d.sigma is None
    np.testing.assert_allclose(sigma_from_maxval(d.kp_scores, 2.0), b.annotation_sigma, rtol=1e-9)


def test_rle_mode_carries_sigma():
    d = synth_benchmark(SynthConfig(n_instances=50, score_mode="rle"), 0).data
    assert d.sigma is not None
    np.testing.assert_allclose(d.kp_scores, np.clip(1 - d.sigma / 10.0, 0, 1))


def test_noise_free_features_determine_oks():
    b = synth_benchmark(SynthConfig(n_instances=200, feature_noise=0.0), 1)
    target = b.keypoint_oks()
    # first latent is logit(oks); recover it by least squares from the features
    x = b.data.features.reshape(-1, 8)
    y = np.log(np.clip(target, 1e-4, 1 - 1e-4).reshape(-1) / (1 - np.clip(target, 1e-4, 1 - 1e-4).reshape(-1)))
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    np.testing.assert_allclose(x @ coef, y, atol=1e-8)


def test_fixed_delta_mode():
    cfg = SynthConfig(n_instances=40, delta_mode="fixed", fixed_delta=1.5)
    np.testing.assert_allclose(synth_benchmark(cfg, 0).delta_hat, 1.5)


@pytest.mark.parametrize("kw", [
    {"area_range": (0.0, 1.0)}, {"sigma_range": (2.0, 1.0)}, {"visibility_rate": 0.0},
    {"feature_dim": 3}, {"score_mode": "x"}, {"delta_mode": "x"}, {"n_instances": 1},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_oracle_beats_heuristic_and_matches_brute_force_maximum():
    b = synth_benchmark(SMALL, 2)
    oks = b.instance_oks()
    heur = pipeline.instance_confidence(b.data, b.spec, pipeline.ConfidenceOptions())
    assert average_precision(oks, oks)[0] >= average_precision(oks, heur)[0]
    # small subsets: oracle order is the permutation maximum
    cfg = EvalConfig()
    for start in range(0, 30, 6):
        sub = oks[start:start + 5]
        best = max(average_precision(np.array(p), np.arange(5, 0, -1), cfg)[0]
                   for p in itertools.permutations(sub))
        assert average_precision(sub, sub, cfg)[0] == pytest.approx(best)


def test_modes_share_mar_and_order():
    b = synth_benchmark(SMALL, 0)
    reps = {m: pipeline.evaluate_dataset(b.data, b.spec, pipeline.ConfidenceOptions(mode=m))
            for m in ("constant", "heatmap-max", "rescored", "oracle")}
    assert len({r.mar for r in reps.values()}) == 1
    assert reps["oracle"].map >= max(r.map for r in reps.values())


def test_pipeline_options_validation():
    with pytest.raises(ConfigError):
        pipeline.ConfidenceOptions(mode="nope")
    with pytest.raises(ConfigError):
        pipeline.ConfidenceOptions(mode="ccnet")
    with pytest.raises(ConfigError):
        pipeline.ConfidenceOptions(area_source="box")


def test_rescored_sigma_sources():
    b = synth_benchmark(SynthConfig(n_instances=50, score_mode="rle"), 0)
    with pytest.raises(ConfigError):
        pipeline.estimated_sigma(synth_benchmark(SMALL, 0).data, "sigma")
    np.testing.assert_array_equal(pipeline.estimated_sigma(b.data, "auto"), b.data.sigma)


def test_area_sources_differ():
    b = synth_benchmark(SMALL, 0)
    gt = pipeline.rescored_keypoint_scores(b.data, b.spec, pipeline.ConfidenceOptions(mode="rescored"))
    pr = pipeline.rescored_keypoint_scores(b.data, b.spec,
                                           pipeline.ConfidenceOptions(mode="rescored", area_source="pred"))
    assert not np.array_equal(gt, pr)


def test_subset_evaluation():
    b = synth_benchmark(SMALL, 0)
    opts = pipeline.ConfidenceOptions(mode="oracle", subset=[0, 1, 2])
    rep = pipeline.evaluate_dataset(b.data, b.spec, opts)
    assert rep.num_instances + rep.num_excluded == 300
    assert rep.map == pytest.approx(rep.mar)
