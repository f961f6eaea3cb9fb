"""Confidence modes and dataset-level evaluation shared by the CLI and scripts."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ccnet
from .dataset import ConfigError, PoseDataset
from .oks import (
    DEFAULT_TAU_S,
    DegenerateWarning,
    KeypointSpec,
    batch_aggregate_soft,
    batch_aggregate_threshold,
    batch_instance_oks,
    batch_keypoint_oks,
)
from .ranking import EvalConfig, EvalReport, evaluate
from .theory import rescore, rle_confidence, sigma_from_maxval

CONF_MODES = ("heatmap-max", "rle", "constant", "rescored", "oracle", "ccnet")
AGG_MODES = ("threshold", "soft")


@dataclass
class ConfidenceOptions:
    mode: str = "heatmap-max"
    aggregation: str = "threshold"
    tau_s: float = DEFAULT_TAU_S
    l_tilde: float = 2.0
    rle_scale: float = 10.0
    area_source: str = "gt"
    sigma_source: str = "auto"
    subset: Optional[Sequence[int]] = None
    head: Optional[ccnet.CalibHead] = None

    def __post_init__(self):
        if self.mode not in CONF_MODES:
            raise ConfigError(f"unknown confidence mode {self.mode!r}; choose from {', '.join(CONF_MODES)}")
        if self.aggregation not in AGG_MODES:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.area_source not in ("gt", "pred"):
            raise ConfigError("area_source must be 'gt' or 'pred'")
        if self.sigma_source not in ("auto", "sigma", "maxval"):
            raise ConfigError("sigma_source must be 'auto', 'sigma' or 'maxval'")
        if self.mode == "ccnet" and self.head is None:
            raise ConfigError("mode 'ccnet' needs a trained head")


def subset_visibility(ds: PoseDataset, subset=None) -> np.ndarray:
    vis = ds.visibility.copy()
    if subset is not None:
        mask = np.zeros(ds.num_keypoints, dtype=bool)
        mask[list(subset)] = True
        vis &= mask[None, :]
    return vis


def instance_oks(ds: PoseDataset, spec: KeypointSpec, subset=None) -> np.ndarray:
    """(N,) OKS; NaN where the (subset of the) instance has no visible keypoint."""
    return batch_instance_oks(ds.pred_keypoints, ds.gt_keypoints, subset_visibility(ds, subset),
                              ds.areas, spec.falloff)


def keypoint_targets(ds: PoseDataset, spec: KeypointSpec) -> np.ndarray:
    return batch_keypoint_oks(ds.pred_keypoints, ds.gt_keypoints, ds.areas, spec.falloff)


def estimated_sigma(ds: PoseDataset, source: str = "auto", l_tilde: float = 2.0) -> np.ndarray:
    """Per-keypoint sigma: the prediction's own, or inverted from heatmap maxvals."""
    if source == "sigma" or (source == "auto" and ds.sigma is not None):
        if ds.sigma is None:
            raise ConfigError("sigma source 'sigma' requested but predictions carry no 'sigma' field")
        return ds.sigma
    return sigma_from_maxval(np.maximum(ds.kp_scores, 1e-12), l_tilde)


def rescored_keypoint_scores(ds: PoseDataset, spec: KeypointSpec, opts: ConfidenceOptions) -> np.ndarray:
    sigma = estimated_sigma(ds, opts.sigma_source, opts.l_tilde)
    area = ds.areas if opts.area_source == "gt" else ds.predicted_area()
    l = np.sqrt(spec.falloff[None, :] * area[:, None])
    return rescore(sigma, l, 0.0)


def keypoint_confidence(ds: PoseDataset, spec: KeypointSpec, opts: ConfidenceOptions):
    """Per-keypoint confidence and visibility weights for a mode.

    Visibility weights are None unless the mode predicts them (ccnet).
    """
    if opts.mode == "heatmap-max":
        return ds.kp_scores, None
    if opts.mode == "rle":
        if ds.sigma is None:
            return ds.kp_scores, None
        return rle_confidence(ds.sigma / opts.rle_scale, clamp=True), None
    if opts.mode == "rescored":
        return rescored_keypoint_scores(ds, spec, opts), None
    if opts.mode == "ccnet":
        if ds.features is None:
            raise ConfigError("mode 'ccnet' needs predictions with a 'features' field")
        return ccnet.forward(ds.features, opts.head)
    raise ConfigError(f"mode {opts.mode!r} has no keypoint-level confidence")


def instance_confidence(ds: PoseDataset, spec: KeypointSpec, opts: ConfidenceOptions,
                        oks: Optional[np.ndarray] = None) -> np.ndarray:
    """(N,) instance confidence for the configured mode.

    ``ccnet`` always aggregates with its predicted visibility; other modes use
    the configured aggregation with unit visibility for ``soft``.
    """
    n = len(ds)
    if opts.mode == "constant":
        return np.ones(n)
    if opts.mode == "oracle":
        c = instance_oks(ds, spec, opts.subset) if oks is None else oks
        return np.nan_to_num(c, nan=0.0)
    scores, vis = keypoint_confidence(ds, spec, opts)
    if vis is not None or opts.aggregation == "soft":
        w = np.ones_like(scores) if vis is None else vis
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWarning)
            return batch_aggregate_soft(scores, w, opts.subset)
    if opts.subset is not None:
        scores = scores[:, sorted(set(opts.subset))]
    return batch_aggregate_threshold(scores, opts.tau_s)


def evaluate_dataset(ds: PoseDataset, spec: KeypointSpec, opts: ConfidenceOptions,
                     cfg: Optional[EvalConfig] = None) -> EvalReport:
    """OKS, confidence and the full report for one dataset and mode.

    Ground-truth instances without a prediction count as misses (OKS 0,
    confidence 0) ranked after every predicted instance.
    """
    oks = instance_oks(ds, spec, opts.subset)
    conf = instance_confidence(ds, spec, opts, oks)
    if ds.missing_ids:
        m = len(ds.missing_ids)
        oks = np.concatenate([oks, np.zeros(m)])
        conf = np.concatenate([conf, np.zeros(m)])
    return evaluate(oks, conf, cfg)
