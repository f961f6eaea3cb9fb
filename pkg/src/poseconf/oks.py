"""Object keypoint similarity and keypoint-to-instance confidence aggregation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

# Per-keypoint sigmas of the 17 COCO body keypoints. The falloff used in the
# OKS envelope is var_k = (2 * sigma_k) ** 2, so that l_k^2 = var_k * area.
COCO_SIGMAS = np.array([
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062,
    0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
])
COCO_KEYPOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

DEFAULT_TAU_S = 0.2


class NotEvaluableError(ValueError):
    """Raised for instances without a single visible keypoint."""


class DegenerateWarning(RuntimeWarning):
    """Emitted when a quantity is undefined and a fallback value is returned."""


@dataclass(frozen=True)
class KeypointSpec:
    falloff: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        falloff = np.asarray(self.falloff, dtype=float).reshape(-1)
        if falloff.size < 1:
            raise ValueError("KeypointSpec needs at least one keypoint")
        if not np.all(falloff > 0) or not np.all(np.isfinite(falloff)):
            raise ValueError("falloff constants must be positive and finite")
        if self.names and len(self.names) != falloff.size:
            raise ValueError("names and falloff have different lengths")
        object.__setattr__(self, "falloff", falloff)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def count(self) -> int:
        return int(self.falloff.size)

    @classmethod
    def coco(cls) -> "KeypointSpec":
        return cls((2.0 * COCO_SIGMAS) ** 2, COCO_KEYPOINT_NAMES)

    @classmethod
    def from_sigmas(cls, sigmas: Sequence[float], names: Sequence[str] = ()) -> "KeypointSpec":
        """Build a spec from COCO-style per-keypoint sigmas."""
        return cls((2.0 * np.asarray(sigmas, dtype=float)) ** 2, tuple(names))

    def to_dict(self) -> dict:
        return {"falloff": self.falloff.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointSpec":
        if "falloff" in d:
            return cls(d["falloff"], tuple(d.get("names", ())))
        if "sigmas" in d:
            return cls.from_sigmas(d["sigmas"], tuple(d.get("names", ())))
        raise ValueError("keypoint spec needs a 'falloff' or 'sigmas' field")


@dataclass
class GroundTruthInstance:
    keypoints: np.ndarray
    visibility: np.ndarray
    area: float

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility).astype(bool).reshape(-1)
        if self.visibility.size != self.keypoints.shape[0]:
            raise ValueError("visibility and keypoints have different lengths")
        if not self.area > 0:
            raise ValueError(f"area must be positive, got {self.area}")
        self.area = float(self.area)

    @property
    def evaluable(self) -> bool:
        return bool(self.visibility.any())


@dataclass
class PredictedInstance:
    keypoints: np.ndarray
    kp_scores: np.ndarray
    sigma: Optional[np.ndarray] = None
    instance_conf: float = 0.0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 2)
        self.kp_scores = np.asarray(self.kp_scores, dtype=float).reshape(-1)
        if self.kp_scores.size != self.keypoints.shape[0]:
            raise ValueError("kp_scores and keypoints have different lengths")
        if np.any(self.kp_scores < 0) or np.any(self.kp_scores > 1):
            raise ValueError("keypoint scores must lie in [0, 1]")
        if not 0.0 <= self.instance_conf <= 1.0:
            raise ValueError("instance confidence must lie in [0, 1]")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
            if self.sigma.size != self.keypoints.shape[0]:
                raise ValueError("sigma and keypoints have different lengths")
            if np.any(self.sigma < 0):
                raise ValueError("sigma must be nonnegative")


def falloff_scale(var_k, area):
    """OKS length scale l_k = sqrt(var_k * area). Works elementwise on arrays."""
    var_k = np.asarray(var_k, dtype=float)
    area = np.asarray(area, dtype=float)
    if np.any(var_k <= 0) or np.any(area <= 0):
        raise ValueError("falloff constant and area must be positive")
    out = np.sqrt(var_k * area)
    return float(out) if out.ndim == 0 else out


def keypoint_oks(p_hat, p, l):
    """Gaussian envelope exp(-|p_hat - p|^2 / (2 l^2)).

    ``p_hat`` and ``p`` are (..., 2) arrays; ``l`` broadcasts against the
    leading dimensions.
    """
    l = np.asarray(l, dtype=float)
    if np.any(l <= 0):
        raise ValueError("OKS scale l must be positive")
    d2 = np.sum((np.asarray(p_hat, dtype=float) - np.asarray(p, dtype=float)) ** 2, axis=-1)
    out = np.exp(-d2 / (2.0 * l ** 2))
    return float(out) if out.ndim == 0 else out


def _check_shapes(pred: PredictedInstance, gt: GroundTruthInstance, spec: KeypointSpec):
    k = spec.count
    if pred.keypoints.shape[0] != k or gt.keypoints.shape[0] != k:
        raise ValueError(
            f"expected {k} keypoints, got pred={pred.keypoints.shape[0]} gt={gt.keypoints.shape[0]}"
        )


def keypoint_oks_vector(pred: PredictedInstance, gt: GroundTruthInstance, spec: KeypointSpec) -> np.ndarray:
    """Per-keypoint OKS of one instance, invisible keypoints included."""
    _check_shapes(pred, gt, spec)
    l = falloff_scale(spec.falloff, gt.area)
    return keypoint_oks(pred.keypoints, gt.keypoints, l)


def instance_oks(pred: PredictedInstance, gt: GroundTruthInstance, spec: KeypointSpec,
                 subset: Optional[Iterable[int]] = None) -> float:
    """Visibility-weighted mean of keypoint OKS.

    ``subset`` restricts the average to a set of keypoint indices, which is
    how part-level (face, hands, ...) OKS is computed.
    """
    vis = gt.visibility.copy()
    if subset is not None:
        mask = np.zeros_like(vis)
        mask[list(subset)] = True
        vis &= mask
    if not vis.any():
        raise NotEvaluableError("instance has no visible keypoints")
    ks = keypoint_oks_vector(pred, gt, spec)
    return float(np.sum(ks[vis]) / np.count_nonzero(vis))


def batch_keypoint_oks(pred_kps, gt_kps, areas, falloff) -> np.ndarray:
    """(N, K) keypoint OKS for stacked instances."""
    l = falloff_scale(np.asarray(falloff)[None, :], np.asarray(areas, dtype=float)[:, None])
    return keypoint_oks(pred_kps, gt_kps, l)


def batch_instance_oks(pred_kps, gt_kps, visibility, areas, falloff) -> np.ndarray:
    """(N,) instance OKS; rows with no visible keypoint come back as NaN."""
    ks = batch_keypoint_oks(pred_kps, gt_kps, areas, falloff)
    w = np.asarray(visibility, dtype=float)
    nvis = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (ks * w).sum(axis=1) / nvis
    out[nvis == 0] = np.nan
    return out


def aggregate_threshold(kp_scores, tau_s: float = DEFAULT_TAU_S) -> float:
    """Mean of keypoint scores strictly above ``tau_s``.

    Falls back to the mean of all scores when none passes, so every instance
    keeps a rankable confidence.
    """
    s = np.asarray(kp_scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("empty score list")
    keep = s > tau_s
    if not keep.any():
        return float(s.mean())
    return float(s[keep].mean())


def batch_aggregate_threshold(kp_scores, tau_s: float = DEFAULT_TAU_S) -> np.ndarray:
    s = np.asarray(kp_scores, dtype=float)
    keep = s > tau_s
    n = keep.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n > 0, (s * keep).sum(axis=1) / n, s.mean(axis=1))
    return out


def aggregate_soft(kp_scores, kp_vis, subset: Optional[Iterable[int]] = None) -> float:
    """Visibility-weighted mean of keypoint scores, optionally over a subset.

    A zero total visibility returns 0.0 with a DegenerateWarning.
    """
    s = np.asarray(kp_scores, dtype=float).reshape(-1)
    v = np.asarray(kp_vis, dtype=float).reshape(-1)
    if s.shape != v.shape:
        raise ValueError("scores and visibilities have different lengths")
    if subset is not None:
        idx = np.asarray(sorted(set(subset)), dtype=int)
        if idx.size == 0:
            raise ValueError("subset must be nonempty")
        s, v = s[idx], v[idx]
    total = v.sum()
    if total <= 0:
        warnings.warn("zero total visibility, soft aggregate set to 0", DegenerateWarning)
        return 0.0
    return float(np.dot(v, s) / total)


def batch_aggregate_soft(kp_scores, kp_vis, subset: Optional[Iterable[int]] = None) -> np.ndarray:
    s = np.asarray(kp_scores, dtype=float)
    v = np.asarray(kp_vis, dtype=float)
    if subset is not None:
        idx = np.asarray(sorted(set(subset)), dtype=int)
        s, v = s[:, idx], v[:, idx]
    total = v.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, (s * v).sum(axis=1) / total, 0.0)
    if np.any(total <= 0):
        warnings.warn(f"{int(np.sum(total <= 0))} instance(s) with zero total visibility",
                      DegenerateWarning)
    return out
