"""Ranking-dependent and ranking-independent evaluation of pose confidence.

All sorts by confidence are stable: equal confidences keep input order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .oks import DegenerateWarning, GroundTruthInstance, NotEvaluableError, PredictedInstance

COCO_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())


@dataclass
class EvalConfig:
    thresholds: Tuple[float, ...] = COCO_THRESHOLDS
    pck_tau: float = 0.5
    ause_steps: int = 20
    bins: int = 10
    interpolated: bool = False

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.size < 1:
            raise ValueError("need at least one OKS threshold")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(t <= 0) or np.any(t >= 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.ause_steps < 2 or self.bins < 2:
            raise ValueError("ause_steps and bins must be at least 2")
        if self.pck_tau <= 0:
            raise ValueError("pck_tau must be positive")
        self.thresholds = tuple(float(x) for x in t)


class PRPoint(NamedTuple):
    threshold: float
    recall: float
    precision: float


class ReliabilityBin(NamedTuple):
    bin_center: float
    mean_conf: float
    mean_oks: float
    count: int


@dataclass
class EvalReport:
    map: float
    mar: float
    per_threshold_ap: List[float]
    pr_points: List[PRPoint] = field(repr=False)
    ause: float
    pearson: float
    reliability: List[ReliabilityBin] = field(repr=False)
    sparsification: List[Tuple[float, float, float]] = field(repr=False)
    num_instances: int = 0
    num_excluded: int = 0

    @property
    def reliability_deviation(self) -> float:
        return reliability_deviation(self.reliability)

    def summary(self) -> dict:
        return {
            "map": self.map,
            "mar": self.mar,
            "per_threshold_ap": list(self.per_threshold_ap),
            "ause": self.ause,
            "pearson": self.pearson,
            "reliability_deviation": self.reliability_deviation,
            "num_instances": self.num_instances,
            "num_excluded": self.num_excluded,
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["reliability"] = [list(r) for r in self.reliability]
        return d


def _as_1d(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def confidence_order(conf) -> np.ndarray:
    """Indices sorting ``conf`` descending; ties keep input order."""
    return np.argsort(-np.asarray(conf, dtype=float), kind="stable")


def average_recall(oks, cfg: Optional[EvalConfig] = None) -> float:
    cfg = cfg or EvalConfig()
    c = _as_1d(oks, "oks")
    t = np.asarray(cfg.thresholds)
    return float(np.mean(c[None, :] > t[:, None], axis=1).mean())


def _ap_literal(hits: np.ndarray) -> float:
    n = hits.size
    precision = np.cumsum(hits) / np.arange(1, n + 1)
    return float(np.sum(hits * precision) / n)


def _ap_interpolated(hits: np.ndarray) -> float:
    # COCO-style 101-point interpolation; recall normalised by N as in the
    # top-down setting where every ground truth has exactly one prediction.
    n = hits.size
    tp = np.cumsum(hits)
    recall = tp / n
    precision = tp / np.arange(1, n + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    rec_thrs = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, rec_thrs, side="left")
    q = np.where(idx < n, envelope[np.minimum(idx, n - 1)], 0.0)
    return float(q.mean())


def average_precision(oks, conf, cfg: Optional[EvalConfig] = None) -> Tuple[float, List[float], List[PRPoint]]:
    """Mean AP over OKS thresholds, instances ranked by confidence.

    Returns ``(map, per_threshold_ap, pr_points)``. In the literal mode the
    recall of each PR point is normalised by N, so the area under the points
    of one threshold equals that threshold's AP.
    """
    cfg = cfg or EvalConfig()
    c = _as_1d(oks, "oks")
    s = _as_1d(conf, "conf")
    if c.shape != s.shape:
        raise ValueError(f"oks and conf lengths differ: {c.size} vs {s.size}")
    ranked = c[confidence_order(s)]
    n = ranked.size
    ranks = np.arange(1, n + 1)
    per_t, points = [], []
    for tau in cfg.thresholds:
        hits = (ranked > tau).astype(float)
        per_t.append(_ap_interpolated(hits) if cfg.interpolated else _ap_literal(hits))
        tp = np.cumsum(hits)
        points.extend(PRPoint(tau, float(r), float(p)) for r, p in zip(tp / n, tp / ranks))
    return float(np.mean(per_t)), per_t, points


def pck(pred: PredictedInstance, gt: GroundTruthInstance, norm: float, tau: float) -> float:
    """Fraction of visible keypoints within ``tau * norm`` of the ground truth."""
    if norm <= 0 or tau <= 0:
        raise ValueError("norm and tau must be positive")
    vis = gt.visibility
    if not vis.any():
        raise NotEvaluableError("instance has no visible keypoints")
    err = np.linalg.norm(pred.keypoints - gt.keypoints, axis=1) / norm
    return float(np.mean(err[vis] <= tau))


def sparsification_curve(errors, conf, steps: int):
    """Sparsification and oracle curves.

    Returns ``(fractions, remaining_error, oracle_error)`` at removal
    fractions 0, 1/steps, ..., 1 - 1/steps. The least confident samples are
    removed first; the oracle removes the largest errors first.
    """
    e = _as_1d(errors, "errors")
    s = _as_1d(conf, "conf")
    if e.shape != s.shape:
        raise ValueError("errors and conf lengths differ")
    if e.size < 2:
        raise ValueError("sparsification needs at least two samples")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    n = e.size
    by_conf = np.cumsum(e[confidence_order(s)])
    by_error = np.cumsum(e[np.argsort(e, kind="stable")])
    fractions = np.arange(steps) / steps
    keep = n - (np.arange(steps) * n) // steps
    curve = by_conf[keep - 1] / keep
    oracle = by_error[keep - 1] / keep
    return fractions, curve, oracle


def ause(errors, conf, steps: int = 20) -> float:
    """Area between sparsification and oracle curves, left Riemann sum."""
    _, curve, oracle = sparsification_curve(errors, conf, steps)
    return float(np.mean(np.maximum(curve - oracle, 0.0)))


def pearson(conf, oks) -> float:
    """Product-moment correlation; NaN with a DegenerateWarning on zero variance."""
    x = _as_1d(conf, "conf")
    y = _as_1d(oks, "oks")
    if x.shape != y.shape:
        raise ValueError("conf and oks lengths differ")
    if x.size < 2:
        raise ValueError("pearson needs at least two samples")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        warnings.warn("zero variance, correlation undefined", DegenerateWarning)
        return float("nan")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def reliability_curve(conf, oks, bins: int = 10) -> List[ReliabilityBin]:
    """Equal-width confidence bins over [0, 1]; empty bins are omitted."""
    if bins < 2:
        raise ValueError("bins must be at least 2")
    x = np.clip(_as_1d(conf, "conf"), 0.0, 1.0)
    y = _as_1d(oks, "oks")
    if x.shape != y.shape:
        raise ValueError("conf and oks lengths differ")
    idx = np.minimum((x * bins).astype(int), bins - 1)
    rows = []
    for b in range(bins):
        m = idx == b
        if m.any():
            rows.append(ReliabilityBin((b + 0.5) / bins, float(x[m].mean()), float(y[m].mean()),
                                       int(m.sum())))
    return rows


def reliability_deviation(rows) -> float:
    """Unweighted mean |mean_conf - mean_oks| over populated bins."""
    if not rows:
        return float("nan")
    return float(np.mean([abs(r[1] - r[2]) for r in rows]))


def evaluate(oks, conf, cfg: Optional[EvalConfig] = None, errors=None) -> EvalReport:
    """Full report for one (oks, conf) pairing.

    NaN OKS entries mark non-evaluable instances; they are dropped from every
    metric and counted in ``num_excluded``. ``errors`` defaults to 1 - OKS.
    """
    cfg = cfg or EvalConfig()
    c = np.asarray(oks, dtype=float).reshape(-1)
    s = np.asarray(conf, dtype=float).reshape(-1)
    if c.shape != s.shape:
        raise ValueError("oks and conf lengths differ")
    ok = ~np.isnan(c)
    c, s = c[ok], s[ok]
    e = 1.0 - c if errors is None else np.asarray(errors, dtype=float).reshape(-1)[ok]
    m, per_t, points = average_precision(c, s, cfg)
    frac, curve, oracle = sparsification_curve(e, s, cfg.ause_steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        r = pearson(s, c)
    return EvalReport(
        map=m,
        mar=average_recall(c, cfg),
        per_threshold_ap=per_t,
        pr_points=points,
        ause=float(np.mean(np.maximum(curve - oracle, 0.0))),
        pearson=r,
        reliability=reliability_curve(s, c, cfg.bins),
        sparsification=[(float(a), float(b), float(d)) for a, b, d in zip(frac, curve, oracle)],
        num_instances=int(c.size),
        num_excluded=int((~ok).sum()),
    )
