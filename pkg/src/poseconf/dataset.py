"""Stacked ground-truth/prediction arrays and the JSON instance format.

Ground-truth file: a JSON list of
    {"id": ..., "area": a, "keypoints": [x1, y1, v1, x2, y2, v2, ...]}
Prediction file: a JSON list of
    {"id": ..., "keypoints": [x1, y1, s1, ...], "sigma": [...]?, "score": c?,
     "area": a?, "features": [[...] * K]?}
``keypoints`` may also be given as a list of K triples. Visibility v > 0
counts as visible (COCO uses 1 and 2).
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .oks import GroundTruthInstance, KeypointSpec, PredictedInstance


class ParseError(ValueError):
    exit_code = 2


class AlignmentError(ValueError):
    exit_code = 3


class ConfigError(ValueError):
    exit_code = 4


@dataclass
class PoseDataset:
    ids: list
    gt_keypoints: np.ndarray
    visibility: np.ndarray
    areas: np.ndarray
    pred_keypoints: np.ndarray
    kp_scores: np.ndarray
    sigma: Optional[np.ndarray] = None
    pred_area: Optional[np.ndarray] = None
    score: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    missing_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_keypoints(self) -> int:
        return self.gt_keypoints.shape[1]

    def subset(self, idx) -> "PoseDataset":
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[idx]

        return replace(
            self,
            ids=[self.ids[i] for i in idx],
            gt_keypoints=self.gt_keypoints[idx],
            visibility=self.visibility[idx],
            areas=self.areas[idx],
            pred_keypoints=self.pred_keypoints[idx],
            kp_scores=self.kp_scores[idx],
            sigma=take(self.sigma),
            pred_area=take(self.pred_area),
            score=take(self.score),
            features=take(self.features),
            missing_ids=[],
        )

    def pairs(self) -> List[Tuple[GroundTruthInstance, PredictedInstance]]:
        out = []
        for i in range(len(self)):
            gt = GroundTruthInstance(self.gt_keypoints[i], self.visibility[i], self.areas[i])
            pred = PredictedInstance(
                self.pred_keypoints[i], self.kp_scores[i],
                None if self.sigma is None else self.sigma[i],
                0.0 if self.score is None else float(self.score[i]),
            )
            out.append((gt, pred))
        return out

    def predicted_area(self) -> np.ndarray:
        """Predicted areas; falls back to the tight box of the predicted keypoints."""
        if self.pred_area is not None:
            return self.pred_area
        lo = self.pred_keypoints.min(axis=1)
        hi = self.pred_keypoints.max(axis=1)
        return np.maximum(np.prod(hi - lo, axis=1), 1e-6)

    def gt_records(self) -> list:
        recs = []
        for i, id_ in enumerate(self.ids):
            kp = np.column_stack([self.gt_keypoints[i], np.where(self.visibility[i], 2, 0)])
            recs.append({"id": id_, "area": float(self.areas[i]), "keypoints": _flat(kp)})
        return recs

    def pred_records(self) -> list:
        recs = []
        for i, id_ in enumerate(self.ids):
            kp = np.column_stack([self.pred_keypoints[i], self.kp_scores[i]])
            r = {"id": id_, "keypoints": _flat(kp)}
            if self.sigma is not None:
                r["sigma"] = [float(x) for x in self.sigma[i]]
            if self.score is not None:
                r["score"] = float(self.score[i])
            if self.pred_area is not None:
                r["area"] = float(self.pred_area[i])
            if self.features is not None:
                r["features"] = [[float(x) for x in row] for row in self.features[i]]
            recs.append(r)
        return recs


def _flat(kp: np.ndarray) -> list:
    return [float(x) for x in kp.reshape(-1)]


def _read_json(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"{path}: cannot read ({e.strerror})") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if isinstance(doc, dict) and "instances" in doc:
        doc = doc["instances"]
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a JSON list of instances")
    return doc


def _keypoints(rec, k, where) -> np.ndarray:
    raw = rec.get("keypoints")
    if raw is None:
        raise ParseError(f"{where}: missing field 'keypoints'")
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{where}: field 'keypoints' is not numeric") from e
    if arr.size != 3 * k:
        raise ParseError(f"{where}: field 'keypoints' has {arr.size} numbers, expected {3 * k} (K={k})")
    arr = arr.reshape(k, 3)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: field 'keypoints' has non-finite values")
    return arr


def _vector(rec, name, k, where) -> Optional[np.ndarray]:
    if name not in rec or rec[name] is None:
        return None
    try:
        arr = np.asarray(rec[name], dtype=float).reshape(-1)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{where}: field '{name}' is not numeric") from e
    if arr.size != k:
        raise ParseError(f"{where}: field '{name}' has {arr.size} values, expected {k}")
    return arr


def _ids(records, path) -> list:
    ids = []
    for i, r in enumerate(records):
        if not isinstance(r, dict) or "id" not in r:
            raise ParseError(f"{path}: instance {i}: missing field 'id'")
        ids.append(r["id"])
    seen = set()
    dups = sorted({str(x) for x in ids if x in seen or seen.add(x)})
    if dups:
        raise ParseError(f"{path}: duplicate ids {', '.join(dups)}")
    return ids


def load_dataset(gt_path, pred_path, spec: KeypointSpec) -> PoseDataset:
    """Read and align ground truth and predictions by id.

    Predictions with an unknown id raise AlignmentError. Ground-truth
    instances without a prediction are listed in ``missing_ids``.
    """
    k = spec.count
    gts = _read_json(gt_path)
    preds = _read_json(pred_path)
    gt_ids = _ids(gts, gt_path)
    pred_ids = _ids(preds, pred_path)
    unknown = [str(x) for x in pred_ids if x not in set(gt_ids)]
    if unknown:
        raise AlignmentError(f"{pred_path}: predictions with unknown ids: {', '.join(unknown)}")
    pred_by_id = dict(zip(pred_ids, preds))

    cols = {n: [] for n in ("ids", "gk", "vis", "area", "pk", "ks", "sigma", "parea", "score", "feat")}
    missing = []
    for i, g in enumerate(gts):
        gwhere = f"{gt_path}: instance {i} (id={g['id']})"
        gkp = _keypoints(g, k, gwhere)
        area = g.get("area")
        if not isinstance(area, (int, float)) or not area > 0:
            raise ParseError(f"{gwhere}: field 'area' must be a positive number")
        if g["id"] not in pred_by_id:
            missing.append(g["id"])
            continue
        p = pred_by_id[g["id"]]
        pwhere = f"{pred_path}: instance {pred_ids.index(g['id'])} (id={g['id']})"
        pkp = _keypoints(p, k, pwhere)
        if np.any(pkp[:, 2] < 0) or np.any(pkp[:, 2] > 1):
            raise ParseError(f"{pwhere}: keypoint scores must lie in [0, 1]")
        sigma = _vector(p, "sigma", k, pwhere)
        if sigma is not None and np.any(sigma < 0):
            raise ParseError(f"{pwhere}: field 'sigma' must be nonnegative")
        score = p.get("score")
        if score is not None and not (isinstance(score, (int, float)) and 0 <= score <= 1):
            raise ParseError(f"{pwhere}: field 'score' must lie in [0, 1]")
        parea = p.get("area")
        if parea is not None and not (isinstance(parea, (int, float)) and parea > 0):
            raise ParseError(f"{pwhere}: field 'area' must be a positive number")
        feat = None
        if p.get("features") is not None:
            try:
                feat = np.asarray(p["features"], dtype=float)
            except (TypeError, ValueError) as e:
                raise ParseError(f"{pwhere}: field 'features' is not numeric") from e
            if feat.ndim != 2 or feat.shape[0] != k:
                raise ParseError(f"{pwhere}: field 'features' must be a K x F matrix with K={k}")
        cols["ids"].append(g["id"])
        cols["gk"].append(gkp[:, :2])
        cols["vis"].append(gkp[:, 2] > 0)
        cols["area"].append(float(area))
        cols["pk"].append(pkp[:, :2])
        cols["ks"].append(pkp[:, 2])
        cols["sigma"].append(sigma)
        cols["parea"].append(parea)
        cols["score"].append(score)
        cols["feat"].append(feat)

    def optional(name, what):
        vals = cols[name]
        present = [v is not None for v in vals]
        if not any(present):
            return None
        if not all(present):
            raise ParseError(f"{pred_path}: field '{what}' must be given for all predictions or none")
        try:
            return np.asarray(vals, dtype=float)
        except ValueError as e:
            raise ParseError(f"{pred_path}: field '{what}' has inconsistent shapes") from e

    n = len(cols["ids"])
    return PoseDataset(
        ids=cols["ids"],
        gt_keypoints=np.asarray(cols["gk"], dtype=float).reshape(n, k, 2),
        visibility=np.asarray(cols["vis"], dtype=bool).reshape(n, k),
        areas=np.asarray(cols["area"], dtype=float),
        pred_keypoints=np.asarray(cols["pk"], dtype=float).reshape(n, k, 2),
        kp_scores=np.asarray(cols["ks"], dtype=float).reshape(n, k),
        sigma=optional("sigma", "sigma"),
        pred_area=optional("parea", "area"),
        score=optional("score", "score"),
        features=optional("feat", "features"),
        missing_ids=missing,
    )


def load_spec(path=None) -> KeypointSpec:
    if path is None:
        return KeypointSpec.coco()
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: cannot read keypoint spec ({e})") from e
    try:
        return KeypointSpec.from_dict(d)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, NaN/inf written as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj))


def write_csv(path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def save_dataset(ds: PoseDataset, gt_path, pred_path) -> None:
    write_json(gt_path, ds.gt_records())
    write_json(pred_path, ds.pred_records())
