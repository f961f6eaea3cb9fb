"""One-layer calibration head for keypoint confidence and visibility.

The head reads the concatenated per-keypoint feature vectors of an instance
(K * F inputs) and emits K confidence logits followed by K visibility logits,
each squashed by a logistic. Training minimises

    sum_k v_k (s_hat_k - s_k)^2 + lambda_vis * BCE(v_hat, v)

averaged over instances, with s_k the keypoint OKS of the frozen prediction
and v_k the annotated visibility. Gradients are derived by hand; Adam with
step learning-rate decay is implemented below.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .simulate import make_rng

log = logging.getLogger(__name__)

_BCE_EPS = 1e-12


class TrainingError(RuntimeError):
    exit_code = 6

    def __init__(self, msg, last_good=None, epoch=None, step=None):
        super().__init__(msg)
        self.last_good = last_good
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    lambda_vis: float = 2e-2
    epochs: int = 2
    lr: float = 0.01
    batch_size: int = 8
    lr_step: int = 1
    lr_gamma: float = 0.5
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    init_scale: float = 0.01
    conf_loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.lambda_vis < 0:
            raise ValueError("lambda_vis must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.conf_loss not in ("mse", "ce"):
            raise ValueError("conf_loss must be 'mse' or 'ce'")
        if self.batch_size < 1 or self.lr <= 0 or self.lr_step < 1:
            raise ValueError("batch_size, lr and lr_step must be positive")
        self.betas = tuple(self.betas)


@dataclass
class CalibHead:
    weight: np.ndarray
    bias: np.ndarray
    num_keypoints: int
    feature_dim: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        k, f = self.num_keypoints, self.feature_dim
        if self.weight.shape != (k * f, 2 * k) or self.bias.shape != (2 * k,):
            raise ValueError(
                f"head shape mismatch: weight {self.weight.shape}, bias {self.bias.shape}, K={k}, F={f}"
            )

    @classmethod
    def zeros(cls, num_keypoints: int, feature_dim: int) -> "CalibHead":
        k, f = num_keypoints, feature_dim
        return cls(np.zeros((k * f, 2 * k)), np.zeros(2 * k), k, f)

    @classmethod
    def init(cls, num_keypoints: int, feature_dim: int, seed: int = 0, scale: float = 0.01) -> "CalibHead":
        k, f = num_keypoints, feature_dim
        w = scale * make_rng(seed).standard_normal((k * f, 2 * k))
        return cls(w, np.zeros(2 * k), k, f)

    def copy(self) -> "CalibHead":
        return CalibHead(self.weight.copy(), self.bias.copy(), self.num_keypoints,
                         self.feature_dim, dict(self.config))

    def to_dict(self) -> dict:
        return {
            "num_keypoints": self.num_keypoints,
            "feature_dim": self.feature_dim,
            "weight": [float(x) for x in self.weight.reshape(-1)],
            "bias": [float(x) for x in self.bias],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibHead":
        k, f = int(d["num_keypoints"]), int(d["feature_dim"])
        w = np.asarray(d["weight"], dtype=float).reshape(k * f, 2 * k)
        return cls(w, d["bias"], k, f, dict(d.get("config", {})))

    def save(self, path) -> None:
        from .dataset import write_json
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "CalibHead":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _flatten(features, head: CalibHead) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 2 and x.shape == (head.num_keypoints, head.feature_dim):
        x = x[None]
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != head.num_keypoints * head.feature_dim:
        raise ValueError(
            f"features of shape {np.shape(features)} do not match head with "
            f"K={head.num_keypoints}, F={head.feature_dim}"
        )
    return x


def forward(features, head: CalibHead) -> Tuple[np.ndarray, np.ndarray]:
    """Keypoint confidence and visibility, each (N, K) in (0, 1).

    ``features`` is (N, K, F), (N, K*F) or a single (K, F) instance.
    """
    x = _flatten(features, head)
    z = x @ head.weight + head.bias
    k = head.num_keypoints
    return expit(z[:, :k]), expit(z[:, k:])


def loss_terms(s_hat, v_hat, s, v, lambda_vis: float = 2e-2, conf_loss: str = "mse") -> np.ndarray:
    """Per-instance, per-term loss contributions, shape (N, 2K)."""
    s_hat, v_hat, s = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (s_hat, v_hat, s))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    vh = np.clip(v_hat, _BCE_EPS, 1.0 - _BCE_EPS)
    if conf_loss == "mse":
        conf = v * (s_hat - s) ** 2
    else:
        sh = np.clip(s_hat, _BCE_EPS, 1.0 - _BCE_EPS)
        conf = -v * (s * np.log(sh) + (1.0 - s) * np.log1p(-sh))
    vis = -(v * np.log(vh) + (1.0 - v) * np.log1p(-vh))
    return np.concatenate([conf, lambda_vis * vis], axis=1)


def loss(s_hat, v_hat, s, v, lambda_vis: float = 2e-2, conf_loss: str = "mse") -> float:
    """Visibility-masked confidence loss plus weighted visibility BCE.

    Inputs are (K,) for one instance or (N, K) for a batch; batches are
    averaged over instances.
    """
    t = loss_terms(s_hat, v_hat, s, v, lambda_vis, conf_loss)
    return math.fsum(t.ravel()) / t.shape[0]


def loss_and_grad(head: CalibHead, features, s, v, lambda_vis: float = 2e-2,
                  conf_loss: str = "mse"):
    """Batch loss and its analytic gradient ``(loss, grad_weight, grad_bias)``."""
    x = _flatten(features, head)
    n, k = x.shape[0], head.num_keypoints
    s = np.asarray(s, dtype=float).reshape(n, k)
    v = np.asarray(v, dtype=float).reshape(n, k)
    z = x @ head.weight + head.bias
    s_hat, v_hat = expit(z[:, :k]), expit(z[:, k:])
    value = loss(s_hat, v_hat, s, v, lambda_vis, conf_loss)
    if conf_loss == "mse":
        dz_s = 2.0 * v * (s_hat - s) * s_hat * (1.0 - s_hat)
    else:
        dz_s = v * (s_hat - s)
    dz_v = lambda_vis * (v_hat - v)
    dz = np.concatenate([dz_s, dz_v], axis=1) / n
    return value, x.T @ dz, dz.sum(axis=0)


def analytic_grad_check(head: CalibHead, features, s, v, lambda_vis: float = 2e-2,
                        conf_loss: str = "mse", eps: float = 1e-6, floor: float = 1e-7) -> float:
    """Max relative deviation between analytic and central-difference gradients.

    The relative deviation of one parameter is |a - n| / max(|a|, |n|, floor).
    The central difference is summed term by term, so loss terms a parameter
    does not touch cancel exactly instead of leaving rounding noise of the
    size of the whole loss.
    """
    _, gw, gb = loss_and_grad(head, features, s, v, lambda_vis, conf_loss)
    n = _flatten(features, head).shape[0]
    worst = 0.0
    probe = head.copy()
    for param, grad in ((probe.weight, gw), (probe.bias, gb)):
        flat, gflat = param.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_terms(*forward(features, probe), s, v, lambda_vis, conf_loss)
            flat[i] = orig - eps
            down = loss_terms(*forward(features, probe), s, v, lambda_vis, conf_loss)
            flat[i] = orig
            num = math.fsum((up - down).ravel()) / n / (2.0 * eps)
            dev = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, dev)
    return worst


class Adam:
    def __init__(self, shapes, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(features, s, v, cfg: Optional[TrainConfig] = None,
          head: Optional[CalibHead] = None) -> CalibHead:
    """Fit a head on (N, K, F) features, (N, K) OKS targets and visibilities.

    Only the head is updated; the inputs are never modified. Deterministic for
    a given ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(features, dtype=float)
    if x.ndim != 3:
        raise ValueError("features must be (N, K, F)")
    n, k, f = x.shape
    s = np.asarray(s, dtype=float).reshape(n, k)
    v = np.asarray(v, dtype=float).reshape(n, k)
    head = CalibHead.init(k, f, cfg.seed, cfg.init_scale) if head is None else head.copy()
    head.config = _config_echo(cfg)
    opt = Adam([head.weight.shape, head.bias.shape], cfg.lr, cfg.betas, cfg.adam_eps)
    rng = make_rng(cfg.seed + 1)
    flat = x.reshape(n, k * f)
    last_good = head.copy()
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step)
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            value, gw, gb = loss_and_grad(head, flat[b], s[b], v[b], cfg.lambda_vis, cfg.conf_loss)
            if not (np.isfinite(value) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, step {step}",
                                    last_good=last_good, epoch=epoch, step=step)
            opt.step([head.weight, head.bias], [gw, gb])
            step += 1
            running += value * len(b)
        if not (np.all(np.isfinite(head.weight)) and np.all(np.isfinite(head.bias))):
            raise TrainingError(f"parameters diverged in epoch {epoch}", last_good=last_good,
                                epoch=epoch, step=step)
        last_good = head.copy()
        log.info("epoch %d  lr %.4g  loss %.6f", epoch, opt.lr, running / n)
    return head


def _config_echo(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d


def split_indices(n: int, train_fraction: float = 0.8, seed: int = 0):
    """Seeded instance-level train/held-out split."""
    perm = make_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
