"""Closed-form expected OKS and expected confidences under Gaussian annotation noise.

Ground-truth keypoints are modelled as p ~ N(mu, sigma^2 I) around the true
location mu. Everything here is isotropic and vectorises over numpy inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class AnnotationModel:
    mu: tuple
    sigma: float

    def __post_init__(self):
        mu = tuple(float(x) for x in np.asarray(self.mu, dtype=float).reshape(2))
        object.__setattr__(self, "mu", mu)
        if not self.sigma >= 0:
            raise ValueError("annotation sigma must be nonnegative")


@dataclass(frozen=True)
class EstimatorParams:
    l_tilde: float = 2.0
    delta_hat: float = 0.0
    o_hat: Optional[float] = None
    b_hat: Optional[float] = None

    def __post_init__(self):
        if not self.l_tilde > 0:
            raise ValueError("l_tilde must be positive")
        if not self.delta_hat >= 0:
            raise ValueError("delta_hat must be nonnegative")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError(f"{name} must be positive")
    return x


def rescore(sigma, l, delta_hat=0.0):
    """Expected OKS l^2/(sigma^2+l^2) * exp(-delta^2 / (2 (sigma^2+l^2)))."""
    l = _positive(l, "l")
    sigma = np.asarray(sigma, dtype=float)
    delta_hat = np.asarray(delta_hat, dtype=float)
    v = sigma ** 2 + l ** 2
    return _scalar(l ** 2 / v * np.exp(-delta_hat ** 2 / (2.0 * v)))


def expected_oks(p_hat, model: AnnotationModel, l):
    """Expectation of the keypoint OKS of ``p_hat`` over annotation draws."""
    delta = np.linalg.norm(np.asarray(p_hat, dtype=float) - np.asarray(model.mu), axis=-1)
    return rescore(model.sigma, l, delta)


def oracle_score(sigma, l):
    """Expected OKS of a perfectly centred prediction."""
    l = _positive(l, "l")
    return _scalar(l ** 2 / (np.asarray(sigma, dtype=float) ** 2 + l ** 2))


def heatmap_confidence(sigma, l_tilde=2.0):
    """Maximum of the MSE-optimal heatmap, l_tilde^2 / (sigma^2 + l_tilde^2)."""
    l_tilde = _positive(l_tilde, "l_tilde")
    return _scalar(l_tilde ** 2 / (np.asarray(sigma, dtype=float) ** 2 + l_tilde ** 2))


def rle_confidence(sigma, clamp: bool = False):
    """Regression heuristic 1 - sigma; ``clamp`` restricts it to [0, 1]."""
    s = 1.0 - np.asarray(sigma, dtype=float)
    if clamp:
        s = np.clip(s, 0.0, 1.0)
    return _scalar(s)


def sigma_from_maxval(s_det, l_tilde=2.0):
    """Invert ``heatmap_confidence``; maxvals at or above 1 map to sigma 0."""
    s_det = _positive(s_det, "heatmap maxval")
    l_tilde = _positive(l_tilde, "l_tilde")
    return _scalar(l_tilde * np.sqrt(np.maximum(1.0 / s_det - 1.0, 0.0)))


def imperfect_regression(sigma, delta_hat):
    """NLL-optimal Gaussian scale when the mean is off by ``delta_hat``.

    Returns ``(sigma_star, 1 - sigma_star)`` with sigma_star^2 = sigma^2 + delta^2/2.
    """
    sigma = np.asarray(sigma, dtype=float)
    delta_hat = np.asarray(delta_hat, dtype=float)
    sigma_star = np.sqrt(sigma ** 2 + delta_hat ** 2 / 2.0)
    return _scalar(sigma_star), _scalar(1.0 - sigma_star)


def imperfect_detection(sigma, l_tilde, delta_hat):
    """MSE-optimal width and scale of a heatmap whose peak sits ``delta_hat`` off.

    The heatmap is o * exp(-|m - p_hat|^2 / (2 s)) fitted to the averaged
    rendered target. With t = sigma^2 + l_tilde^2 the optimum is

        s* = sqrt(t^2 + delta^4 / 4) + delta^2 / 2
        o* = 2 l_tilde^2 / (t + s*) * exp(-delta^2 / (2 (t + s*)))

    Returns ``(s*, o*)``. o* equals l_tilde^2 / t at delta = 0 and is
    strictly smaller otherwise.
    """
    l_tilde = _positive(l_tilde, "l_tilde")
    sigma = np.asarray(sigma, dtype=float)
    d2 = np.asarray(delta_hat, dtype=float) ** 2
    t = sigma ** 2 + l_tilde ** 2
    s_star = np.sqrt(t ** 2 + d2 ** 2 / 4.0) + d2 / 2.0
    total = t + s_star
    o_star = 2.0 * l_tilde ** 2 / total * np.exp(-d2 / (2.0 * total))
    return _scalar(s_star), _scalar(o_star)


def imperfect_detection_unshifted_scale(sigma, l_tilde, delta_hat):
    """2 l_tilde^2 / (t + s*): the scale optimum without its Gaussian shift factor.

    Kept only for comparison; it is not the minimiser of the heatmap MSE
    once delta_hat > 0.
    """
    l_tilde = _positive(l_tilde, "l_tilde")
    s_star, _ = imperfect_detection(sigma, l_tilde, delta_hat)
    t = np.asarray(sigma, dtype=float) ** 2 + l_tilde ** 2
    return _scalar(2.0 * l_tilde ** 2 / (t + s_star))


def laplace_misspec(sigma):
    """Laplace NLL optimum on Gaussian annotations: b* = sqrt(2/pi) sigma.

    Returns ``(b*, 1 - b*)``.
    """
    b = SQRT_2_OVER_PI * np.asarray(sigma, dtype=float)
    return _scalar(b), _scalar(1.0 - b)


def misordered_pair(sigma: float = 2.0, l_small: float = 2.0, l_large: float = 8.0,
                    gap: float = 0.1, l_tilde: float = 2.0):
    """Two keypoints whose heatmap-confidence order contradicts their expected OKS order.

    Instance A has the slightly smaller annotation noise but a small OKS scale;
    instance B is noisier but sits on a large person. The heatmap maxval only
    sees sigma and prefers A, while expected OKS prefers B.

    Returns a dict with both instances' (sigma, l) and the two scores each.
    """
    a = {"sigma": sigma, "l": l_small}
    b = {"sigma": sigma + gap, "l": l_large}
    for inst in (a, b):
        inst["heatmap_confidence"] = heatmap_confidence(inst["sigma"], l_tilde)
        inst["oracle_score"] = oracle_score(inst["sigma"], inst["l"])
    heat_prefers_a = a["heatmap_confidence"] > b["heatmap_confidence"]
    oracle_prefers_a = a["oracle_score"] > b["oracle_score"]
    if heat_prefers_a == oracle_prefers_a:
        raise ValueError("parameters do not produce a misordering")
    return {"a": a, "b": b}


def clamp_unit(x):
    return _scalar(np.clip(np.asarray(x, dtype=float), 0.0, 1.0))
