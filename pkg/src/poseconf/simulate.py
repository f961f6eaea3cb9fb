"""Monte-Carlo simulation of annotation noise and of the estimators trained on it.

These are the brute-force counterparts of the closed forms in
:mod:`poseconf.theory`. Every stochastic routine takes an explicit integer
seed and draws from a Philox counter-based generator, so outputs are
reproducible bit for bit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import optimize

from .oks import keypoint_oks
from .theory import AnnotationModel

DEFAULT_GRID = (64, 48)
_CHUNK = 250_000


class HeatmapTruncationWarning(RuntimeWarning):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class Heatmap:
    """Dense (H, W) grid; pixel (i, j) sits at origin + pitch * (j, i) in (x, y)."""
    values: np.ndarray
    origin: Tuple[float, float] = (0.0, 0.0)
    pitch: float = 1.0
    truncated: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("heatmap values must be 2-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("heatmap values must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.pitch * np.arange(self.width)
        ys = self.origin[1] + self.pitch * np.arange(self.height)
        return xs, ys

    def argmax(self) -> Tuple[np.ndarray, float]:
        """Peak location (x, y) and value."""
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        xs, ys = self.axes()
        return np.array([xs[j], ys[i]]), float(self.values[i, j])


@dataclass
class GaussianFit:
    mean: np.ndarray
    sigma_fit: float
    scale: float


def sample_keypoints(model: AnnotationModel, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from N(mu, sigma^2 I), shape (n, 2)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    z = make_rng(seed).standard_normal((n, 2))
    return np.asarray(model.mu) + model.sigma * z


def _axis_gauss(axis: np.ndarray, centers: np.ndarray, l: float) -> np.ndarray:
    return np.exp(-(axis[None, :] - centers[:, None]) ** 2 / (2.0 * l ** 2))


def render_heatmap(center, l_tilde: float = 2.0, shape=DEFAULT_GRID,
                   origin=(0.0, 0.0), pitch: float = 1.0) -> Heatmap:
    """Unnormalised Gaussian target exp(-|m - center|^2 / (2 l_tilde^2)).

    Warns and sets ``truncated`` when the centre lies outside the grid or the
    border holds more than 1e-6 of the peak.
    """
    if l_tilde <= 0:
        raise ValueError("l_tilde must be positive")
    h, w = shape
    c = np.asarray(center, dtype=float).reshape(2)
    xs = origin[0] + pitch * np.arange(w)
    ys = origin[1] + pitch * np.arange(h)
    gx = _axis_gauss(xs, c[:1], l_tilde)[0]
    gy = _axis_gauss(ys, c[1:], l_tilde)[0]
    hm = Heatmap(np.outer(gy, gx), origin, pitch)
    hm.truncated = _check_truncation(hm, c)
    return hm


def _check_truncation(hm: Heatmap, center: np.ndarray) -> bool:
    xs, ys = hm.axes()
    outside = not (xs[0] <= center[0] <= xs[-1] and ys[0] <= center[1] <= ys[-1])
    v = hm.values
    border = max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max())
    peak = v.max()
    truncated = outside or peak == 0 or border > 1e-6 * peak
    if truncated:
        warnings.warn("heatmap mass reaches the grid border", HeatmapTruncationWarning)
    return truncated


def mse_optimal_heatmap(model: AnnotationModel, l_tilde: float = 2.0, shape=DEFAULT_GRID,
                        n: int = 100_000, seed: int = 0, origin=(0.0, 0.0),
                        pitch: float = 1.0) -> Heatmap:
    """Pixel-wise mean of target heatmaps rendered at ``n`` annotation draws.

    This is the minimiser of the expected pixel-wise MSE against a noisy
    target. Rendering is separable, so the mean is accumulated as
    Gy^T Gx one chunk at a time in a fixed order.
    """
    if n < 1000:
        raise ValueError("n must be at least 1000")
    h, w = shape
    xs = origin[0] + pitch * np.arange(w)
    ys = origin[1] + pitch * np.arange(h)
    pts = sample_keypoints(model, n, seed)
    acc = np.zeros((h, w))
    for start in range(0, n, _CHUNK):
        chunk = pts[start:start + _CHUNK]
        acc += _axis_gauss(ys, chunk[:, 1], l_tilde).T @ _axis_gauss(xs, chunk[:, 0], l_tilde)
    hm = Heatmap(acc / n, origin, pitch)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HeatmapTruncationWarning)
        hm.truncated = _check_truncation(hm, np.asarray(model.mu))
    return hm


def fit_gaussian(hm: Heatmap, rel_floor: float = 0.01) -> GaussianFit:
    """Best-fit scaled isotropic Gaussian o * exp(-|m - c|^2 / (2 s^2)).

    Weighted least squares on log-values of pixels above ``rel_floor`` of the
    peak, with the pixel value as weight. Falls back to moment matching when
    fewer than 9 pixels qualify.
    """
    v = hm.values
    peak = v.max()
    if peak <= 0:
        raise ValueError("cannot fit a Gaussian to an all-zero heatmap")
    xs, ys = hm.axes()
    X, Y = np.meshgrid(xs, ys)
    sel = v > rel_floor * peak
    if np.count_nonzero(sel) >= 9:
        x, y, z = X[sel], Y[sel], v[sel]
        A = np.column_stack([np.ones_like(x), x, y, x ** 2 + y ** 2])
        coef, *_ = np.linalg.lstsq(A * z[:, None], np.log(z) * z, rcond=None)
        a, b, c, d = coef
        if d < 0:
            cx, cy = -b / (2 * d), -c / (2 * d)
            s2 = -1.0 / (2 * d)
            scale = float(np.exp(a - d * (cx ** 2 + cy ** 2)))
            return GaussianFit(np.array([cx, cy]), float(np.sqrt(s2)), scale)
    return _fit_moments(X, Y, v, hm.pitch)


def _fit_moments(X, Y, v, pitch) -> GaussianFit:
    mass = v.sum()
    cx, cy = (v * X).sum() / mass, (v * Y).sum() / mass
    s2 = (v * ((X - cx) ** 2 + (Y - cy) ** 2)).sum() / (2.0 * mass)
    if s2 <= 0:
        return GaussianFit(np.array([cx, cy]), 0.0, float(v.max()))
    scale = mass * pitch ** 2 / (2.0 * np.pi * s2)
    return GaussianFit(np.array([cx, cy]), float(np.sqrt(s2)), float(scale))


def mc_expected_oks(p_hat, model: AnnotationModel, l: float, n: int = 1_000_000,
                    seed: int = 0) -> Tuple[float, float]:
    """Sample mean and standard error of keypoint OKS over annotation draws."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    if l <= 0:
        raise ValueError("l must be positive")
    rng = make_rng(seed)
    mu = np.asarray(model.mu)
    p_hat = np.asarray(p_hat, dtype=float)
    total, total_sq = 0.0, 0.0
    for start in range(0, n, _CHUNK):
        m = min(_CHUNK, n - start)
        p = mu + model.sigma * rng.standard_normal((m, 2))
        o = keypoint_oks(p_hat, p, l)
        total += o.sum()
        total_sq += np.dot(o, o)
    mean = total / n
    var = max(total_sq / n - mean ** 2, 0.0) * n / (n - 1)
    return float(mean), float(np.sqrt(var / n))


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).reshape(-1, 2)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    return x


def fit_nll_gaussian(samples, p_hat_fixed=None) -> Tuple[np.ndarray, float]:
    """Maximum-likelihood isotropic Gaussian (mean, sigma) for 2-D samples.

    With ``p_hat_fixed`` the mean is held and only sigma is fitted.
    """
    x = _check_samples(samples)
    p_hat = x.mean(axis=0) if p_hat_fixed is None else np.asarray(p_hat_fixed, dtype=float)
    s2 = np.mean(np.sum((x - p_hat) ** 2, axis=1)) / 2.0
    return p_hat, float(np.sqrt(s2))


def fit_nll_laplace(samples, p_hat_fixed=None) -> Tuple[np.ndarray, float]:
    """Maximum-likelihood 2-D Laplace with a shared scale and L1 distance.

    The location is the per-axis median unless ``p_hat_fixed`` is given; the
    scale is half the mean L1 distance to it.
    """
    x = _check_samples(samples)
    p_hat = np.median(x, axis=0) if p_hat_fixed is None else np.asarray(p_hat_fixed, dtype=float)
    b = np.mean(np.sum(np.abs(x - p_hat), axis=1)) / 2.0
    return p_hat, float(b)


def gaussian_nll(samples, p_hat, sigma_hat) -> float:
    """Mean 2-D isotropic Gaussian NLL, constants dropped."""
    x = _check_samples(samples)
    r2 = np.sum((x - np.asarray(p_hat)) ** 2, axis=1)
    return float(np.log(sigma_hat ** 2) + np.mean(r2) / (2.0 * sigma_hat ** 2))


def laplace_nll(samples, p_hat, b_hat) -> float:
    """Mean 2-D Laplace NLL with L1 distance, constants dropped."""
    x = _check_samples(samples)
    r1 = np.sum(np.abs(x - np.asarray(p_hat)), axis=1)
    return float(2.0 * np.log(b_hat) + np.mean(r1) / b_hat)


def averaged_target_axis(axis: np.ndarray, sigma: float, l_tilde: float,
                         nodes: int = 60) -> np.ndarray:
    """E_p[exp(-(x - p)^2 / (2 l^2))] along one axis for p ~ N(0, sigma^2).

    Gauss-Hermite quadrature over the annotation draw, so it does not rely on
    the Gaussian convolution identity.
    """
    z, w = np.polynomial.hermite.hermgauss(nodes)
    p = np.sqrt(2.0) * sigma * z
    return (w[None, :] * np.exp(-(axis[:, None] - p[None, :]) ** 2 / (2.0 * l_tilde ** 2))).sum(1) / np.sqrt(np.pi)


def numeric_detection_optimum(sigma: float, l_tilde: float, delta_hat: float,
                              pitch: float = 0.25, nodes: int = 60) -> Tuple[float, float]:
    """Numerically minimise the heatmap MSE over (scale o, width s).

    The model heatmap o * exp(-|m - p_hat|^2 / (2 s)) has its peak at
    distance ``delta_hat`` from the annotation mean and is compared with the
    quadrature-averaged target on a fine grid. Returns ``(s, o)``.
    """
    t = sigma ** 2 + l_tilde ** 2
    half = 3.0 * delta_hat + 12.0 * np.sqrt(t + delta_hat ** 2)
    axis = np.arange(-half, half + pitch / 2, pitch)
    ex = averaged_target_axis(axis, sigma, l_tilde, nodes)
    ey = ex
    ey2, ex2 = np.dot(ey, ey), np.dot(ex, ex)

    def mse(params):
        o, log_s = params
        s = np.exp(log_s)
        gx = np.exp(-(axis - delta_hat) ** 2 / (2.0 * s))
        gy = np.exp(-axis ** 2 / (2.0 * s))
        gg = np.dot(gx, gx) * np.dot(gy, gy)
        ge = np.dot(gx, ex) * np.dot(gy, ey)
        return (o * o * gg - 2.0 * o * ge + ex2 * ey2) * pitch ** 2

    res = optimize.minimize(mse, x0=np.array([0.5, np.log(l_tilde ** 2)]), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 20_000})
    o, log_s = res.x
    return float(np.exp(log_s)), float(o)
