"""Closed form versus Monte-Carlo verification suite.

Each ``check_*`` function returns a list of :class:`Check` rows; ``run_suite``
runs them all. Seeds for individual grid points are derived from the base
seed so that the whole table is reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List

import numpy as np
from scipy import optimize

from . import simulate as sim
from . import theory

GRID_SIGMA = (0.0, 0.5, 1.0, 2.0, 4.0)
GRID_L = (1.0, 2.0, 4.0, 8.0, 16.0)
GRID_DELTA = (0.0, 1.0, 2.0)
HEATMAP_SIGMAS = (0.5, 1.0, 2.0, 3.0)
DETECTION_DELTAS = tuple(np.linspace(0.0, 3.0, 13).tolist())


@dataclass
class Check:
    group: str
    name: str
    observed: float
    expected: float
    deviation: float
    tolerance: float
    passed: bool

    def row(self):
        return (self.group, self.name, self.observed, self.expected, self.deviation,
                self.tolerance, "pass" if self.passed else "FAIL")


HEADER = ("group", "name", "observed", "expected", "deviation", "tolerance", "status")


def _rel(obs, exp, tol, group, name) -> Check:
    dev = abs(obs - exp) / abs(exp) if exp != 0 else abs(obs)
    return Check(group, name, float(obs), float(exp), float(dev), tol, bool(dev <= tol))


def _sub_seed(seed: int, *idx: int) -> int:
    return int(np.random.SeedSequence([seed, *idx]).generate_state(1)[0])


def check_expected_oks(seed: int = 0, n: int = 1_000_000, sigmas: Iterable[float] = GRID_SIGMA,
                       ls: Iterable[float] = GRID_L, deltas: Iterable[float] = GRID_DELTA,
                       k_se: float = 3.0) -> List[Check]:
    """Monte-Carlo keypoint OKS mean within ``k_se`` standard errors of the closed form.

    Deviation is reported in standard errors; a 1e-12 absolute floor covers
    the noiseless points where the standard error is exactly zero.
    """
    out = []
    for i, s in enumerate(sigmas):
        for j, l in enumerate(ls):
            for k, d in enumerate(deltas):
                model = theory.AnnotationModel((0.0, 0.0), s)
                est, se = sim.mc_expected_oks((d, 0.0), model, l, n, _sub_seed(seed, i, j, k))
                exp = theory.expected_oks((d, 0.0), model, l)
                gap = abs(est - exp)
                dev = gap / se if se > 0 else (0.0 if gap <= 1e-12 else np.inf)
                out.append(Check("expected_oks", f"sigma={s:g} l={l:g} delta={d:g}", est, exp,
                                 float(dev), k_se, bool(gap <= k_se * se + 1e-12)))
    return out


def heatmap_center(shape=sim.DEFAULT_GRID):
    h, w = shape
    return (float(w // 2), float(h // 2))


def heatmap_sweep(seed: int = 0, n: int = 100_000, sigmas: Iterable[float] = HEATMAP_SIGMAS,
                  l_tilde: float = 2.0, shape=sim.DEFAULT_GRID):
    """Rows (sigma, maxval, closed maxval, fitted std, closed std) of MSE-optimal heatmaps."""
    rows = []
    for i, s in enumerate(sigmas):
        model = theory.AnnotationModel(heatmap_center(shape), s)
        hm = sim.mse_optimal_heatmap(model, l_tilde, shape, n, _sub_seed(seed, 100, i))
        fit = sim.fit_gaussian(hm)
        rows.append((float(s), float(hm.values.max()), theory.heatmap_confidence(s, l_tilde),
                     fit.sigma_fit, float(np.sqrt(s ** 2 + l_tilde ** 2))))
    return rows


def check_heatmap(seed: int = 0, n: int = 100_000, tol: float = 0.02, **kw) -> List[Check]:
    out = []
    for s, maxval, closed, fitted, closed_std in heatmap_sweep(seed, n, **kw):
        out.append(_rel(maxval, closed, tol, "heatmap", f"maxval sigma={s:g}"))
        out.append(_rel(fitted, closed_std, tol, "heatmap", f"fitted std sigma={s:g}"))
    return out


def check_nll(seed: int = 0, n: int = 1_000_000) -> List[Check]:
    """Gaussian and Laplace NLL optima, free and with an offset mean."""
    out = []
    for i, s in enumerate((0.5, 1.0, 2.0)):
        model = theory.AnnotationModel((0.0, 0.0), s)
        x = sim.sample_keypoints(model, n, _sub_seed(seed, 200, i))
        _, sig = sim.fit_nll_gaussian(x)
        out.append(_rel(sig, s, 0.02, "nll", f"gaussian sigma={s:g}"))
        for j, d in enumerate((1.0, 2.0)):
            _, sig_c = sim.fit_nll_gaussian(x, p_hat_fixed=(d, 0.0))
            exp = theory.imperfect_regression(s, d)[0] ** 2
            out.append(_rel(sig_c ** 2, exp, 0.02, "nll", f"offset gaussian sigma={s:g} delta={d:g}"))
            res = optimize.minimize_scalar(lambda ls: sim.gaussian_nll(x, (d, 0.0), np.exp(ls)),
                                           bounds=(-5, 5), method="bounded",
                                           options={"xatol": 1e-9})
            out.append(_rel(np.exp(res.x), theory.imperfect_regression(s, d)[0], 0.02, "nll",
                            f"numeric offset gaussian sigma={s:g} delta={d:g}"))
        _, b = sim.fit_nll_laplace(x, p_hat_fixed=(0.0, 0.0))
        out.append(_rel(b, theory.laplace_misspec(s)[0], 0.01, "nll", f"laplace on gaussian sigma={s:g}"))
        res = optimize.minimize_scalar(lambda lb: sim.laplace_nll(x, (0.0, 0.0), np.exp(lb)),
                                       bounds=(-5, 5), method="bounded", options={"xatol": 1e-9})
        out.append(_rel(np.exp(res.x), theory.laplace_misspec(s)[0], 0.01, "nll",
                        f"numeric laplace on gaussian sigma={s:g}"))
    return out


def check_detection(sigma: float = 0.0, l_tilde: float = 2.0,
                    deltas: Iterable[float] = DETECTION_DELTAS, tol: float = 0.01) -> List[Check]:
    """Numeric heatmap MSE optimum against the closed forms, plus monotonicity of o*."""
    out = []
    prev = np.inf
    monotone = True
    for d in deltas:
        s_num, o_num = sim.numeric_detection_optimum(sigma, l_tilde, d)
        s_cf, o_cf = theory.imperfect_detection(sigma, l_tilde, d)
        out.append(_rel(s_num, s_cf, tol, "detection", f"width sigma={sigma:g} delta={d:.2f}"))
        out.append(_rel(o_num, o_cf, tol, "detection", f"scale sigma={sigma:g} delta={d:.2f}"))
        monotone &= o_cf < prev
        prev = o_cf
    out.append(Check("detection", f"scale decreasing in delta sigma={sigma:g}", float(monotone), 1.0,
                     0.0 if monotone else 1.0, 0.0, bool(monotone)))
    return out


def run_suite(seed: int = 0, quick: bool = False) -> List[Check]:
    """Full verification table; ``quick`` shrinks sample sizes for smoke runs.

    Quick runs allow 4 standard errors on the OKS grid: with 75 points a
    3 standard error band fails somewhere for roughly one seed in six.
    """
    n_oks = 100_000 if quick else 1_000_000
    n_hm = 20_000 if quick else 100_000
    checks = check_expected_oks(seed, n_oks, k_se=4.0 if quick else 3.0)
    checks += check_heatmap(seed, n_hm, tol=0.05 if quick else 0.02)
    checks += check_nll(seed, n_oks)
    for s in (0.0, 1.0):
        checks += check_detection(s)
    return checks
