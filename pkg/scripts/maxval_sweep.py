"""Maxval and fitted width of MSE-optimal heatmaps against their closed forms."""
import argparse

import numpy as np

from poseconf import verify

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--l-tilde", type=float, default=2.0)
    a = ap.parse_args()
    sigmas = np.round(np.arange(0.25, 4.01, 0.25), 2)
    print(f"{'sigma':>6} {'maxval':>8} {'closed':>8} {'fit std':>8} {'closed':>8}")
    for row in verify.heatmap_sweep(a.seed, a.n, sigmas, a.l_tilde):
        print("{:6.2f} {:8.4f} {:8.4f} {:8.4f} {:8.4f}".format(*row))
