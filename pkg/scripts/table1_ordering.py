"""mAP and mAR of each confidence mode on the synthetic benchmark.

    python scripts/table1_ordering.py --seed 0 --score-mode heatmap
"""
import argparse

from poseconf import pipeline
from poseconf.benchmark import SynthConfig, synth_benchmark

MODES = ("constant", "heuristic", "rescored", "oracle")


def run(seed=0, score_mode="heatmap", n=2000, area_source="gt"):
    bench = synth_benchmark(SynthConfig(n_instances=n, score_mode=score_mode), seed)
    out = {}
    for mode in MODES:
        m = ("heatmap-max" if score_mode == "heatmap" else "rle") if mode == "heuristic" else mode
        opts = pipeline.ConfidenceOptions(mode=m, area_source=area_source)
        out[mode] = pipeline.evaluate_dataset(bench.data, bench.spec, opts)
    return out


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--score-mode", choices=("heatmap", "rle"), default="heatmap")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--area-source", choices=("gt", "pred"), default="gt")
    a = ap.parse_args()
    reports = run(a.seed, a.score_mode, a.n, a.area_source)
    print(f"{'mode':<10} {'mAP':>8} {'mAR':>8}")
    for mode, r in reports.items():
        print(f"{mode:<10} {r.map:8.4f} {r.mar:8.4f}")
