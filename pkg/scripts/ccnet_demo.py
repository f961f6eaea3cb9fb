"""Train the calibration head on a synthetic benchmark and print held-out metrics."""
import argparse

from poseconf import ccnet, pipeline
from poseconf.benchmark import SynthConfig, synth_benchmark

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--feature-noise", type=float, default=0.1)
    ap.add_argument("--score-mode", choices=("heatmap", "rle"), default="heatmap")
    a = ap.parse_args()

    bench = synth_benchmark(SynthConfig(score_mode=a.score_mode, feature_noise=a.feature_noise), a.seed)
    ds, spec = bench.data, bench.spec
    tr_idx, te_idx = ccnet.split_indices(len(ds), 0.8, a.seed)
    tr, te = ds.subset(tr_idx), ds.subset(te_idx)
    head = ccnet.train(tr.features, pipeline.keypoint_targets(tr, spec), tr.visibility,
                       ccnet.TrainConfig(epochs=a.epochs, seed=a.seed))
    base = "heatmap-max" if a.score_mode == "heatmap" else "rle"
    before = pipeline.evaluate_dataset(te, spec, pipeline.ConfidenceOptions(mode=base))
    after = pipeline.evaluate_dataset(te, spec, pipeline.ConfidenceOptions(mode="ccnet", head=head))
    print(f"{'':<22} {'before':>8} {'after':>8}")
    for name in ("map", "mar", "ause", "pearson", "reliability_deviation"):
        print(f"{name:<22} {getattr(before, name):8.4f} {getattr(after, name):8.4f}")
