"""Command line entry point: eval, rescore, simulate, train-calib and synth.

Exit codes: 0 success, 2 parse error, 3 alignment error, 4 configuration
error, 5 verification tolerance failure, 6 training failure.

A ``--config`` JSON file supplies values for any flag (keys use underscores);
flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ccnet, pipeline, verify
from .benchmark import SynthConfig, synth_benchmark
from .dataset import (
    ConfigError,
    load_dataset,
    load_spec,
    save_dataset,
    write_csv,
    write_json,
)
from .ranking import EvalConfig

EXIT_OK = 0
EXIT_TOLERANCE = 5

log = logging.getLogger("poseconf")

# builtin defaults, applied after the config file
DEFAULTS = {
    "gt": None,
    "pred": None,
    "out": None,
    "spec": None,
    "mode": "heatmap-max",
    "aggregation": "threshold",
    "tau_s": 0.2,
    "thresholds": None,
    "interpolated": False,
    "seed": 0,
    "area_source": "gt",
    "sigma_source": "auto",
    "l_tilde": 2.0,
    "rle_scale": 10.0,
    "parts": None,
    "head": None,
    "ause_steps": 20,
    "bins": 10,
    "quick": False,
    "n_instances": 2000,
    "score_mode": "heatmap",
    "feature_noise": 0.1,
    "epochs": 2,
    "lr": 0.01,
    "batch_size": 8,
    "lambda_vis": 2e-2,
    "train_fraction": 0.8,
}


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


def _resolve(args) -> dict:
    """Merge builtin defaults, the config file and explicit flags."""
    conf = {}
    if getattr(args, "config", None):
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{args.config}: cannot read config ({e})") from e
        if not isinstance(conf, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
    out = dict(DEFAULTS)
    out.update(conf)
    for k, v in vars(args).items():
        if v is not None:
            out[k] = v
    for k in ("thresholds", "parts"):
        if isinstance(out.get(k), (list, tuple)):
            out[k] = ",".join(str(x) for x in out[k])
    return out


def _eval_config(c) -> EvalConfig:
    try:
        kw = {"ause_steps": int(c["ause_steps"]), "bins": int(c["bins"]),
              "interpolated": bool(c["interpolated"])}
        if c["thresholds"]:
            kw["thresholds"] = tuple(_floats(c["thresholds"]))
        return EvalConfig(**kw)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _options(c, spec, head=None) -> pipeline.ConfidenceOptions:
    parts = _ints(c["parts"]) if c["parts"] else None
    if parts and not all(0 <= p < spec.count for p in parts):
        raise ConfigError(f"--parts indices must lie in [0, {spec.count})")
    if c["mode"] == "ccnet" and head is None:
        if not c["head"]:
            raise ConfigError("mode 'ccnet' needs --head")
        try:
            head = ccnet.CalibHead.load(c["head"])
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f"{c['head']}: cannot load head ({e})") from e
    return pipeline.ConfidenceOptions(
        mode=c["mode"], aggregation=c["aggregation"], tau_s=float(c["tau_s"]),
        l_tilde=float(c["l_tilde"]), rle_scale=float(c["rle_scale"]),
        area_source=c["area_source"], sigma_source=c["sigma_source"], subset=parts, head=head,
    )


def write_report(out, report, extra=None, prefix=""):
    """report.json plus PR, sparsification and reliability CSVs under ``out``."""
    out = Path(out)
    d = report.to_dict()
    if extra:
        d.update(extra)
    write_json(out / f"{prefix}report.json", d)
    write_csv(out / f"{prefix}pr_curve.csv", ("threshold", "recall", "precision"), report.pr_points)
    write_csv(out / f"{prefix}sparsification.csv", ("fraction_removed", "confidence_error", "oracle_error"),
              report.sparsification)
    write_csv(out / f"{prefix}reliability.csv", ("bin_center", "mean_conf", "mean_oks", "count"),
              report.reliability)


def cmd_eval(args) -> int:
    c = _resolve(args)
    spec = load_spec(c["spec"])
    opts = _options(c, spec)
    ds = load_dataset(c["gt"], c["pred"], spec)
    report = pipeline.evaluate_dataset(ds, spec, opts, _eval_config(c))
    extra = {"mode": opts.mode, "aggregation": opts.aggregation, "tau_s": opts.tau_s,
             "missing_predictions": len(ds.missing_ids)}
    if c["out"]:
        write_report(c["out"], report, extra)
    print(json.dumps({k: report.summary()[k] for k in ("map", "mar", "ause", "pearson")}, sort_keys=True))
    return EXIT_OK


def cmd_rescore(args) -> int:
    """Replace keypoint scores by expected OKS; geometry is copied unchanged.

    The output carries the sigma that was used, so rescoring it again with
    the default sigma source reproduces the same file.
    """
    c = _resolve(args)
    spec = load_spec(c["spec"])
    opts = pipeline.ConfidenceOptions(mode="rescored", l_tilde=float(c["l_tilde"]),
                                      area_source=c["area_source"], sigma_source=c["sigma_source"])
    ds = load_dataset(c["gt"], c["pred"], spec)
    sigma = pipeline.estimated_sigma(ds, opts.sigma_source, opts.l_tilde)
    scores = pipeline.rescored_keypoint_scores(ds, spec, opts)
    ds.sigma = np.asarray(sigma, dtype=float)
    ds.kp_scores = scores
    write_json(c["out"], ds.pred_records())
    log.info("rescored %d instances into %s", len(ds), c["out"])
    return EXIT_OK


def cmd_simulate(args) -> int:
    c = _resolve(args)
    seed = int(c["seed"])
    checks = verify.run_suite(seed, quick=bool(c["quick"]))
    failed = [ch for ch in checks if not ch.passed]
    if c["out"]:
        out = Path(c["out"])
        write_csv(out / "verification.csv", verify.HEADER, [ch.row() for ch in checks])
        n_hm = 20_000 if c["quick"] else 100_000
        write_csv(out / "heatmap_sweep.csv",
                  ("sigma", "maxval", "closed_form_maxval", "fitted_std", "closed_form_std"),
                  verify.heatmap_sweep(seed, n_hm))
        write_json(out / "report.json", {"seed": seed, "quick": bool(c["quick"]), "checks": len(checks),
                                         "failed": [ch.group + ": " + ch.name for ch in failed]})
    width = max(len(ch.group) + len(ch.name) for ch in checks) + 3
    for ch in checks:
        print(f"{(ch.group + ': ' + ch.name):<{width}} dev={ch.deviation:.3g} tol={ch.tolerance:g} "
              f"{'pass' if ch.passed else 'FAIL'}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_TOLERANCE if failed else EXIT_OK


def _synth_config(c) -> SynthConfig:
    try:
        return SynthConfig(n_instances=int(c["n_instances"]), score_mode=c["score_mode"],
                           feature_noise=float(c["feature_noise"]), l_tilde=float(c["l_tilde"]))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_synth(args) -> int:
    c = _resolve(args)
    bench = synth_benchmark(_synth_config(c), int(c["seed"]))
    out = Path(c["out"])
    save_dataset(bench.data, out / "gt.json", out / "pred.json")
    write_json(out / "config.json", bench.config_dict())
    return EXIT_OK


def cmd_train_calib(args) -> int:
    """Train a head on a split of the data and compare held-out metrics."""
    c = _resolve(args)
    seed = int(c["seed"])
    if c.get("gt") or c.get("pred"):
        if not (c.get("gt") and c.get("pred")):
            raise ConfigError("train-calib needs both --gt and --pred, or neither")
        spec = load_spec(c["spec"])
        ds = load_dataset(c["gt"], c["pred"], spec)
        if ds.features is None:
            raise ConfigError(f"{c['pred']}: predictions carry no 'features' field")
    else:
        bench = synth_benchmark(_synth_config(c), seed)
        spec, ds = bench.spec, bench.data
    try:
        tcfg = ccnet.TrainConfig(lambda_vis=float(c["lambda_vis"]), epochs=int(c["epochs"]),
                                 lr=float(c["lr"]), batch_size=int(c["batch_size"]), seed=seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    train_idx, test_idx = ccnet.split_indices(len(ds), float(c["train_fraction"]), seed)
    tr, te = ds.subset(train_idx), ds.subset(test_idx)
    head = ccnet.train(tr.features, pipeline.keypoint_targets(tr, spec), tr.visibility, tcfg)

    cfg = _eval_config(c)
    base_mode = c["mode"] if c["mode"] not in ("ccnet", "oracle") else "heatmap-max"
    before_opts = pipeline.ConfidenceOptions(mode=base_mode, aggregation=c["aggregation"],
                                             tau_s=float(c["tau_s"]), l_tilde=float(c["l_tilde"]))
    before = pipeline.evaluate_dataset(te, spec, before_opts, cfg)
    after = pipeline.evaluate_dataset(te, spec, pipeline.ConfidenceOptions(mode="ccnet", head=head), cfg)
    if before.mar != after.mar:
        raise ccnet.TrainingError("mAR changed between before and after evaluation")
    if c["out"]:
        out = Path(c["out"])
        head.save(out / "head.json")
        write_report(out, before, {"mode": base_mode}, prefix="before_")
        write_report(out, after, {"mode": "ccnet"}, prefix="after_")
        write_json(out / "comparison.json", {
            "before": before.summary(), "after": after.summary(), "train_size": len(tr),
            "test_size": len(te), "baseline_mode": base_mode, "config": head.config,
        })
    print(json.dumps({"map_before": before.map, "map_after": after.map, "mar": after.mar,
                      "ause_before": before.ause, "ause_after": after.ause}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poseconf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, data_required=True, out_required=True):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)
        if data:
            sp.add_argument("--gt", required=data_required)
            sp.add_argument("--pred", required=data_required)
            sp.add_argument("--spec")
        sp.add_argument("--l-tilde", dest="l_tilde", type=float)

    def eval_flags(sp):
        sp.add_argument("--mode", choices=pipeline.CONF_MODES)
        sp.add_argument("--aggregation", choices=pipeline.AGG_MODES)
        sp.add_argument("--tau-s", dest="tau_s", type=float)
        sp.add_argument("--thresholds", help="comma-separated OKS thresholds")
        sp.add_argument("--interpolated", action="store_true", default=None,
                        help="101-point interpolated AP instead of the literal sum")
        sp.add_argument("--ause-steps", dest="ause_steps", type=int)
        sp.add_argument("--bins", type=int)

    sp = sub.add_parser("eval", help="evaluate predictions against ground truth")
    common(sp, out_required=False)
    eval_flags(sp)
    sp.add_argument("--area-source", dest="area_source", choices=("gt", "pred"))
    sp.add_argument("--sigma-source", dest="sigma_source", choices=("auto", "sigma", "maxval"))
    sp.add_argument("--rle-scale", dest="rle_scale", type=float)
    sp.add_argument("--parts", help="comma-separated keypoint indices to evaluate")
    sp.add_argument("--head", help="trained head JSON for mode ccnet")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rescore", help="replace keypoint scores by expected OKS")
    common(sp)
    sp.add_argument("--area-source", dest="area_source", choices=("gt", "pred"))
    sp.add_argument("--sigma-source", dest="sigma_source", choices=("auto", "sigma", "maxval"))
    sp.set_defaults(func=cmd_rescore)

    sp = sub.add_parser("simulate", help="closed form versus Monte-Carlo verification")
    common(sp, data=False, out_required=False)
    sp.add_argument("--quick", action="store_true", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("synth", help="write a synthetic benchmark as instance files")
    common(sp, data=False)
    sp.add_argument("--n-instances", dest="n_instances", type=int)
    sp.add_argument("--score-mode", dest="score_mode", choices=("heatmap", "rle"))
    sp.add_argument("--feature-noise", dest="feature_noise", type=float)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-calib", help="train the calibration head and compare metrics")
    common(sp, data_required=False, out_required=False)
    eval_flags(sp)
    sp.add_argument("--n-instances", dest="n_instances", type=int)
    sp.add_argument("--score-mode", dest="score_mode", choices=("heatmap", "rle"))
    sp.add_argument("--feature-noise", dest="feature_noise", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lambda-vis", dest="lambda_vis", type=float)
    sp.add_argument("--train-fraction", dest="train_fraction", type=float)
    sp.set_defaults(func=cmd_train_calib)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return ConfigError.exit_code if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    del args.func, args.command, args.verbose
    try:
        return func(args)
    except Exception as e:
        code = getattr(e, "exit_code", None)
        if code is None:
            raise
        print(f"poseconf: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
