"""Command-line entry point: ``attrpool <command> [options]``.

Exit codes: 0 success, 2 bad input (missing file, malformed or mismatched
data), 3 a verification check failed, 4 training diverged.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from attrpool import aap, data, experiments, metrics, model, priors as priors_mod
from attrpool.errors import AttrPoolError, CheckFailure, FormatError, SchemaError, TrainingDiverged

EXIT_OK, EXIT_INPUT, EXIT_CHECK, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("attrpool")


def _thread_limit():
    n = os.environ.get("AAP_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def cmd_build_priors(args) -> int:
    labels = data.load_labels_csv(args.labels)
    pri = priors_mod.build_priors(labels, epsilon=args.epsilon)
    report = priors_mod.validate_priors(pri)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    priors_mod.export_priors(pri, out)
    heatmap = Path(args.heatmap) if args.heatmap else out.with_suffix(".heatmap.csv")
    priors_mod.export_heatmap_csv(pri, heatmap)
    print(report)
    print(f"wrote {out} and {heatmap} (n={pri.n}, k={pri.k})")
    if not report.ok:
        raise CheckFailure(f"prior validation failed: {report.failed()}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = data.SyntheticSpec.from_json(Path(args.spec).read_text()) if args.spec else data.SyntheticSpec()
    spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for part in data.generate_synthetic(spec):
        data.save_dataset(part, out)
    (out / "spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    print(f"wrote train/val/test ({spec.n_train}/{spec.n_val}/{spec.n_test}) to {out}")
    return EXIT_OK


def _train_config(args, arm=None, lam=None) -> model.TrainConfig:
    meta_m = None
    meta_path = Path(args.data) / "meta.json"
    if meta_path.exists():
        meta_m = json.loads(meta_path.read_text()).get("m")
    return model.TrainConfig(
        arm=arm or args.arm,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lam=args.lam if lam is None else lam,
        seed=args.seed,
        momentum=args.momentum,
        m=args.m or meta_m or 3,
        d_h=args.hidden,
    )


def _load_priors_or_build(args, train_set):
    if args.priors:
        pri = priors_mod.load_priors(args.priors)
        if pri.schema != train_set.labels.schema:
            raise SchemaError(
                f"priors schema {list(pri.schema.names)} does not match labels {list(train_set.names)}"
            )
        return pri
    return priors_mod.build_priors(train_set.labels)


def _write_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "mA"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["loss"]), repr(r.get("mA", float("nan")))])


def cmd_train(args) -> int:
    train_set = data.load_dataset(args.data, "train")
    val_set = data.load_dataset(args.data, "val")
    pri = _load_priors_or_build(args, train_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.sweep_lambda:
        test_set = data.load_dataset(args.data, "test")
        rows = []
        for lam in experiments.SWEEP_LAMBDAS:
            cfg = _train_config(args, arm="cocnn", lam=lam)
            run = experiments.run_arm(train_set, val_set, test_set, cfg, pri)
            rows.append((lam, run.result.log[-1].get("mA", float("nan")), run.test.mA))
            print(f"lambda={lam:.2f}  val_mA={rows[-1][1]:.4f}  test_mA={run.test.mA:.4f}")
        with open(out / "lambda_sweep.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "val_mA", "test_mA"])
            for lam, v, t in rows:
                w.writerow([f"{lam:.2f}", repr(v), repr(t)])
        return EXIT_OK

    cfg = _train_config(args)
    result = model.train(train_set, cfg, pri, val=val_set,
                         evaluate=experiments.val_mA(pri, cfg.effective_lam),
                         feature_groups=train_set.feature_groups)
    model.save_checkpoint(result, out / "checkpoint.json")
    _write_log(result.log, out / "train_log.csv")
    (out / "train_config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")
    if not args.priors:
        priors_mod.export_priors(pri, out / "priors.json")
    last = result.log[-1]
    print(f"arm={cfg.arm} lambda={cfg.effective_lam} final loss={last['loss']:.6f} val mA={last.get('mA', float('nan')):.4f}")
    return EXIT_OK


def _parse_thresholds(text, k):
    if text is None or text == "calibrate":
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) not in (1, k):
        raise FormatError(f"--thresholds needs 1 or {k} values, got {len(vals)}")
    return vals[0] if len(vals) == 1 else np.array(vals)


def cmd_eval(args) -> int:
    params, meta = model.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.data, args.split)
    pri = None
    if meta["kind"] != "baseline":
        if not args.priors:
            raise FormatError("--priors is required for branch models")
        pri = priors_mod.load_priors(args.priors)
    lam = args.lam if args.lam is not None else (meta.get("lambda") or 0.0)
    thresholds = _parse_thresholds(args.thresholds, ds.labels.schema.k)
    if args.thresholds == "calibrate":
        val = data.load_dataset(args.data, "val")
        thresholds = metrics.calibrate_thresholds(experiments.score(params, val, pri, lam), val.labels.y)
    report = experiments.evaluate_model(params, ds, pri, lam, thresholds)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    y = (rng.random((64, args.k)) < 0.4).astype(int)
    pri = priors_mod.build_priors(y, epsilon=1.0)
    report = aap.gradcheck(pri, m=args.m, lam=args.lam, trials=args.trials, seed=args.seed,
                           h=args.step, tol=args.tol)
    if args.out:
        Path(args.out).write_text(str(report) + "\n", encoding="utf-8")
    if args.verbose:
        print(report.table())
    print(report.summary_line())
    if not report.passed:
        raise CheckFailure(f"gradient check failed (max rel err {report.max_rel_err:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attrpool", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-priors", help="count co-occurrence priors from a label CSV")
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epsilon", type=float, default=0.0)
    s.add_argument("--heatmap", help="heatmap CSV path (default: <out>.heatmap.csv)")
    s.set_defaults(func=cmd_build_priors)

    s = sub.add_parser("synth", help="generate the synthetic entangled-attribute dataset")
    s.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one arm (or sweep lambda)")
    s.add_argument("--data", "--features", dest="data", required=True, help="dataset directory from `synth`")
    s.add_argument("--priors")
    s.add_argument("--arm", choices=model.ARMS, default="cocnn")
    s.add_argument("--lambda", dest="lam", type=float, default=0.2)
    s.add_argument("--lr", type=float, default=model.TrainConfig.lr)
    s.add_argument("--momentum", type=float, default=0.0)
    s.add_argument("--batch-size", type=int, default=model.TrainConfig.batch_size)
    s.add_argument("--epochs", type=int, default=model.TrainConfig.epochs)
    s.add_argument("--hidden", type=int, default=model.TrainConfig.d_h)
    s.add_argument("--m", type=int, help="branch count (default: from dataset meta)")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sweep-lambda", action="store_true", help="train lambda = 0, 0.05, ..., 0.5 and tabulate mA")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", "--features", dest="data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--priors")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--thresholds", help="one value, k comma-separated values, or 'calibrate'")
    s.add_argument("--out", help="write the report as CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference gradient of the pooling layer")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--m", type=int, default=4)
    s.add_argument("--k", type=int, default=6)
    s.add_argument("--lambda", dest="lam", type=float, default=0.2)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--step", type=float, default=1e-6)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--out", help="write the full table here")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckFailure as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (AttrPoolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
