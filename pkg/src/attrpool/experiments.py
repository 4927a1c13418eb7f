"""Ablation and lambda-sweep drivers on the synthetic task."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from attrpool.data import Dataset, SyntheticSpec, generate_synthetic
from attrpool.metrics import MetricsReport, binarize, calibrate_thresholds, evaluate, mean_accuracy
from attrpool.model import BaselineParams, TrainConfig, TrainResult, predict, train
from attrpool.priors import CoOccurrencePriors, build_priors

log = logging.getLogger(__name__)

SWEEP_LAMBDAS = tuple(round(0.05 * i, 2) for i in range(11))


def default_threshold(params, k: int) -> float:
    # sigmoid scores are per-attribute probabilities; pooled scores are a distribution over k
    return 0.5 if isinstance(params, BaselineParams) else 1.0 / k


def score(params, dataset: Dataset, priors: CoOccurrencePriors | None, lam: float) -> np.ndarray:
    return predict(dataset.features, params, priors, lam)


def evaluate_model(params, dataset: Dataset, priors, lam: float, thresholds=None) -> MetricsReport:
    s = score(params, dataset, priors, lam)
    if thresholds is None:
        thresholds = default_threshold(params, s.shape[1])
    return evaluate(binarize(s, thresholds), dataset.labels.y, dataset.names)


def val_mA(priors, lam):
    def fn(params, dataset):
        s = score(params, dataset, priors, lam)
        return mean_accuracy(binarize(s, default_threshold(params, s.shape[1])), dataset.labels.y)
    return fn


@dataclass
class ArmRun:
    arm: str
    lam: float
    seed: int
    result: TrainResult
    test: MetricsReport


def run_arm(train_set: Dataset, val_set: Dataset, test_set: Dataset, config: TrainConfig,
            priors: CoOccurrencePriors | None = None, calibrate: bool = False) -> ArmRun:
    priors = priors if priors is not None else build_priors(train_set.labels)
    lam = config.effective_lam
    result = train(train_set, config, priors, val=val_set, evaluate=val_mA(priors, lam),
                   feature_groups=train_set.feature_groups)
    thresholds = None
    if calibrate:
        thresholds = calibrate_thresholds(score(result.params, val_set, priors, lam), val_set.labels.y)
    report = evaluate_model(result.params, test_set, priors, lam, thresholds)
    return ArmRun(config.arm, lam, config.seed, result, report)


def arm_config(arm: str, base: TrainConfig, lam: float | None = None) -> TrainConfig:
    return replace(base, arm=arm, lam=base.lam if lam is None else lam)


def ablation(seeds=range(5), spec: SyntheticSpec | None = None, base: TrainConfig | None = None,
             lam: float = 0.2) -> dict[str, list[ArmRun]]:
    """Baseline / multi-branch / CoCNN on freshly generated data for every seed."""
    spec = spec or SyntheticSpec()
    base = base or TrainConfig(m=spec.m)
    runs: dict[str, list[ArmRun]] = {"baseline": [], "multibranch": [], "cocnn": []}
    for seed in seeds:
        tr, va, te = generate_synthetic(replace(spec, seed=seed))
        priors = build_priors(tr.labels)
        for arm in runs:
            cfg = replace(arm_config(arm, base, lam), seed=seed)
            run = run_arm(tr, va, te, cfg, priors)
            log.info("seed %d %-11s mA %.4f", seed, arm, run.test.mA)
            runs[arm].append(run)
    return runs


def lambda_sweep(lambdas=SWEEP_LAMBDAS, seeds=range(5), spec: SyntheticSpec | None = None,
                 base: TrainConfig | None = None) -> dict[float, list[float]]:
    """Test mA per lambda and seed; lambda 0 is the multi-branch arm."""
    spec = spec or SyntheticSpec()
    base = base or TrainConfig(m=spec.m)
    table: dict[float, list[float]] = {float(lam): [] for lam in lambdas}
    for seed in seeds:
        tr, va, te = generate_synthetic(replace(spec, seed=seed))
        priors = build_priors(tr.labels)
        for lam in lambdas:
            cfg = replace(base, arm="cocnn", lam=float(lam), seed=seed)
            table[float(lam)].append(run_arm(tr, va, te, cfg, priors).test.mA)
            log.info("seed %d lambda %.2f mA %.4f", seed, lam, table[float(lam)][-1])
    return table


def format_sweep(table: dict[float, list[float]]) -> str:
    lines = ["lambda,mean_mA," + ",".join(f"seed{i}" for i in range(len(next(iter(table.values())))))]
    for lam, vals in table.items():
        lines.append(f"{lam:.2f},{np.mean(vals):.6f}," + ",".join(f"{v:.6f}" for v in vals))
    return "\n".join(lines) + "\n"
