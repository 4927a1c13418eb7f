# # Ablation and lambda sweep
#
# Seed-averaged comparison of the three arms, then mA as a function of the
# prior weight.  Pass --full for 5 seeds and the default 20 epochs (several
# minutes); the default is a quick 2-seed, 8-epoch run.

import sys

import numpy as np

from attrpool.data import SyntheticSpec
from attrpool.experiments import SWEEP_LAMBDAS, ablation, format_sweep, lambda_sweep
from attrpool.model import TrainConfig

full = "--full" in sys.argv
seeds = range(5) if full else range(2)
spec = SyntheticSpec()
base = TrainConfig(m=spec.m) if full else TrainConfig(m=spec.m, epochs=8)

runs = ablation(seeds, spec, base, lam=0.2)
for arm, rs in runs.items():
    vals = [r.test.mA for r in rs]
    print(f"{arm:12s} mA {100 * np.mean(vals):.2f} +- {100 * np.std(vals):.2f}")

table = lambda_sweep(SWEEP_LAMBDAS, seeds, spec, base)
print(format_sweep(table))
best = max(table, key=lambda lam: np.mean(table[lam]))
print("best lambda:", best)
