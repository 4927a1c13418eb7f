# # Co-occurrence priors
#
# Count how often attributes appear together, turn the counts into
# conditional probabilities and check the bookkeeping identities.

import tempfile
from pathlib import Path

import numpy as np

from attrpool import build_priors, export_heatmap_csv, export_priors, load_priors, validate_priors

# Four annotated people, two attributes.

labels = np.array([
    [1, 1],
    [1, 0],
    [0, 1],
    [1, 1],
])
pri = build_priors(labels, names=["female", "skirt"])

print("marginals p      ", pri.p)
print("joint J\n", pri.J)

# Row i of C is "given attribute i is present"; C-tilde is "given it is absent".

print("C  = Pr(a_j | a_i)\n", pri.C)
print("C~ = Pr(a_j | not a_i)\n", pri.Ctilde)

# Mixing the two rows by p_i gives back the marginal of a_j.

mix = pri.p[:, None] * pri.C + (1 - pri.p[:, None]) * pri.Ctilde
print("p_i C + (1 - p_i) C~ =\n", mix)

print(validate_priors(pri))

# Smoothing adds a pseudo-count to every cell, which keeps unseen pairs off zero.

rng = np.random.default_rng(0)
y = (rng.random((40, 5)) < 0.3).astype(int)
smooth = build_priors(y, epsilon=1.0)
print("smoothed C min entry:", smooth.C.min())

# Priors round-trip through JSON without losing a bit; the heatmap CSV is for plotting.

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "priors.json"
    export_priors(smooth, path)
    assert load_priors(path) == smooth
    export_heatmap_csv(pri, Path(d) / "heatmap.csv")
    print((Path(d) / "heatmap.csv").read_text())
