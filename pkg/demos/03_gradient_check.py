# # Checking the backward pass
#
# The analytic gradient holds the max-pool selections fixed.  Central
# differences agree with it away from ties and disagree when a perturbation
# flips a selection.

import numpy as np

from attrpool import AapConfig, aap_backward, aap_forward, build_priors, finite_difference_grad, gradcheck
from attrpool.aap import relative_error

pri = build_priors([[1, 1], [1, 0], [0, 1], [1, 1]])
cfg = AapConfig(lam=0.2)
P = np.array([[0.9, 0.1], [0.2, 0.8]])

_, cache = aap_forward(P, pri, cfg)
g = aap_backward(cache, [1, 0], pri, cfg)
fd = finite_difference_grad(P, [1, 0], pri, cfg)
print("analytic\n", g)
print("numeric\n", fd)
print("max rel err", relative_error(g, fd).max())

# Step size: too big and truncation error shows, too small and round-off does.

for h in (1e-2, 1e-4, 1e-5, 1e-6, 1e-8, 1e-10):
    err = np.abs(finite_difference_grad(P, [1, 0], pri, cfg, h) - g).max()
    print(f"h={h:.0e}  max abs err={err:.2e}")

# Near a tie the numeric gradient is measuring a different branch of the function.

near_tie = np.array([[0.5, 0.1], [0.5 - 2e-7, 0.7]])
_, c2 = aap_forward(near_tie, pri, AapConfig(lam=0.0))
g2 = aap_backward(c2, [1, 0], pri, AapConfig(lam=0.0))
fd2 = finite_difference_grad(near_tie, [1, 0], pri, AapConfig(lam=0.0))
print("near a tie: analytic", g2[:, 0], "numeric", fd2[:, 0])

# The full harness: random non-tie points, a table and one summary line.

rng = np.random.default_rng(0)
pri6 = build_priors((rng.random((64, 6)) < 0.4).astype(int), epsilon=1.0)
report = gradcheck(pri6, m=4, trials=20)
print("\n".join(report.table().splitlines()[:6]))
print(report.summary_line())
