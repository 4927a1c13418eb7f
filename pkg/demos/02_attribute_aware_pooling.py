# # The pooling layer, step by step
#
# Two branches, two attributes.  Each branch outputs a probability row; the
# layer borrows evidence from the other branches through the priors before
# taking the column maximum.

import numpy as np

from attrpool import AapConfig, aap_forward, aap_loss, auxiliary_soft, build_priors, combine, local_max_pool
from attrpool.aap import auxiliary_hard, global_max_normalize, hard_indicator

pri = build_priors([[1, 1], [1, 0], [0, 1], [1, 1]])
P = np.array([[0.9, 0.1],
              [0.2, 0.8]])

# What the *other* branches see, column by column.

Q, who = local_max_pool(P)
print("Q\n", Q)
print("taken from branch\n", who)

# Context estimate: weigh "present" and "absent" conditionals by Q.

Pplus = auxiliary_soft(Q, pri)
print("P+\n", Pplus)

# The thresholded variant throws away how confident the other branches were.

S = hard_indicator(Q, 0.5)
print("hard P+\n", auxiliary_hard(S, pri))

Phat = combine(P, Pplus, 0.2)
phat, col, E = global_max_normalize(Phat)
print("P^\n", Phat)
print("column max", E, "from branches", col)
print("p^", phat)

# aap_forward runs the same chain and keeps every intermediate for backprop.

out, cache = aap_forward(P, pri, AapConfig(lam=0.2))
assert np.allclose(out, phat)
print("loss for y = (1, 0):", aap_loss(out, [1, 0]))

# With lambda = 0 nothing is borrowed: plain column max, then normalise.

plain, _ = aap_forward(P, pri, AapConfig(lam=0.0))
print("lambda = 0:", plain, "=", P.max(axis=0) / P.max(axis=0).sum())

# The layer is batched too: (b, m, k) in, (b, k) out.

rng = np.random.default_rng(1)
batch = rng.dirichlet(np.ones(2), size=(5, 3))
print(aap_forward(batch, pri)[0])
