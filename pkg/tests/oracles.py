"""Plain-Python reference implementations, written loop by loop from the
defining formulas.  They share no code with the package under test.
"""

import math


def counts_oracle(rows):
    n = len(rows)
    k = len(rows[0])
    N = [[0] * k for _ in range(k)]
    for r in rows:
        for i in range(k):
            for j in range(k):
                if r[i] and r[j]:
                    N[i][j] += 1
    return n, N


def priors_oracle(rows, eps=0.0):
    n, N = counts_oracle(rows)
    k = len(N)
    d = n + 2 * eps
    p = [(N[i][i] + eps) / d for i in range(k)]
    J = [[(N[i][j] + eps) / d for j in range(k)] for i in range(k)]
    C = [[J[i][j] / p[i] if p[i] > 0 else p[j] for j in range(k)] for i in range(k)]
    Ct = [[(p[j] - J[i][j]) / (1 - p[i]) if p[i] < 1 else p[j] for j in range(k)] for i in range(k)]
    return p, J, C, Ct


def forward_oracle(P, C, Ct, lam):
    """Locally max-pool, total-probability context, combine, global max, normalise."""
    m = len(P)
    k = len(P[0])
    Q = [[max(P[i][j] for i in range(m) if i != l) for j in range(k)] for l in range(m)]
    Pplus = [[0.0] * k for _ in range(m)]
    for l in range(m):
        for j in range(k):
            s = 0.0
            for i in range(k):
                s += Q[l][i] * C[i][j] + (1 - Q[l][i]) * Ct[i][j]
            Pplus[l][j] = s / k
    Phat = [[P[l][j] + lam * Pplus[l][j] for j in range(k)] for l in range(m)]
    E = [max(Phat[l][j] for l in range(m)) for j in range(k)]
    tot = sum(E)
    return [e / tot for e in E], Q, Pplus, Phat


def loss_oracle(phat, y):
    s = sum(y)
    return 0.5 * sum((a - b / s) ** 2 for a, b in zip(phat, y))


def softmax(z):
    mx = max(z)
    e = [math.exp(v - mx) for v in z]
    t = sum(e)
    return [v / t for v in e]


def branches_oracle(x, W, b, heads_W, heads_b, slices):
    d_in = len(x)
    d_h = len(b)
    h = []
    for u in range(d_h):
        a = b[u] + sum(x[i] * W[i][u] for i in range(d_in))
        h.append(a if a > 0 else 0.0)
    P = []
    for (s0, s1), Wl, bl in zip(slices, heads_W, heads_b):
        k = len(bl)
        z = [bl[j] + sum(h[s0 + u] * Wl[u][j] for u in range(s1 - s0)) for j in range(k)]
        P.append(softmax(z))
    return P


def baseline_oracle(x, W, b, theta, bias):
    d_in = len(x)
    h = []
    for u in range(len(b)):
        a = b[u] + sum(x[i] * W[i][u] for i in range(d_in))
        h.append(max(a, 0.0))
    out = []
    for j in range(len(bias)):
        z = bias[j] + sum(h[u] * theta[u][j] for u in range(len(h)))
        out.append(1.0 / (1.0 + math.exp(-z)))
    return out


def mean_accuracy_oracle(pred, lab):
    n = len(pred)
    k = len(pred[0])
    total = 0.0
    for j in range(k):
        tp = sum(1 for i in range(n) if pred[i][j] and lab[i][j])
        tn = sum(1 for i in range(n) if not pred[i][j] and not lab[i][j])
        pos = sum(1 for i in range(n) if lab[i][j])
        neg = n - pos
        if pos and neg:
            total += 0.5 * (tp / pos + tn / neg)
        elif pos:
            total += tp / pos
        else:
            total += tn / neg
    return total / k
