"""Attribute-aware pooling layer: forward pass, loss and analytic backward pass.

All functions accept a single branch matrix ``P`` of shape ``(m, k)`` or a
batch of shape ``(b, m, k)``.  Ties in every max are broken towards the
smallest branch index, and the selection masks are held constant when
differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from attrpool.errors import ContractError, DomainError, SchemaError
from attrpool.priors import CoOccurrencePriors


@dataclass(frozen=True)
class AapConfig:
    lam: float = 0.2
    tau: float = 0.5
    tie_break: str = "smallest-index"

    def __post_init__(self):
        if not self.lam >= 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.tau < 1:
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if self.tie_break != "smallest-index":
            raise DomainError(f"unsupported tie_break rule {self.tie_break!r}")


@dataclass
class AapForwardCache:
    P: np.ndarray
    Q: np.ndarray
    local_argmax: np.ndarray
    Pplus: np.ndarray
    Phat: np.ndarray
    col_argmax: np.ndarray
    E: np.ndarray
    phat: np.ndarray
    lam: float


def _check_branch_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim not in (2, 3):
        raise DomainError(f"P must have shape (m, k) or (b, m, k), got {P.shape}")
    if P.shape[-2] < 2:
        raise DomainError(f"need at least 2 branches, got m={P.shape[-2]}")
    return P


def local_max_pool(P) -> tuple[np.ndarray, np.ndarray]:
    """For each branch l, the column-wise max over every other branch.

    Returns ``Q`` and ``local_argmax`` (the branch index that was selected).
    """
    P = _check_branch_matrix(P)
    m = P.shape[-2]
    top = np.argmax(P, axis=-2)  # first occurrence == smallest index
    rows = np.arange(m).reshape((m, 1))
    is_top = rows == top[..., None, :]
    masked = np.where(is_top, -np.inf, P)
    runner_up = np.argmax(masked, axis=-2)
    idx = np.where(is_top, runner_up[..., None, :], top[..., None, :])
    Q = np.take_along_axis(P, idx, axis=-2)
    return Q, idx


def hard_indicator(Q, tau: float = 0.5) -> np.ndarray:
    return (np.asarray(Q) > tau).astype(np.int8)


def auxiliary_hard(S, priors: CoOccurrencePriors) -> np.ndarray:
    """Context estimate from a binary presence indicator (thresholded variant).

    Rows with no attribute switched on fall back to the marginals.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.shape[-1] != priors.k:
        raise SchemaError(f"indicator has k={S.shape[-1]}, priors have k={priors.k}")
    s = S.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (S @ priors.C) / s
    return np.where(s > 0, out, priors.p)


def auxiliary_soft(Q, priors: CoOccurrencePriors) -> np.ndarray:
    """Total-probability context estimate ``(Q C + (1 - Q) Ctilde) / k``."""
    Q = np.asarray(Q, dtype=np.float64)
    k = priors.k
    if Q.shape[-1] != k:
        raise SchemaError(f"Q has k={Q.shape[-1]}, priors have k={k}")
    return (Q @ priors.C + (1.0 - Q) @ priors.Ctilde) / k


def combine(P, Pplus, lam: float) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    Pplus = np.asarray(Pplus, dtype=np.float64)
    if P.shape != Pplus.shape:
        raise ContractError(f"shape mismatch: P {P.shape} vs Pplus {Pplus.shape}")
    if not lam >= 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    return P + lam * Pplus


def global_max_normalize(Phat) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column max over branches followed by l1 normalisation.

    Returns ``(phat, col_argmax, E)``.
    """
    Phat = np.asarray(Phat, dtype=np.float64)
    col_argmax = np.argmax(Phat, axis=-2)
    E = np.take_along_axis(Phat, col_argmax[..., None, :], axis=-2)[..., 0, :]
    total = E.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DomainError("column maxima sum to zero; normalisation undefined")
    return E / total, col_argmax, E


def aap_forward(P, priors: CoOccurrencePriors, config: AapConfig | None = None):
    config = config or AapConfig()
    P = _check_branch_matrix(P)
    if P.shape[-1] != priors.k:
        raise SchemaError(f"P has k={P.shape[-1]}, priors have k={priors.k}")
    Q, local_argmax = local_max_pool(P)
    Pplus = auxiliary_soft(Q, priors)
    Phat = combine(P, Pplus, config.lam)
    phat, col_argmax, E = global_max_normalize(Phat)
    cache = AapForwardCache(P, Q, local_argmax, Pplus, Phat, col_argmax, E, phat, config.lam)
    return phat, cache


def target_distribution(y) -> np.ndarray:
    """``y / |y|_1``; all-zero label vectors are rejected."""
    y = np.asarray(y, dtype=np.float64)
    total = y.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DomainError("all-zero label vector: target distribution undefined")
    return y / total


def aap_loss(phat, y) -> float:
    """Half squared error to the normalised target, averaged over the batch."""
    diff = np.asarray(phat, dtype=np.float64) - target_distribution(y)
    per_instance = 0.5 * np.sum(diff * diff, axis=-1)
    return float(np.mean(per_instance))


def aap_backward(cache: AapForwardCache, y, priors: CoOccurrencePriors, config: AapConfig | None = None) -> np.ndarray:
    """Gradient of :func:`aap_loss` with respect to the branch matrix ``P``."""
    lam = cache.lam if config is None else config.lam
    P = cache.P
    m, k = P.shape[-2:]
    target = target_distribution(y)
    if target.shape != cache.phat.shape or priors.k != k:
        raise ContractError(
            f"cache/label mismatch: phat {cache.phat.shape}, y {target.shape}, priors k={priors.k}"
        )
    batch = 1 if P.ndim == 2 else P.shape[0]

    resid = (cache.phat - target) / batch
    E = cache.E
    total = E.sum(axis=-1, keepdims=True)
    dE = resid / total - np.sum(resid * E, axis=-1, keepdims=True) / total**2

    rows = np.arange(m).reshape((m, 1))
    M = rows == cache.col_argmax[..., None, :]
    dPhat = M * dE[..., None, :]
    dP = dPhat.copy()
    if lam != 0:
        # dQ[l, i] = (lam / k) * sum_j dPhat[l, j] (C[i, j] - Ctilde[i, j])
        dQ = (lam / k) * (dPhat @ (priors.C - priors.Ctilde).T)
        # route dQ[l, i] back to the branch that fed Q[l, i]
        onehot = cache.local_argmax[..., None] == np.arange(m)
        dP += np.einsum("...lir,...li->...ri", onehot, dQ)
    return dP


def finite_difference_grad(P, y, priors: CoOccurrencePriors, config: AapConfig | None = None, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``aap_loss(aap_forward(P))`` for every entry of ``P``."""
    if not h > 0:
        raise DomainError(f"step must be positive, got {h}")
    config = config or AapConfig()
    P = np.array(P, dtype=np.float64)
    grad = np.zeros_like(P)

    def f(x):
        return aap_loss(aap_forward(x, priors, config)[0], y)

    for pos in np.ndindex(P.shape):
        orig = P[pos]
        P[pos] = orig + h
        up = f(P)
        P[pos] = orig - h
        down = f(P)
        P[pos] = orig
        grad[pos] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def min_tie_gap(P, priors: CoOccurrencePriors, config: AapConfig) -> float:
    """Smallest margin between a selected max and its runner-up, over every max taken in the forward pass."""
    P = np.asarray(P, dtype=np.float64)
    gaps = []
    srt = np.sort(P, axis=-2)
    gaps.append(np.min(srt[..., -1, :] - srt[..., -2, :]))
    if P.shape[-2] > 2:
        gaps.append(np.min(srt[..., -2, :] - srt[..., -3, :]))
    _, cache = aap_forward(P, priors, config)
    srt_hat = np.sort(cache.Phat, axis=-2)
    gaps.append(np.min(srt_hat[..., -1, :] - srt_hat[..., -2, :]))
    return float(min(gaps))


@dataclass
class GradcheckReport:
    rows: list[tuple[int, tuple[int, ...], float, float, float, bool]]
    max_rel_err: float
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return all(r[-1] for r in self.rows)

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        n_fail = sum(1 for r in self.rows if not r[-1])
        return (
            f"GRADCHECK status={status} trials={self.trials} entries={len(self.rows)} "
            f"failures={n_fail} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e}"
        )

    def table(self) -> str:
        lines = [f"{'trial':>5} {'position':>10} {'analytic':>14} {'numeric':>14} {'rel_err':>10}  ok"]
        for trial, pos, a, n, err, ok in self.rows:
            lines.append(
                f"{trial:5d} {str(pos):>10} {a:14.6e} {n:14.6e} {err:10.2e}  {'pass' if ok else 'FAIL'}"
            )
        return "\n".join(lines)

    def __str__(self):
        return self.table() + "\n" + self.summary_line()


def random_branch_matrix(rng: np.random.Generator, m: int, k: int, scale: float = 2.0) -> np.ndarray:
    """Softmax rows of Gaussian logits, the shape a branch head produces."""
    z = rng.normal(scale=scale, size=(m, k))
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def random_labels(rng: np.random.Generator, k: int) -> np.ndarray:
    y = (rng.random(k) < 0.4).astype(np.int8)
    if not y.any():
        y[rng.integers(k)] = 1
    return y


def gradcheck(
    priors: CoOccurrencePriors,
    m: int = 4,
    lam: float = 0.2,
    trials: int = 100,
    seed: int = 0,
    h: float = 1e-6,
    tol: float = 1e-4,
    min_gap: float = 1e-4,
) -> GradcheckReport:
    """Compare :func:`aap_backward` with central differences at random non-tie points."""
    rng = np.random.default_rng(seed)
    config = AapConfig(lam=lam)
    k = priors.k
    rows = []
    worst = 0.0
    for trial in range(trials):
        while True:
            P = random_branch_matrix(rng, m, k)
            if min_tie_gap(P, priors, config) > min_gap:
                break
        y = random_labels(rng, k)
        _, cache = aap_forward(P, priors, config)
        analytic = aap_backward(cache, y, priors, config)
        numeric = finite_difference_grad(P, y, priors, config, h)
        err = relative_error(analytic, numeric)
        worst = max(worst, float(err.max()))
        for pos in np.ndindex(P.shape):
            rows.append((trial, pos, float(analytic[pos]), float(numeric[pos]), float(err[pos]), bool(err[pos] < tol)))
    return GradcheckReport(rows, worst, trials, tol)
