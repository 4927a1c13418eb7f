"""Desk-scale networks: a multi-branch net feeding the pooling layer, and a
single-head sigmoid baseline.  Both share the same trunk design:
``h = relu(x W + b)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from attrpool.aap import AapConfig, aap_backward, aap_forward, aap_loss
from attrpool.errors import ContractError, DomainError, FormatError, TrainingDiverged
from attrpool.priors import CoOccurrencePriors

ARMS = ("baseline", "multibranch", "cocnn")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def branch_slices_for(d_h: int, m: int, first_global: bool = True) -> list[tuple[int, int]]:
    """Contiguous hidden-unit groups, one per branch."""
    n_local = m - 1 if first_global else m
    if n_local < 1 or d_h < n_local:
        raise DomainError(f"cannot split {d_h} hidden units over {n_local} local branches")
    edges = np.linspace(0, d_h, n_local + 1).round().astype(int)
    local = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    return ([(0, d_h)] if first_global else []) + local


def block_trunk_mask(d_in: int, d_h: int, slices, feature_groups) -> np.ndarray:
    """Connectivity mask tying each local branch's hidden units to one feature group.

    ``feature_groups[g]`` is a ``(start, stop)`` range of input features.  Hidden
    units covered by a whole-width slice stay fully connected.
    """
    mask = np.ones((d_in, d_h), dtype=bool)
    local = [s for s in slices if s != (0, d_h)]
    if len(local) != len(feature_groups):
        raise DomainError(f"{len(local)} local branches but {len(feature_groups)} feature groups")
    for (h0, h1), (f0, f1) in zip(local, feature_groups):
        mask[:, h0:h1] = False
        mask[f0:f1, h0:h1] = True
    return mask


@dataclass
class ToyModelParams:
    W: np.ndarray                      # (d_in, d_h)
    b: np.ndarray                      # (d_h,)
    heads_W: list[np.ndarray]          # m x (width_l, k)
    heads_b: list[np.ndarray]          # m x (k,)
    branch_slices: list[tuple[int, int]]
    trunk_mask: np.ndarray | None = None

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_h(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return len(self.heads_W)

    @property
    def k(self) -> int:
        return self.heads_W[0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b, *self.heads_W, *self.heads_b]

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            self.W.copy(), self.b.copy(),
            [w.copy() for w in self.heads_W], [c.copy() for c in self.heads_b],
            list(self.branch_slices),
            None if self.trunk_mask is None else self.trunk_mask.copy(),
        )


@dataclass
class BaselineParams:
    W: np.ndarray
    b: np.ndarray
    theta: np.ndarray                  # (d_h, k)
    bias: np.ndarray                   # (k,)

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.theta.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b, self.theta, self.bias]

    def copy(self) -> "BaselineParams":
        return BaselineParams(self.W.copy(), self.b.copy(), self.theta.copy(), self.bias.copy())


def init_multibranch(d_in, d_h, m, k, seed, first_global=True, feature_groups=None) -> ToyModelParams:
    if m < 2:
        raise DomainError(f"need at least 2 branches, got {m}")
    rng = np.random.default_rng(seed)
    slices = branch_slices_for(d_h, m, first_global)
    mask = None
    fan_in = d_in
    if feature_groups is not None:
        mask = block_trunk_mask(d_in, d_h, slices, feature_groups)
    W = _uniform(rng, fan_in, (d_in, d_h))
    if mask is not None:
        # rescale each hidden unit to its true fan-in
        W = np.where(mask, W * np.sqrt(d_in / mask.sum(axis=0)), 0.0)
    b = _uniform(rng, fan_in, (d_h,))
    heads_W, heads_b = [], []
    for s0, s1 in slices:
        heads_W.append(_uniform(rng, s1 - s0, (s1 - s0, k)))
        heads_b.append(_uniform(rng, s1 - s0, (k,)))
    return ToyModelParams(W, b, heads_W, heads_b, slices, mask)


def init_baseline(d_in, d_h, k, seed) -> BaselineParams:
    rng = np.random.default_rng(seed)
    return BaselineParams(
        _uniform(rng, d_in, (d_in, d_h)),
        _uniform(rng, d_in, (d_h,)),
        _uniform(rng, d_h, (d_h, k)),
        _uniform(rng, d_h, (k,)),
    )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class BranchCache:
    X: np.ndarray
    A: np.ndarray      # trunk pre-activation
    H: np.ndarray      # trunk output
    P: np.ndarray      # (b, m, k)
    single: bool


def _as_batch(x, d_in) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d_in:
        raise ContractError(f"expected inputs with {d_in} features, got shape {np.shape(x)}")
    return X, single


def forward_branches(x, params: ToyModelParams):
    """Branch probability matrix ``P`` (softmax rows) and the backward cache.

    ``x`` may be one feature vector (returns ``(m, k)``) or a batch ``(b, d_in)``
    (returns ``(b, m, k)``).
    """
    X, single = _as_batch(x, params.d_in)
    A = X @ params.W + params.b
    H = np.maximum(A, 0.0)
    P = np.empty((X.shape[0], params.m, params.k))
    for l, (s0, s1) in enumerate(params.branch_slices):
        P[:, l, :] = softmax_rows(H[:, s0:s1] @ params.heads_W[l] + params.heads_b[l])
    cache = BranchCache(X, A, H, P, single)
    return (P[0] if single else P), cache


def backward_to_params(dP, cache: BranchCache, params: ToyModelParams) -> ToyModelParams:
    """Push ``dJ/dP`` through the softmax heads and trunk; returns gradients shaped like ``params``."""
    dP = np.asarray(dP, dtype=np.float64)
    if cache.single:
        dP = dP[None]
    if dP.shape != cache.P.shape:
        raise ContractError(f"gradient shape {dP.shape} does not match cache {cache.P.shape}")
    dH = np.zeros_like(cache.H)
    gW, gb = [], []
    for l, (s0, s1) in enumerate(params.branch_slices):
        Pl = cache.P[:, l, :]
        g = dP[:, l, :]
        dZ = Pl * (g - np.sum(g * Pl, axis=1, keepdims=True))
        gW.append(cache.H[:, s0:s1].T @ dZ)
        gb.append(dZ.sum(axis=0))
        dH[:, s0:s1] += dZ @ params.heads_W[l].T
    dA = dH * (cache.A > 0)
    dW = cache.X.T @ dA
    if params.trunk_mask is not None:
        dW = dW * params.trunk_mask
    return ToyModelParams(dW, dA.sum(axis=0), gW, gb, list(params.branch_slices), params.trunk_mask)


@dataclass
class BaselineCache:
    X: np.ndarray
    A: np.ndarray
    H: np.ndarray
    yhat: np.ndarray
    single: bool


def baseline_forward(x, params: BaselineParams):
    """Independent sigmoid per attribute on the trunk output."""
    X, single = _as_batch(x, params.d_in)
    A = X @ params.W + params.b
    H = np.maximum(A, 0.0)
    yhat = sigmoid(H @ params.theta + params.bias)
    cache = BaselineCache(X, A, H, yhat, single)
    return (yhat[0] if single else yhat), cache


def bce_loss(yhat, y, eps: float = 1e-12) -> float:
    """Binary cross-entropy averaged over instances and attributes."""
    yhat = np.clip(np.asarray(yhat, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(yhat) + (1 - y) * np.log1p(-yhat)))


def baseline_backward(y, cache: BaselineCache, params: BaselineParams) -> BaselineParams:
    """Gradient of :func:`bce_loss` (sigmoid and cross-entropy fused)."""
    y = np.asarray(y, dtype=np.float64)
    if cache.single:
        y = y[None]
    if y.shape != cache.yhat.shape:
        raise ContractError(f"label shape {y.shape} does not match cache {cache.yhat.shape}")
    dZ = (cache.yhat - y) / y.size
    dtheta = cache.H.T @ dZ
    dH = dZ @ params.theta.T
    dA = dH * (cache.A > 0)
    return BaselineParams(cache.X.T @ dA, dA.sum(axis=0), dtheta, dZ.sum(axis=0))


@dataclass
class TrainConfig:
    arm: str = "cocnn"
    lr: float = 2.0
    batch_size: int = 32
    epochs: int = 20
    lam: float = 0.2
    seed: int = 0
    momentum: float = 0.0
    m: int = 3
    d_h: int = 48
    first_global: bool = True
    block_trunk: bool = True

    def __post_init__(self):
        if self.arm not in ARMS:
            raise DomainError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if not self.lr >= 0:
            raise DomainError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise DomainError("batch size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")

    @property
    def effective_lam(self) -> float:
        return self.lam if self.arm == "cocnn" else 0.0


@dataclass
class TrainResult:
    params: ToyModelParams | BaselineParams
    config: TrainConfig
    log: list[dict] = field(default_factory=list)


def _step(arrays, grads, velocity, lr, momentum):
    for p, g, v in zip(arrays, grads, velocity):
        if momentum:
            v *= momentum
            v += g
            p -= lr * v
        else:
            p -= lr * g


def batch_loss_and_grad(params, X, Y, config: TrainConfig, priors: CoOccurrencePriors | None):
    if config.arm == "baseline":
        yhat, cache = baseline_forward(X, params)
        return bce_loss(yhat, Y), baseline_backward(Y, cache, params)
    aap_cfg = AapConfig(lam=config.effective_lam)
    P, bcache = forward_branches(X, params)
    phat, acache = aap_forward(P, priors, aap_cfg)
    dP = aap_backward(acache, Y, priors, aap_cfg)
    return aap_loss(phat, Y), backward_to_params(dP, bcache, params)


def train(dataset, config: TrainConfig, priors: CoOccurrencePriors | None = None,
          val=None, evaluate=None, feature_groups=None) -> TrainResult:
    """Mini-batch SGD; deterministic for a fixed ``config.seed``.

    ``evaluate(params, dataset) -> float`` (typically mA on ``val``) is logged
    per epoch when both are given.
    """
    X = np.asarray(dataset.features, dtype=np.float64)
    Y = np.asarray(dataset.labels.y, dtype=np.float64)
    n, d_in = X.shape
    if n == 0:
        raise DomainError("empty training set")
    if np.any(Y.sum(axis=1) == 0):
        raise DomainError("training labels contain all-zero rows")
    k = Y.shape[1]
    if config.arm == "baseline":
        params = init_baseline(d_in, config.d_h, k, config.seed)
    else:
        if priors is None:
            raise DomainError(f"arm {config.arm!r} needs co-occurrence priors")
        if priors.k != k:
            raise ContractError(f"priors have k={priors.k}, labels have k={k}")
        groups = feature_groups if (config.block_trunk and feature_groups) else None
        params = init_multibranch(d_in, config.d_h, config.m, k,
                                  config.seed, config.first_global, groups)
    rng = np.random.default_rng(config.seed + 1)
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    result = TrainResult(params, config)

    def record(epoch):
        loss, _ = batch_loss_and_grad(params, X, Y, config, priors)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss is {loss} after epoch {epoch} (lr={config.lr})")
        entry = {"epoch": epoch, "loss": loss}
        if evaluate is not None and val is not None:
            entry["mA"] = float(evaluate(params, val))
        result.log.append(entry)

    record(0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = batch_loss_and_grad(params, X[idx], Y[idx], config, priors)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch} (lr={config.lr})")
            _step(arrays, grads.arrays(), velocity, config.lr, config.momentum)
        record(epoch)
    return result


def predict(x, params, priors: CoOccurrencePriors | None = None, lam: float = 0.0) -> np.ndarray:
    """Attribute scores: pooled ``phat`` for branch models, sigmoids for the baseline."""
    if isinstance(params, BaselineParams):
        return baseline_forward(x, params)[0]
    P, _ = forward_branches(x, params)
    phat, _ = aap_forward(P, priors, AapConfig(lam=lam))
    return phat


def save_checkpoint(result_or_params, path, arm: str | None = None, lam: float | None = None) -> None:
    if isinstance(result_or_params, TrainResult):
        params = result_or_params.params
        arm = result_or_params.config.arm
        lam = result_or_params.config.effective_lam
    else:
        params = result_or_params
    if isinstance(params, BaselineParams):
        doc = {
            "kind": "baseline",
            "arm": arm or "baseline",
            "d_in": params.d_in, "d_h": params.W.shape[1], "k": params.k,
            "weights": {name: a.ravel().tolist() for name, a in
                        zip(("W", "b", "theta", "bias"), params.arrays())},
        }
    else:
        doc = {
            "kind": "multibranch",
            "arm": arm or "multibranch",
            "lambda": lam,
            "d_in": params.d_in, "d_h": params.d_h, "m": params.m, "k": params.k,
            "branch_slices": [list(s) for s in params.branch_slices],
            "trunk_mask": None if params.trunk_mask is None else params.trunk_mask.astype(int).ravel().tolist(),
            "weights": {
                "W": params.W.ravel().tolist(),
                "b": params.b.tolist(),
                "heads_W": [w.ravel().tolist() for w in params.heads_W],
                "heads_b": [c.tolist() for c in params.heads_b],
            },
        }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ToyModelParams | BaselineParams, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint {path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    try:
        w = doc["weights"]
        d_in, d_h, k = doc["d_in"], doc["d_h"], doc["k"]
        if doc["kind"] == "baseline":
            params = BaselineParams(
                np.array(w["W"]).reshape(d_in, d_h), np.array(w["b"]),
                np.array(w["theta"]).reshape(d_h, k), np.array(w["bias"]),
            )
        else:
            slices = [tuple(s) for s in doc["branch_slices"]]
            if len(slices) != doc["m"]:
                raise FormatError(f"checkpoint {path}: {len(slices)} slices for m={doc['m']}")
            mask = doc.get("trunk_mask")
            params = ToyModelParams(
                np.array(w["W"]).reshape(d_in, d_h), np.array(w["b"]),
                [np.array(a).reshape(s1 - s0, k) for a, (s0, s1) in zip(w["heads_W"], slices)],
                [np.array(a) for a in w["heads_b"]],
                slices,
                None if mask is None else np.array(mask, dtype=bool).reshape(d_in, d_h),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint {path}: bad or missing field ({exc})") from None
    meta = {key: v for key, v in doc.items() if key != "weights"}
    return params, meta
