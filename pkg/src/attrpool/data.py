"""Synthetic correlated-attribute data and file-based dataset I/O.

Feature binary layout ("AAPT"): magic ``b"AAPT"``, one version byte, a
little-endian u32 rank, ``rank`` u32 dimensions, then little-endian float32
values in row-major order.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from attrpool.errors import DomainError, FormatError, SchemaError
from attrpool.priors import AttributeSchema, LabelMatrix

log = logging.getLogger(__name__)

AAPT_MAGIC = b"AAPT"
AAPT_VERSION = 1


class GenerationError(DomainError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: LabelMatrix
    split: str = "all"
    feature_groups: list[tuple[int, int]] | None = None
    m: int | None = None
    placement: np.ndarray | None = None   # generator trace: group of each signal, -1 if absent

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DomainError(f"features must be 2-D, got {self.features.shape}")
        if self.features.shape[0] != self.labels.n:
            raise DomainError(f"{self.features.shape[0]} feature rows vs {self.labels.n} label rows")
        if np.any(self.labels.y.sum(axis=1) == 0):
            raise DomainError("dataset contains all-zero label rows")

    def __len__(self):
        return self.features.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return self.labels.schema.names

    def subset(self, idx, split: str) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            LabelMatrix(self.labels.y[idx], self.labels.schema),
            split,
            self.feature_groups,
            self.m,
            None if self.placement is None else self.placement[idx],
        )


# Eight attributes, two body regions.  Prototypes bind attributes across
# regions (hat <-> scarf <-> boots, skirt <-> long hair ...) so that the
# label of one region is predictable from the other.
DEFAULT_NAMES = ("hat", "longhair", "glasses", "scarf", "skirt", "boots", "backpack", "trousers")
DEFAULT_GROUP_OF = (0, 0, 0, 0, 1, 1, 1, 1)
DEFAULT_PROTOTYPES = (
    ((1, 0, 0, 1, 0, 1, 0, 1), 0.20),
    ((0, 1, 0, 0, 1, 0, 0, 0), 0.20),
    ((0, 0, 1, 0, 0, 0, 1, 1), 0.20),
    ((1, 1, 0, 1, 1, 1, 0, 0), 0.15),
    ((0, 0, 1, 0, 0, 0, 0, 1), 0.15),
    ((0, 1, 1, 0, 1, 0, 1, 0), 0.10),
)


@dataclass
class SyntheticSpec:
    k: int = 8
    m: int = 3
    n_train: int = 5000
    n_val: int = 500
    n_test: int = 1000
    prototypes: list = field(default_factory=lambda: [[list(b), w] for b, w in DEFAULT_PROTOTYPES])
    flip_prob: float = 0.05
    group_of: list = field(default_factory=lambda: list(DEFAULT_GROUP_OF))
    entangle_prob: float = 0.3
    d_in: int = 16
    signal_strength: float = 1.0
    noise_sigma: float = 0.6
    seed: int = 0
    names: list | None = field(default_factory=lambda: list(DEFAULT_NAMES))

    def validate(self) -> None:
        if self.k < 2:
            raise DomainError("k must be >= 2")
        weights = np.array([w for _, w in self.prototypes], dtype=np.float64)
        if len(self.prototypes) == 0 or np.any(weights < 0) or abs(weights.sum() - 1) > 1e-9:
            raise DomainError(f"prototype weights must be non-negative and sum to 1, got {weights.sum()}")
        for bits, _ in self.prototypes:
            if len(bits) != self.k or any(b not in (0, 1) for b in bits):
                raise DomainError(f"prototype {bits} is not a binary {self.k}-vector")
        if not 0 <= self.flip_prob < 1:
            raise DomainError(f"flip_prob must lie in [0, 1), got {self.flip_prob}")
        if not 0 <= self.entangle_prob <= 1:
            raise DomainError(f"entangle_prob must lie in [0, 1], got {self.entangle_prob}")
        if len(self.group_of) != self.k:
            raise DomainError(f"group_of assigns {len(self.group_of)} attributes, k={self.k}")
        if self.entangle_prob > 0 and self.n_groups < 2:
            raise DomainError("entanglement needs at least two feature groups")
        if self.d_in < self.n_groups:
            raise DomainError(f"d_in={self.d_in} too small for {self.n_groups} groups")
        if self.names is not None and len(self.names) != self.k:
            raise DomainError(f"{len(self.names)} names for k={self.k}")
        if any(n < 0 for n in (self.n_train, self.n_val, self.n_test)):
            raise DomainError("split sizes must be non-negative")

    @property
    def n_groups(self) -> int:
        return int(max(self.group_of)) + 1

    def feature_groups(self) -> list[tuple[int, int]]:
        edges = np.linspace(0, self.d_in, self.n_groups + 1).round().astype(int)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"spec file: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise FormatError(f"spec file: unknown fields {sorted(unknown)}")
        spec = cls(**doc)
        spec.validate()
        return spec


def marginals_from_spec(spec: SyntheticSpec) -> np.ndarray:
    """Closed-form attribute marginals of the prototype mixture after flips."""
    bits = np.array([b for b, _ in spec.prototypes], dtype=np.float64)
    w = np.array([w for _, w in spec.prototypes])
    q = spec.flip_prob
    return w @ (bits * (1 - q) + (1 - bits) * q)


def joint_from_spec(spec: SyntheticSpec) -> np.ndarray:
    """Closed-form pairwise joint probabilities (before all-zero resampling)."""
    bits = np.array([b for b, _ in spec.prototypes], dtype=np.float64)
    w = np.array([w for _, w in spec.prototypes])
    q = spec.flip_prob
    on = bits * (1 - q) + (1 - bits) * q
    J = np.einsum("r,ri,rj->ij", w, on, on)
    np.fill_diagonal(J, w @ on)
    return J


def _draw_labels(rng, spec: SyntheticSpec, n: int) -> np.ndarray:
    bits = np.array([b for b, _ in spec.prototypes], dtype=np.int8)
    w = np.array([w for _, w in spec.prototypes], dtype=np.float64)
    out = np.empty((n, spec.k), dtype=np.int8)
    todo = np.arange(n)
    for _ in range(1000):
        choice = rng.choice(len(bits), size=todo.size, p=w)
        flips = rng.random((todo.size, spec.k)) < spec.flip_prob
        out[todo] = bits[choice] ^ flips
        todo = todo[out[todo].sum(axis=1) == 0]
        if todo.size == 0:
            return out
    raise GenerationError("could not draw non-empty label vectors; check prototypes and flip_prob")


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Draw train/val/test splits; fully determined by ``spec.seed``."""
    spec.validate()
    if all(sum(b) == 0 for b, _ in spec.prototypes) and spec.flip_prob == 0:
        raise GenerationError("every prototype is all-zero and flip_prob is 0")
    rng = np.random.default_rng(spec.seed)
    groups = spec.feature_groups()
    G = len(groups)

    # Each group owns a set of unit directions ("slots") inside its block.  An
    # attribute writes the direction of its own slot index in whichever group
    # its signal lands; an entangled signal therefore looks exactly like the
    # attribute that occupies the same slot in the wrong group.
    home = np.asarray(spec.group_of)
    slot = np.array([int(np.sum(home[:j] == home[j])) for j in range(spec.k)])
    n_slots = int(slot.max()) + 1
    basis = np.zeros((G, n_slots, spec.d_in))
    for g, (f0, f1) in enumerate(groups):
        v = rng.normal(size=(n_slots, f1 - f0))
        basis[g, :, f0:f1] = v / np.linalg.norm(v, axis=1, keepdims=True)

    n = spec.n_train + spec.n_val + spec.n_test
    Y = _draw_labels(rng, spec, n)
    entangled = rng.random((n, spec.k)) < spec.entangle_prob
    if G > 1:
        shift = rng.integers(1, G, size=(n, spec.k))
        elsewhere = (home[None, :] + shift) % G
    else:
        elsewhere = np.broadcast_to(home, (n, spec.k))
    placement = np.where(entangled, elsewhere, home[None, :])
    placement = np.where(Y == 1, placement, -1)

    X = np.zeros((n, spec.d_in))
    for j in range(spec.k):
        for g in range(G):
            rows = placement[:, j] == g
            X[rows] += spec.signal_strength * basis[g, slot[j]]
    X += spec.noise_sigma * rng.normal(size=X.shape)
    # keep exactly what the float32 feature file can hold
    X = X.astype(np.float32).astype(np.float64)

    schema = AttributeSchema(tuple(spec.names)) if spec.names else AttributeSchema.default(spec.k)
    full = Dataset(X, LabelMatrix(Y, schema), "all", groups, spec.m, placement)
    cuts = np.cumsum([spec.n_train, spec.n_val])
    return (
        full.subset(np.arange(0, cuts[0]), "train"),
        full.subset(np.arange(cuts[0], cuts[1]), "val"),
        full.subset(np.arange(cuts[1], n), "test"),
    )


def split(dataset: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0,
          names: Sequence[str] = ("train", "val", "test")) -> list[Dataset]:
    """Random disjoint partition; sizes are floors of ``ratio * n`` with the
    remainder handed out to the earliest partitions."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or abs(ratios.sum() - 1) > 1e-9:
        raise DomainError(f"split ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    n = len(dataset)
    sizes = np.floor(ratios * n + 1e-9).astype(int)
    for i in range(n - sizes.sum()):
        sizes[i % len(sizes)] += 1
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    tags = list(names) + [f"part{i}" for i in range(len(names), len(sizes))]
    return [dataset.subset(np.sort(order[a:b]), tags[i]) for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))]


def write_labels_csv(labels: LabelMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels.schema.names)
        w.writerows(labels.y.tolist())


def load_labels_csv(path, schema: AttributeSchema | None = None, drop_empty: bool = True) -> LabelMatrix:
    """Read a header + 0/1 rows CSV.

    All-zero rows are dropped (with a warning count) unless ``drop_empty`` is
    false, in which case they are an error.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    file_schema = AttributeSchema(tuple(header))
    if schema is not None and schema != file_schema:
        raise SchemaError(f"{path}: header {header} does not match schema {list(schema.names)}")
    k = file_schema.k
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != k:
            raise FormatError(f"{path}: line {lineno} (row {lineno - 2}) has {len(row)} fields, expected {k}")
        vals = []
        for col, cell in enumerate(row):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise FormatError(
                    f"{path}: line {lineno} (row {lineno - 2}), column '{header[col]}': non-binary value {cell!r}"
                )
            vals.append(int(cell))
        data.append(vals)
    if not data:
        raise FormatError(f"{path}: no label rows")
    y = np.array(data, dtype=np.int8)
    empty = y.sum(axis=1) == 0
    if empty.any():
        if not drop_empty:
            raise DomainError(f"{path}: {int(empty.sum())} all-zero label rows")
        log.warning("%s: dropped %d all-zero label rows", path, int(empty.sum()))
        y = y[~empty]
    return LabelMatrix(y, file_schema)


def save_features(features, path) -> None:
    a = np.ascontiguousarray(np.asarray(features, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(AAPT_MAGIC)
        fh.write(struct.pack("<BI", AAPT_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes(order="C"))


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != AAPT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 9:
        raise FormatError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<BI", raw, 4)
    if version != AAPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 9
    if len(raw) < off + 4 * rank:
        raise FormatError(f"{path}: truncated shape")
    shape = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(raw) - off != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} payload bytes, found {len(raw) - off}")
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(shape).astype(np.float64)


def save_dataset(dataset: Dataset, directory, name: str | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    name = name or dataset.split
    save_features(dataset.features, d / f"{name}.features.aapt")
    write_labels_csv(dataset.labels, d / f"{name}.labels.csv")
    meta_path = d / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    meta.update({"m": dataset.m, "feature_groups": dataset.feature_groups, "names": list(dataset.names)})
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(directory, name: str) -> Dataset:
    d = Path(directory)
    meta_path = d / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    labels = load_labels_csv(d / f"{name}.labels.csv", drop_empty=False)
    X = load_features(d / f"{name}.features.aapt")
    groups = meta.get("feature_groups")
    return Dataset(X, labels, name, [tuple(g) for g in groups] if groups else None, meta.get("m"))
