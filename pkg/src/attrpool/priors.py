"""Co-occurrence priors built from binary label data.

Row ``i`` of the conditional tables is the conditioning attribute:

    C[i, j]      = Pr(a_j | a_i)
    Ctilde[i, j] = Pr(a_j | not a_i)

so that ``p_i * C[i, j] + (1 - p_i) * Ctilde[i, j] == p_j`` for every pair.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from attrpool.errors import DomainError, FormatError, SchemaError

IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise SchemaError(f"need at least 2 attributes, got {len(names)}")
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, k: int) -> "AttributeSchema":
        return cls(tuple(f"attr{j}" for j in range(k)))


@dataclass(frozen=True)
class LabelMatrix:
    """n x k binary annotations with their attribute schema."""

    y: np.ndarray
    schema: AttributeSchema

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 2:
            raise DomainError(f"label matrix must be 2-D, got shape {y.shape}")
        if y.shape[1] != self.schema.k:
            raise SchemaError(f"label matrix has {y.shape[1]} columns, schema has {self.schema.k}")
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("label matrix entries must be 0 or 1")
        y = y.astype(np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_array(cls, y, names: Sequence[str] | None = None) -> "LabelMatrix":
        y = np.asarray(y)
        if y.ndim != 2:
            raise DomainError(f"label matrix must be 2-D, got shape {y.shape}")
        schema = AttributeSchema(tuple(names)) if names is not None else AttributeSchema.default(y.shape[1])
        return cls(y, schema)


@dataclass(frozen=True, eq=False)
class CoOccurrencePriors:
    schema: AttributeSchema
    p: np.ndarray
    J: np.ndarray
    C: np.ndarray
    Ctilde: np.ndarray
    n: int
    epsilon: float = 0.0

    @property
    def k(self) -> int:
        return self.schema.k

    def __eq__(self, other):
        if not isinstance(other, CoOccurrencePriors):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.n == other.n
            and self.epsilon == other.epsilon
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("p", "J", "C", "Ctilde")
            )
        )


def _as_label_array(labels) -> np.ndarray:
    if isinstance(labels, LabelMatrix):
        return labels.y
    return LabelMatrix.from_array(labels).y


def count_statistics(labels, epsilon: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed marginals ``p`` and joint matrix ``J`` from a label matrix.

    ``epsilon`` is added to every count (occurrence and co-occurrence) and
    ``2 * epsilon`` to the instance count.
    """
    if epsilon < 0:
        raise DomainError(f"epsilon must be non-negative, got {epsilon}")
    y = _as_label_array(labels).astype(np.int64)
    n = y.shape[0]
    if n == 0:
        raise DomainError("cannot count co-occurrences over zero instances")
    counts = y.T @ y  # N_ij, with N_ii = N_i on the diagonal
    denom = n + 2.0 * epsilon
    J = (counts + epsilon) / denom
    p = np.diag(J).copy()
    return p, J


def build_conditional(p: np.ndarray, J: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    J = np.asarray(J, dtype=np.float64)
    C = np.empty_like(J)
    live = p > 0
    C[live] = J[live] / p[live, None]
    # p_i == 0: no information about a_i, fall back to marginals
    C[~live] = p
    return np.clip(C, 0.0, 1.0)


def build_negative_conditional(p: np.ndarray, J: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    J = np.asarray(J, dtype=np.float64)
    Ct = np.empty_like(J)
    live = p < 1
    Ct[live] = (p[None, :] - J[live]) / (1.0 - p[live, None])
    Ct[~live] = p
    return np.clip(Ct, 0.0, 1.0)


def build_priors(labels, epsilon: float = 0.0, names: Sequence[str] | None = None) -> CoOccurrencePriors:
    if isinstance(labels, LabelMatrix):
        lm = labels
    else:
        lm = LabelMatrix.from_array(labels, names)
    p, J = count_statistics(lm, epsilon)
    return CoOccurrencePriors(
        schema=lm.schema,
        p=p,
        J=J,
        C=build_conditional(p, J),
        Ctilde=build_negative_conditional(p, J),
        n=lm.n,
        epsilon=float(epsilon),
    )


@dataclass
class ValidationReport:
    checks: dict[str, bool] = field(default_factory=dict)
    identity_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, passed in self.checks.items() if not passed]

    def __str__(self):
        lines = [f"{'PASS' if v else 'FAIL'}  {name}" for name, v in self.checks.items()]
        lines.append(f"identity residual: {self.identity_residual:.3e}")
        return "\n".join(lines)


def validate_priors(priors: CoOccurrencePriors, tol: float = IDENTITY_TOL) -> ValidationReport:
    """Check every structural invariant of a prior set; never raises."""
    p, J, C, Ct = priors.p, priors.J, priors.C, priors.Ctilde
    k = priors.k
    rep = ValidationReport()
    shapes_ok = p.shape == (k,) and J.shape == C.shape == Ct.shape == (k, k)
    rep.checks["shapes"] = shapes_ok
    if not shapes_ok:
        rep.identity_residual = float("inf")
        return rep
    finite = all(np.all(np.isfinite(a)) for a in (p, J, C, Ct))
    rep.checks["finite"] = finite
    rep.checks["marginals in [0,1]"] = bool(np.all((p >= 0) & (p <= 1)))
    rep.checks["J symmetric"] = bool(np.array_equal(J, J.T))
    rep.checks["J diagonal equals p"] = bool(np.array_equal(np.diag(J), p))
    bound = np.minimum(p[:, None], p[None, :])
    rep.checks["0 <= J <= min(p_i, p_j)"] = bool(np.all((J >= 0) & (J <= bound + tol)))
    diag_c = np.diag(C)[p > 0]
    diag_ct = np.diag(Ct)[p < 1]
    rep.checks["C diagonal is 1"] = bool(np.all(np.abs(diag_c - 1) <= tol))
    rep.checks["Ctilde diagonal is 0"] = bool(np.all(np.abs(diag_ct) <= tol))
    rep.checks["C in [0,1]"] = bool(np.all((C >= 0) & (C <= 1)))
    rep.checks["Ctilde in [0,1]"] = bool(np.all((Ct >= 0) & (Ct <= 1)))
    resid = p[:, None] * C + (1 - p[:, None]) * Ct - p[None, :]
    rep.identity_residual = float(np.max(np.abs(resid))) if finite else float("inf")
    rep.checks["total probability identity"] = rep.identity_residual <= tol
    return rep


def _matrix_to_json(a: np.ndarray):
    return [[float(v) for v in row] for row in a]


def export_priors(priors: CoOccurrencePriors, path) -> None:
    doc = {
        "schema": {"names": list(priors.schema.names), "k": priors.k},
        "n": int(priors.n),
        "epsilon": float(priors.epsilon),
        "p": [float(v) for v in priors.p],
        "J": _matrix_to_json(priors.J),
        "C": _matrix_to_json(priors.C),
        "Ctilde": _matrix_to_json(priors.Ctilde),
    }
    # json writes floats with repr(), the shortest text that round-trips bit-exactly
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _read_array(doc: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if key not in doc:
        raise FormatError(f"priors file: missing field '{key}'")
    try:
        arr = np.array(doc[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"priors file: field '{key}' is not numeric: {exc}") from None
    if arr.shape != shape:
        raise SchemaError(f"priors file: field '{key}' has shape {arr.shape}, schema implies {shape}")
    return arr


def load_priors(path) -> CoOccurrencePriors:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"priors file {path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "schema" not in doc:
        raise FormatError(f"priors file {path}: missing field 'schema'")
    try:
        names = doc["schema"]["names"]
    except (KeyError, TypeError):
        raise FormatError(f"priors file {path}: field 'schema.names' missing") from None
    schema = AttributeSchema(tuple(names))
    declared_k = doc["schema"].get("k", schema.k)
    if declared_k != schema.k:
        raise SchemaError(f"priors file {path}: schema.k={declared_k} but {schema.k} names")
    k = schema.k
    for key in ("n", "epsilon"):
        if key not in doc:
            raise FormatError(f"priors file {path}: missing field '{key}'")
    return CoOccurrencePriors(
        schema=schema,
        p=_read_array(doc, "p", (k,)),
        J=_read_array(doc, "J", (k, k)),
        C=_read_array(doc, "C", (k, k)),
        Ctilde=_read_array(doc, "Ctilde", (k, k)),
        n=int(doc["n"]),
        epsilon=float(doc["epsilon"]),
    )


def export_heatmap_csv(priors: CoOccurrencePriors, path) -> None:
    """Write C as a labelled k x k grid (rows: conditioning attribute)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *priors.schema.names])
        for name, row in zip(priors.schema.names, priors.C):
            w.writerow([name, *(repr(float(v)) for v in row)])
