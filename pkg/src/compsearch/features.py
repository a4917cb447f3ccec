"""Per-class appearance vectors.

The engine never runs a CNN: each class label maps to a unit-norm feature
vector. By default vectors are synthesized deterministically from the label
and a seed; a table exported from any offline encoder can be loaded instead.
Query side and index side share one table, so identical placements produce
identical feature contributions on both sides.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .canvas import atomic_write_text
from .linalg import l2_norm

DEFAULT_DIM = 256


class TableError(ValueError):
    """Embedding table file is malformed or inconsistent."""


def embed_class(label: str, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for a class label.

    The label and seed are hashed into the state of a pseudo-random stream of
    standard normals, which is then L2-normalized. Identical (label, dim,
    seed) always yields an identical vector, on any platform.
    """
    if dim < 1:
        raise ValueError(f"dimension {dim} must be >= 1")
    digest = hashlib.sha256(f"{seed}\x1f{label}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    v = rng.standard_normal(dim)
    norm = l2_norm(v)
    while norm < 1e-12:  # unreachable in practice, keeps the contract total
        v = rng.standard_normal(dim)
        norm = l2_norm(v)
    return (v / norm).astype(np.float32)


@dataclass
class ClassEmbeddingTable:
    """Immutable-by-convention map from class label to unit feature vector."""

    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = "synthetic"

    def __post_init__(self):
        for label, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise TableError(
                    f"class {label!r} has dimension {v.shape[0]}, expected {self.dim}"
                )

    def __contains__(self, label: str) -> bool:
        return label in self.vectors

    def __getitem__(self, label: str) -> np.ndarray:
        try:
            return self.vectors[label]
        except KeyError:
            raise KeyError(f"class {label!r} not in embedding table") from None

    def labels(self) -> list[str]:
        return sorted(self.vectors)

    def matrix(self, labels: list[str]) -> np.ndarray:
        """Stack vectors for the given labels into an (n, dim) float32 array."""
        missing = [l for l in labels if l not in self.vectors]
        if missing:
            raise KeyError(f"classes not in embedding table: {sorted(set(missing))}")
        if not labels:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.vectors[l] for l in labels]).astype(np.float32, copy=False)


def synthetic_table(labels, dim: int = DEFAULT_DIM, seed: int = 0) -> ClassEmbeddingTable:
    vectors = {label: embed_class(label, dim, seed) for label in sorted(set(labels))}
    if not vectors:
        raise TableError("no classes")
    return ClassEmbeddingTable(dim, vectors, provenance="synthetic")


def save_embedding_table(table: ClassEmbeddingTable, path: str | os.PathLike) -> None:
    """JSON file {"dim": C, "classes": {label: [f32...]}}; round-trips bit-exactly."""
    obj = {
        "dim": table.dim,
        "classes": {label: [float(x) for x in table.vectors[label]] for label in table.labels()},
    }
    atomic_write_text(path, json.dumps(obj, sort_keys=True))


def _reject_duplicate_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise TableError(f"duplicate label {key!r}")
        seen[key] = value
    return seen


def load_embedding_table(path: str | os.PathLike) -> ClassEmbeddingTable:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise TableError("no classes: file is empty")
    try:
        obj = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise TableError(f"malformed table file: {exc.msg}") from None
    if not isinstance(obj, dict) or "classes" not in obj:
        raise TableError("malformed table file: expected {'dim': ..., 'classes': {...}}")
    classes = obj["classes"]
    if not classes:
        raise TableError("no classes")
    dim = obj.get("dim")
    vectors = {}
    for label, values in classes.items():
        v = np.asarray(values, dtype=np.float32)
        if v.ndim != 1:
            raise TableError(f"class {label!r}: expected a flat vector")
        if dim is None:
            dim = int(v.shape[0])
        if v.shape[0] != dim:
            raise TableError(f"class {label!r} has dimension {v.shape[0]}, expected {dim}")
        norm = l2_norm(v)
        if abs(norm - 1.0) > 1e-4:
            raise TableError(f"class {label!r} is not unit norm (|v| = {norm:.6f})")
        vectors[label] = v
    return ClassEmbeddingTable(int(dim), vectors, provenance="loaded")
