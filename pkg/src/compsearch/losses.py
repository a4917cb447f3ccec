"""Embedding-quality diagnostics: the three training loss terms as pure
functions (no gradients, no optimizer).

The contrastive term is evaluated as a margin hinge over cosine distances
between the pairs, consistent with the similarity term's cosine usage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import l2_norm

DEFAULT_MARGIN = 0.3
LOSS_WEIGHTS = (0.80, 0.15, 0.05)  # similarity, cross-entropy, contrastive


class LossError(ValueError):
    pass


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0 or nb == 0.0:
        raise LossError("cosine undefined for zero vector")
    return float(np.einsum("i,i->", a, b) / (na * nb))


def sim_loss(eq: np.ndarray, ei: np.ndarray) -> float:
    """1 - cos(eq, ei); zero iff the embeddings are positively parallel."""
    return 1.0 - cosine(eq, ei)


def contrastive_loss(
    eq: np.ndarray, ei: np.ndarray, ei_neg: np.ndarray, margin: float = DEFAULT_MARGIN
) -> float:
    """Hinge [margin + d(eq, ei) - d(eq, ei_neg)]+ with d = cosine distance."""
    d_pos = 1.0 - cosine(eq, ei)
    d_neg = 1.0 - cosine(eq, ei_neg)
    return max(0.0, margin + d_pos - d_neg)


def total_loss(sim: float, ce: float, con: float) -> float:
    ws, wc, wn = LOSS_WEIGHTS
    return ws * sim + wc * ce + wn * con


def class_likelihood(present: list[str], vocabulary: list[str]) -> np.ndarray:
    """Uniform likelihood over the classes present in an image.

    Nonnegative, supported only on present classes, and normalized to sum 1.
    """
    if not present:
        raise LossError("image with no classes has no likelihood vector")
    index = {label: i for i, label in enumerate(vocabulary)}
    missing = [c for c in present if c not in index]
    if missing:
        raise LossError(f"classes {sorted(set(missing))} not in vocabulary")
    v = np.zeros(len(vocabulary), dtype=np.float64)
    for label in set(present):
        v[index[label]] = 1.0
    return v / v.sum()


def validate_likelihood(target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64).ravel()
    if (target < 0).any():
        raise LossError("class likelihood has negative entries")
    if abs(float(target.sum()) - 1.0) > 1e-9:
        raise LossError(f"class likelihood sums to {target.sum()!r}, expected 1")
    return target


@dataclass
class ClassifierHead:
    """Flattened index tensor -> hidden units -> class logits (linear maps)."""

    w_hidden: np.ndarray  # (hidden, in_dim)
    b_hidden: np.ndarray  # (hidden,)
    w_out: np.ndarray  # (num_classes, hidden)
    b_out: np.ndarray  # (num_classes,)

    def __post_init__(self):
        hidden, in_dim = self.w_hidden.shape
        num_classes = self.w_out.shape[0]
        if self.b_hidden.shape != (hidden,):
            raise LossError(f"hidden bias shape {self.b_hidden.shape} != ({hidden},)")
        if self.w_out.shape != (num_classes, hidden):
            raise LossError(f"output weights shape {self.w_out.shape} inconsistent")
        if self.b_out.shape != (num_classes,):
            raise LossError(f"output bias shape {self.b_out.shape} != ({num_classes},)")

    @property
    def in_dim(self) -> int:
        return self.w_hidden.shape[1]

    def logits(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.shape[0] != self.in_dim:
            raise LossError(f"input length {flat.shape[0]} != head input {self.in_dim}")
        hidden = self.w_hidden @ flat + self.b_hidden
        return self.w_out @ hidden + self.b_out


def init_head(seed: int, in_dim: int, num_classes: int, hidden: int = 4096) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    return ClassifierHead(
        w_hidden=rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim),
        b_hidden=np.zeros(hidden),
        w_out=rng.standard_normal((num_classes, hidden)) / np.sqrt(hidden),
        b_out=np.zeros(num_classes),
    )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64).ravel()
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def ce_loss(head: ClassifierHead, index_tensor: np.ndarray, target: np.ndarray) -> float:
    """Cross-entropy of the head's prediction against a class likelihood."""
    target = validate_likelihood(target)
    logits = head.logits(np.asarray(index_tensor).ravel())
    if target.shape[0] != logits.shape[0]:
        raise LossError(f"target length {target.shape[0]} != {logits.shape[0]} classes")
    return float(-(target * log_softmax(logits)).sum())
