"""Retrieval evaluation: geometric relevance scoring, mAP, NDCG, P@k.

The relevance of an image to a query is the mean, over the query's boxes, of
the best same-class IoU among the image's boxes. Binarizing at a threshold
(strict inequality) feeds average precision and precision-at-k; the
continuous thresholded score feeds NDCG with linear gains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .canvas import Annotation, DatasetManifest, iou

DEFAULT_TAU = 0.5
DEFAULT_CUTOFF = 200
DEFAULT_P_AT = 20


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    tau: float = DEFAULT_TAU
    cutoff: int = DEFAULT_CUTOFF
    p_at: int = DEFAULT_P_AT

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise MetricsError(f"tau {self.tau} outside (0, 1)")
        if not self.cutoff >= self.p_at >= 1:
            raise MetricsError(f"need cutoff >= p_at >= 1, got {self.cutoff}, {self.p_at}")


def relevance(query_ann: Annotation, image_ann: Annotation) -> float:
    """Mean over query boxes of the best same-class IoU in the image; in [0, 1]."""
    if not query_ann.objects:
        raise MetricsError(f"query {query_ann.image_id!r} has no boxes")
    total = 0.0
    for q in query_ann.objects:
        best = 0.0
        for c in image_ann.objects:
            if c.class_label == q.class_label:
                v = iou(q.bbox, c.bbox)
                if v > best:
                    best = v
        total += best
    return total / len(query_ann.objects)


def binarize(r: float, tau: float = DEFAULT_TAU) -> int:
    """1 when the relevance strictly exceeds the threshold, else 0."""
    return 1 if r > tau else 0


def gain(r: float, tau: float = DEFAULT_TAU) -> float:
    """Continuous NDCG gain: the relevance itself above the threshold, else 0."""
    return r if r > tau else 0.0


def average_precision(
    ranked_binary: Sequence[int], total_relevant: int, cutoff: int | None = None
) -> tuple[float, bool]:
    """AP of a ranked, cutoff-truncated binary relevance list.

    The denominator is min(total relevant in the corpus, cutoff), which keeps
    AP <= 1 and reduces to classic AP whenever the corpus holds no more
    relevant items than the cutoff. Returns (ap, defined); a corpus with no
    relevant image scores 0 with ``defined`` False.
    """
    if cutoff is None:
        cutoff = max(len(ranked_binary), 1)
    if total_relevant <= 0:
        return 0.0, False
    denom = min(total_relevant, cutoff)
    hits = 0
    total = 0.0
    for rank, rel in enumerate(ranked_binary[:cutoff], start=1):
        if rel:
            hits += 1
            total += hits / rank
    return total / denom, True


def ndcg(
    ranked_gains: Sequence[float], corpus_gains: Sequence[float], cutoff: int | None = None
) -> tuple[float, bool]:
    """Discounted cumulative gain over the ranked list, normalized by the
    ideal ordering of the full corpus truncated at the cutoff.

    Linear gains, discount log2(rank + 1). Returns (ndcg, defined); all-zero
    ideal gain yields 0 with ``defined`` False.
    """
    if cutoff is None:
        cutoff = len(ranked_gains)
    ideal = sorted((g for g in corpus_gains), reverse=True)[:cutoff]
    idcg = sum(g / np.log2(rank + 1) for rank, g in enumerate(ideal, start=1))
    if idcg <= 0.0:
        return 0.0, False
    dcg = sum(g / np.log2(rank + 1) for rank, g in enumerate(ranked_gains[:cutoff], start=1))
    return float(dcg / idcg), True


def precision_at_k(ranked_binary: Sequence[int], k: int) -> float:
    """Fraction of the first k ranks that are relevant; short lists count
    missing ranks as irrelevant."""
    if k < 1:
        raise MetricsError(f"k={k} must be >= 1")
    return sum(1 for rel in ranked_binary[:k] if rel) / k


@dataclass
class QueryEval:
    query_id: str
    ap: float
    ndcg: float
    p_at_k: float
    relevant_in_corpus: int
    ap_defined: bool
    ndcg_defined: bool


@dataclass
class EvalReport:
    config: EvalConfig
    per_query: list[QueryEval] = field(default_factory=list)

    @property
    def mean_ap(self) -> float:
        return float(np.mean([q.ap for q in self.per_query])) if self.per_query else 0.0

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean([q.ndcg for q in self.per_query])) if self.per_query else 0.0

    @property
    def mean_p_at_k(self) -> float:
        return float(np.mean([q.p_at_k for q in self.per_query])) if self.per_query else 0.0

    def to_obj(self) -> dict:
        return {
            "config": {"tau": self.config.tau, "cutoff": self.config.cutoff, "p_at": self.config.p_at},
            "mean": {"map": self.mean_ap, "ndcg": self.mean_ndcg, f"p@{self.config.p_at}": self.mean_p_at_k},
            "queries": [
                {
                    "query_id": q.query_id,
                    "ap": q.ap,
                    "ndcg": q.ndcg,
                    f"p@{self.config.p_at}": q.p_at_k,
                    "relevant_in_corpus": q.relevant_in_corpus,
                    "ap_defined": q.ap_defined,
                    "ndcg_defined": q.ndcg_defined,
                }
                for q in self.per_query
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        p_label = f"P@{self.config.p_at}"
        header = f"{'query':<24} {'AP':>8} {'NDCG':>8} {p_label:>8} {'rel':>5}"
        rows = [header, "-" * len(header)]
        for q in self.per_query:
            rows.append(
                f"{q.query_id:<24} {q.ap:>8.4f} {q.ndcg:>8.4f} {q.p_at_k:>8.4f} "
                f"{q.relevant_in_corpus:>5d}"
            )
        rows.append("-" * len(header))
        rows.append(
            f"{'mean':<24} {self.mean_ap:>8.4f} {self.mean_ndcg:>8.4f} {self.mean_p_at_k:>8.4f}"
        )
        return "\n".join(rows)


def evaluate_run(
    queries: Sequence[Annotation],
    corpus: DatasetManifest,
    rankings: Mapping[str, Sequence[str]],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score ranked image-id lists against corpus ground truth.

    ``rankings`` maps each query's id to its ranked image ids (best first);
    the corpus-wide relevance of every image is computed per query so the AP
    denominator and the ideal DCG see items beyond the returned ranking.
    """
    by_id = corpus.by_id()
    report = EvalReport(config)
    for query in queries:
        try:
            ranked_ids = rankings[query.image_id]
        except KeyError:
            raise MetricsError(f"no ranking supplied for query {query.image_id!r}") from None
        unknown = [i for i in ranked_ids if i not in by_id]
        if unknown:
            raise MetricsError(
                f"ranking for query {query.image_id!r} references unknown image ids: "
                f"{unknown[:5]}"
            )
        rel_by_image = {
            image_id: relevance(query, record.annotation()) for image_id, record in by_id.items()
        }
        total_relevant = sum(1 for r in rel_by_image.values() if binarize(r, config.tau))
        top = list(ranked_ids)[: config.cutoff]
        ranked_binary = [binarize(rel_by_image[i], config.tau) for i in top]
        ranked_gains = [gain(rel_by_image[i], config.tau) for i in top]
        corpus_gains = [gain(r, config.tau) for r in rel_by_image.values()]
        ap, ap_defined = average_precision(ranked_binary, total_relevant, config.cutoff)
        nd, nd_defined = ndcg(ranked_gains, corpus_gains, config.cutoff)
        report.per_query.append(
            QueryEval(
                query_id=query.image_id,
                ap=ap,
                ndcg=nd,
                p_at_k=precision_at_k(ranked_binary, config.p_at),
                relevant_in_corpus=total_relevant,
                ap_defined=ap_defined,
                ndcg_defined=nd_defined,
            )
        )
    return report
