"""End-to-end wiring: canvases and annotations to embeddings, corpora to
indexes, and synthetic desk-scale datasets for exercising the engine.

Mirror mode indexes every corpus image through the same annotation -> tensor
-> encoder path used for queries, which makes self-retrieval exact and lets
the whole engine be verified without any CNN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .canvas import (
    Annotation,
    BBox,
    DatasetManifest,
    ManifestRecord,
    ObjectPlacement,
    QueryCanvas,
    validate_canvas,
)
from .encoder import EncoderWeights, bypass_forward, encoder_forward
from .features import ClassEmbeddingTable
from .tensor import TensorConfig, build_query_tensor

ENCODER_MODES = ("ft", "bypass")

BASE_CLASS_NAMES = (
    "dog", "cat", "car", "tree", "person", "house", "bicycle", "bird",
    "chair", "boat", "horse", "airplane", "cup", "phone", "lamp", "fish",
    "table", "flower", "clock", "book", "guitar", "train", "bridge", "bus",
)


@dataclass(frozen=True)
class EncoderSetup:
    mode: str = "bypass"
    weights: Optional[EncoderWeights] = None

    def __post_init__(self):
        if self.mode not in ENCODER_MODES:
            raise ValueError(f"encoder mode {self.mode!r} not one of {ENCODER_MODES}")
        if self.mode == "ft" and self.weights is None:
            raise ValueError("encoder mode 'ft' requires weights")


def embed_source(
    source: QueryCanvas | Annotation | Sequence[ObjectPlacement],
    table: ClassEmbeddingTable,
    setup: EncoderSetup = EncoderSetup(),
    config: TensorConfig = TensorConfig(),
) -> np.ndarray:
    """Tensor construction plus encoder forward for one canvas or annotation."""
    tensor = build_query_tensor(source, table, config)
    if setup.mode == "ft":
        return encoder_forward(tensor, setup.weights)
    return bypass_forward(tensor)


def embed_canvas(
    canvas: QueryCanvas,
    table: ClassEmbeddingTable,
    setup: EncoderSetup = EncoderSetup(),
    config: TensorConfig = TensorConfig(),
) -> np.ndarray:
    validate_canvas(
        canvas, table.labels(), grid=config.grid, max_objects=config.max_objects
    )
    return embed_source(canvas, table, setup, config)


def corpus_embeddings(
    manifest: DatasetManifest,
    table: ClassEmbeddingTable,
    setup: EncoderSetup = EncoderSetup(),
    config: TensorConfig = TensorConfig(),
) -> tuple[list[str], np.ndarray]:
    """Mirror-mode embeddings for every manifest record, in manifest order."""
    ids, rows = [], []
    for record in manifest:
        ids.append(record.image_id)
        rows.append(embed_source(record.annotation(), table, setup, config))
    return ids, np.stack(rows)


def generate_synthetic_manifest(
    num_classes: int,
    num_images: int,
    seed: int,
    min_objects: int = 1,
    max_objects: int = 3,
    min_side: float = 0.2,
    max_side: float = 0.6,
) -> DatasetManifest:
    """Seeded random corpus: 1-3 objects per image (uniform count), box sides
    uniform in [0.2, 0.6], boxes placed fully inside the canvas."""
    if num_classes < 1 or num_images < 1:
        raise ValueError("need at least one class and one image")
    vocab = synthetic_class_names(num_classes)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_images):
        count = int(rng.integers(min_objects, max_objects + 1))
        objects = []
        for _ in range(count):
            w = float(rng.uniform(min_side, max_side))
            h = float(rng.uniform(min_side, max_side))
            x0 = float(rng.uniform(0.0, 1.0 - w))
            y0 = float(rng.uniform(0.0, 1.0 - h))
            label = vocab[int(rng.integers(len(vocab)))]
            objects.append(ObjectPlacement(label, BBox(x0, y0, x0 + w, y0 + h)))
        records.append(ManifestRecord(f"img-{i:05d}", tuple(objects), uri=None))
    return DatasetManifest(records)


def synthetic_class_names(num_classes: int) -> list[str]:
    names = list(BASE_CLASS_NAMES[:num_classes])
    names.extend(f"class-{i:03d}" for i in range(len(names), num_classes))
    return names


def annotation_canvas(annotation: Annotation, config: TensorConfig = TensorConfig()) -> QueryCanvas:
    """Canvas that mirrors an annotation exactly (for self-retrieval checks)."""
    return QueryCanvas(config.width, config.height, annotation.objects)
