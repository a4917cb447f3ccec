"""Grid tensor construction: masked feature aggregation and max-pooling.

A canvas with n placed objects defines, at every pixel, the average of the
feature vectors of the objects covering that pixel (zero where uncovered).
Max-pooling that C x W x H field down to C x N x N yields the query tensor.

Two implementations are provided. ``build_query_tensor`` never materializes
the full pixel field: within each pooling window the field is piecewise
constant on regions with equal covering-object sets, so the window maximum is
taken over the handful of distinct coverage patterns. The materializing
version is kept as ``build_query_tensor_reference`` and serves as the oracle
in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .canvas import (
    DEFAULT_CANVAS_SIZE,
    DEFAULT_GRID,
    DEFAULT_MAX_OBJECTS,
    Annotation,
    ObjectPlacement,
    QueryCanvas,
)
from .features import DEFAULT_DIM, ClassEmbeddingTable


@dataclass(frozen=True)
class TensorConfig:
    width: int = DEFAULT_CANVAS_SIZE
    height: int = DEFAULT_CANVAS_SIZE
    channels: int = DEFAULT_DIM
    grid: int = DEFAULT_GRID
    max_objects: int = DEFAULT_MAX_OBJECTS


CanvasLike = Union[QueryCanvas, Annotation, Sequence[ObjectPlacement]]


def _extract(source: CanvasLike, config: TensorConfig) -> tuple[list[ObjectPlacement], int, int]:
    if isinstance(source, QueryCanvas):
        return list(source.placements), source.width, source.height
    if isinstance(source, Annotation):
        return list(source.objects), config.width, config.height
    return list(source), config.width, config.height


def window_bounds(size: int, n_grid: int) -> list[int]:
    """Pooling window boundaries: window i covers [bounds[i], bounds[i+1])."""
    return [(i * size) // n_grid for i in range(n_grid + 1)]


def maxpool_to_grid(field: np.ndarray, n_grid: int) -> np.ndarray:
    """Per-channel max over adaptive windows, (C, S, S) -> (C, n_grid, n_grid).

    Window (i, j) spans rows [floor(i*S/n), floor((i+1)*S/n)) and columns
    likewise; with S = 8 * n the windows are uniform 8x8.
    """
    if field.ndim != 3:
        raise ValueError(f"expected a (C, H, W) field, got shape {field.shape}")
    _, h, w = field.shape
    if h != w:
        raise ValueError(f"field must be square, got {h}x{w}")
    if n_grid > w:
        raise ValueError(f"grid size {n_grid} exceeds field size {w}")
    if n_grid == w:
        return field.copy()
    bounds = window_bounds(w, n_grid)
    out = np.empty((field.shape[0], n_grid, n_grid), dtype=field.dtype)
    for i in range(n_grid):
        r0, r1 = bounds[i], bounds[i + 1]
        for j in range(n_grid):
            c0, c1 = bounds[j], bounds[j + 1]
            out[:, i, j] = field[:, r0:r1, c0:c1].max(axis=(1, 2))
    return out


def build_query_tensor(
    source: CanvasLike,
    table: ClassEmbeddingTable,
    config: TensorConfig = TensorConfig(),
) -> np.ndarray:
    """Pooled (C, N, N) tensor for a canvas, annotation, or placement list.

    Per pixel the field is the mean of the covering objects' class vectors
    (the per-object weight is 1/kappa with kappa the covering count); the
    field is then max-pooled per channel to the N x N grid. Grid cells whose
    window meets no object are exactly zero. The same path serves queries and
    mirror-mode image indexing, which is what makes self-retrieval exact.
    """
    placements, width, height = _extract(source, config)
    n = len(placements)
    if n > 63:
        return build_query_tensor_reference(source, table, config)
    features = table.matrix([p.class_label for p in placements]).astype(np.float64)
    n_grid = config.grid
    if n_grid > min(width, height):
        raise ValueError(f"grid size {n_grid} exceeds canvas {width}x{height}")

    mask_field = np.zeros((height, width), dtype=np.uint64)
    for i, p in enumerate(placements):
        c0, c1, r0, r1 = p.bbox.pixel_span(width, height)
        mask_field[r0:r1, c0:c1] |= np.uint64(1 << i)

    row_bounds = window_bounds(height, n_grid)
    col_bounds = window_bounds(width, n_grid)
    channels = table.dim
    out = np.zeros((channels, n_grid, n_grid), dtype=np.float64)
    zero = np.zeros(channels, dtype=np.float64)
    pooled_by_mask: dict[int, np.ndarray] = {0: zero}

    def mask_vector(mask: int) -> np.ndarray:
        vec = pooled_by_mask.get(mask)
        if vec is None:
            members = [i for i in range(n) if mask >> i & 1]
            vec = features[members].sum(axis=0) / len(members)
            pooled_by_mask[mask] = vec
        return vec

    for i in range(n_grid):
        r0, r1 = row_bounds[i], row_bounds[i + 1]
        for j in range(n_grid):
            c0, c1 = col_bounds[j], col_bounds[j + 1]
            masks = np.unique(mask_field[r0:r1, c0:c1])
            if len(masks) == 1 and masks[0] == 0:
                continue
            cell = mask_vector(int(masks[0]))
            for m in masks[1:]:
                cell = np.maximum(cell, mask_vector(int(m)))
            out[:, i, j] = cell
    return out.astype(np.float32)


def build_query_tensor_reference(
    source: CanvasLike,
    table: ClassEmbeddingTable,
    config: TensorConfig = TensorConfig(),
) -> np.ndarray:
    """Naive oracle: materialize the full C x H x W field, then pool it."""
    placements, width, height = _extract(source, config)
    features = table.matrix([p.class_label for p in placements]).astype(np.float64)
    field = np.zeros((table.dim, height, width), dtype=np.float64)
    kappa = np.zeros((height, width), dtype=np.int64)
    for i, p in enumerate(placements):
        c0, c1, r0, r1 = p.bbox.pixel_span(width, height)
        field[:, r0:r1, c0:c1] += features[i][:, None, None]
        kappa[r0:r1, c0:c1] += 1
    covered = kappa > 0
    field[:, covered] /= kappa[covered]
    return maxpool_to_grid(field, config.grid).astype(np.float32)
