"""Canvas geometry and dataset types: boxes, placements, canvases, manifests.

All box coordinates are stored normalized to [0, 1]. Rasterization to pixel
indices happens only where a pixel field is actually built, using the
half-open convention ``[floor(c0 * size), floor(c1 * size))`` with a minimum
span of one pixel, so adjacent boxes never double-count a shared edge and no
box ever produces an empty mask.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_CANVAS_SIZE = 248
DEFAULT_GRID = 31
DEFAULT_MAX_OBJECTS = 16


class CanvasError(ValueError):
    """A canvas, annotation or manifest violated one or more invariants.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized canvas coordinates, x0 < x1, y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        problems = []
        for name, v in (("x0", self.x0), ("y0", self.y0), ("x1", self.x1), ("y1", self.y1)):
            if not (isinstance(v, (int, float)) and np.isfinite(v) and 0.0 <= v <= 1.0):
                problems.append(f"coordinate {name}={v!r} outside [0, 1]")
        if not problems and (self.x1 <= self.x0 or self.y1 <= self.y0):
            problems.append(
                f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1}): "
                "zero or negative extent"
            )
        if problems:
            raise CanvasError(problems)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def pixel_span(self, size_x: int, size_y: int) -> tuple[int, int, int, int]:
        """Half-open pixel rectangle (c0, c1, r0, r1): columns from x, rows from y.

        Guarantees at least one pixel in each direction.
        """
        c0, c1 = _axis_span(self.x0, self.x1, size_x)
        r0, r1 = _axis_span(self.y0, self.y1, size_y)
        return c0, c1, r0, r1

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


def _axis_span(c0: float, c1: float, size: int) -> tuple[int, int]:
    p0 = int(np.floor(c0 * size))
    p1 = int(np.floor(c1 * size))
    p0 = min(p0, size - 1)
    if p1 <= p0:
        p1 = p0 + 1
    p1 = min(p1, size)
    return p0, max(p1, p0 + 1)


@dataclass(frozen=True)
class ObjectPlacement:
    """One class-labeled box on a canvas or in an image annotation."""

    class_label: str
    bbox: BBox

    def __post_init__(self):
        if not isinstance(self.class_label, str) or not self.class_label:
            raise CanvasError(["empty class label"])


@dataclass(frozen=True)
class QueryCanvas:
    """A composition query: a square pixel canvas with placed, labeled boxes.

    Construction does not validate the canvas-level invariants (square,
    divisible by the grid, object count); use :func:`validate_canvas` so all
    violations can be reported together.
    """

    width: int
    height: int
    placements: tuple[ObjectPlacement, ...]

    def __init__(self, width: int, height: int, placements: Iterable[ObjectPlacement]):
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "placements", tuple(placements))


@dataclass(frozen=True)
class Annotation:
    """Ground-truth object set of a corpus image."""

    image_id: str
    objects: tuple[ObjectPlacement, ...]

    def __init__(self, image_id: str, objects: Iterable[ObjectPlacement]):
        object.__setattr__(self, "image_id", str(image_id))
        object.__setattr__(self, "objects", tuple(objects))


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    objects: tuple[ObjectPlacement, ...]
    uri: Optional[str] = None

    def annotation(self) -> Annotation:
        return Annotation(self.image_id, self.objects)


@dataclass
class DatasetManifest:
    """Ordered collection of image records with unique ids."""

    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        dupes = [r.image_id for r in self.records if r.image_id in seen or seen.add(r.image_id)]
        if dupes:
            raise CanvasError([f"duplicate image_id {d!r} in manifest" for d in dupes])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.image_id: r for r in self.records}

    def class_vocabulary(self) -> list[str]:
        return sorted({p.class_label for r in self.records for p in r.objects})


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area of two boxes; 0 when disjoint."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def overlap_count_field(
    placements: Sequence[ObjectPlacement], width: int, height: int
) -> np.ndarray:
    """Per-pixel count of covering boxes; array of shape (height, width).

    Rows index y, columns index x. A pixel (r, c) is covered by a placement
    when it lies inside the placement's half-open pixel rectangle.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"canvas size {width}x{height} must be positive")
    kappa = np.zeros((height, width), dtype=np.int32)
    for p in placements:
        c0, c1, r0, r1 = p.bbox.pixel_span(width, height)
        kappa[r0:r1, c0:c1] += 1
    return kappa


def validate_canvas(
    canvas: QueryCanvas,
    vocabulary: Optional[Iterable[str]] = None,
    *,
    grid: int = DEFAULT_GRID,
    max_objects: int = DEFAULT_MAX_OBJECTS,
) -> QueryCanvas:
    """Return the canvas unchanged when every invariant holds.

    Raises :class:`CanvasError` listing every violation: non-square canvas,
    width not divisible by the pooling grid, empty or oversized placement
    list, and (when a vocabulary is given) unknown class labels.
    """
    problems = []
    if canvas.width != canvas.height:
        problems.append(f"canvas must be square, got {canvas.width}x{canvas.height}")
    if canvas.width <= 0:
        problems.append(f"canvas width {canvas.width} must be positive")
    elif canvas.width % grid != 0:
        problems.append(f"canvas width {canvas.width} not divisible by grid size {grid}")
    if len(canvas.placements) < 1:
        problems.append("at least one object placement required")
    if len(canvas.placements) > max_objects:
        problems.append(f"{len(canvas.placements)} placements exceed maximum {max_objects}")
    if vocabulary is not None:
        vocab = set(vocabulary)
        for p in canvas.placements:
            if p.class_label not in vocab:
                problems.append(f"unknown class {p.class_label!r}")
    if problems:
        raise CanvasError(problems)
    return canvas


# ---------------------------------------------------------------------------
# JSON shapes.  A placement object is {"class": ..., "bbox": [x0, y0, x1, y1]}
# everywhere: manifest lines, query files, and /query request bodies.
# ---------------------------------------------------------------------------


def placement_to_obj(p: ObjectPlacement) -> dict:
    return {"class": p.class_label, "bbox": p.bbox.as_list()}


def placement_from_obj(obj: dict, where: str = "object") -> ObjectPlacement:
    problems = []
    if not isinstance(obj, dict):
        raise CanvasError([f"{where}: expected an object, got {type(obj).__name__}"])
    label = obj.get("class")
    if not isinstance(label, str) or not label:
        problems.append(f"{where}.class: missing or empty")
    raw = obj.get("bbox")
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        problems.append(f"{where}.bbox: expected [x0, y0, x1, y1]")
    if problems:
        raise CanvasError(problems)
    try:
        box = BBox(*[float(v) for v in raw])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CanvasError):
            raise CanvasError([f"{where}.bbox: {p}" for p in exc.problems]) from None
        raise CanvasError([f"{where}.bbox: not numeric"]) from None
    return ObjectPlacement(label, box)


def _parse_placements(raw, where: str) -> list[ObjectPlacement]:
    if not isinstance(raw, list):
        raise CanvasError([f"{where}: expected a list"])
    placements, problems = [], []
    for i, obj in enumerate(raw):
        try:
            placements.append(placement_from_obj(obj, f"{where}[{i}]"))
        except CanvasError as exc:
            problems.extend(exc.problems)
    if problems:
        raise CanvasError(problems)
    return placements


def canvas_to_obj(canvas: QueryCanvas) -> dict:
    return {
        "width": canvas.width,
        "height": canvas.height,
        "objects": [placement_to_obj(p) for p in canvas.placements],
    }


def canvas_from_obj(obj: dict) -> QueryCanvas:
    """Parse a canvas JSON body, reporting every problem found."""
    if not isinstance(obj, dict):
        raise CanvasError(["body: expected a JSON object"])
    problems = []
    width = obj.get("width", DEFAULT_CANVAS_SIZE)
    height = obj.get("height", DEFAULT_CANVAS_SIZE)
    for name, v in (("width", width), ("height", height)):
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            problems.append(f"{name}: expected a positive integer")
    placements: list[ObjectPlacement] = []
    if "objects" not in obj:
        problems.append("objects: missing")
    else:
        try:
            placements = _parse_placements(obj["objects"], "objects")
        except CanvasError as exc:
            problems.extend(exc.problems)
    if problems:
        raise CanvasError(problems)
    return QueryCanvas(width, height, placements)


def annotation_from_obj(obj: dict) -> Annotation:
    if not isinstance(obj, dict):
        raise CanvasError(["record: expected a JSON object"])
    image_id = obj.get("image_id")
    problems = []
    if not isinstance(image_id, str) or not image_id:
        problems.append("image_id: missing or empty")
    objects: list[ObjectPlacement] = []
    try:
        objects = _parse_placements(obj.get("objects", []), "objects")
    except CanvasError as exc:
        problems.extend(exc.problems)
    if problems:
        raise CanvasError(problems)
    return Annotation(image_id, objects)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read a JSON Lines manifest; every record must carry a unique image_id."""
    records, problems = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            try:
                ann = annotation_from_obj(obj)
            except CanvasError as exc:
                problems.extend(f"line {lineno}: {p}" for p in exc.problems)
                continue
            uri = obj.get("uri")
            records.append(ManifestRecord(ann.image_id, ann.objects, uri))
    if problems:
        raise CanvasError(problems)
    if not records:
        raise CanvasError(["manifest contains no records"])
    return DatasetManifest(records)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    lines = []
    for r in manifest.records:
        obj = {"image_id": r.image_id}
        if r.uri is not None:
            obj["uri"] = r.uri
        obj["objects"] = [placement_to_obj(p) for p in r.objects]
        lines.append(json.dumps(obj, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
