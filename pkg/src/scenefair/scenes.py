"""Scene representation, dataset ingestion, and derived segmentation grids.

A scene is an annotated image: a canvas, rectangular ground regions
(road/pavement/dirt), object instances with class/box/orientation/depth,
and per-class ground-truth counts. Ground-truth counts may exceed the
number of visible instances (objects cropped or occluded in the notional
photo). All types are immutable after construction and validated on
construction; ingestion rejects malformed scenes instead of repairing them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateSceneIdError,
    EmptyDatasetError,
    MalformedSceneError,
)

GROUND = "ground"
BACKGROUND = "background"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates; y grows downward."""

    x: int
    y: int
    w: int
    h: int

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def intersection_area(self, other: "BBox") -> int:
        dx = min(self.right, other.right) - max(self.x, other.x)
        dy = min(self.bottom, other.bottom) - max(self.y, other.y)
        if dx <= 0 or dy <= 0:
            return 0
        return dx * dy

    def overlap_over_smaller(self, other: "BBox") -> float:
        """Intersection area divided by the smaller box's area."""
        inter = self.intersection_area(other)
        if inter == 0:
            return 0.0
        return inter / min(self.area, other.area)

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.right and self.y <= py < self.bottom


@dataclass(frozen=True)
class ObjectInstance:
    """One annotated object.

    depth_rank orders objects by proximity to the observer: larger means
    nearer. orientation_deg must already be normalized to [0, 360).
    """

    instance_id: str
    class_label: str
    bbox: BBox
    orientation_deg: float = 0.0
    depth_rank: int = 0


@dataclass(frozen=True)
class Scene:
    """Annotated image with ground regions and ground-truth counts."""

    scene_id: str
    canvas: tuple[int, int]
    ground_regions: tuple[BBox, ...]
    objects: tuple[ObjectInstance, ...]
    gt_counts: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "gt_counts", dict(self.gt_counts))
        reason = validate_scene(self)
        if reason is not None:
            raise MalformedSceneError(self.scene_id, reason)

    @property
    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for obj in self.objects:
            counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
        return counts

    def instances_of(self, class_label: str) -> tuple[ObjectInstance, ...]:
        return tuple(o for o in self.objects if o.class_label == class_label)


def validate_scene(scene: Scene) -> str | None:
    """Return a human-readable reason if any scene invariant fails."""
    cw, ch = scene.canvas
    if cw <= 0 or ch <= 0:
        return f"canvas must be positive, got {scene.canvas}"
    for region in scene.ground_regions:
        if region.w <= 0 or region.h <= 0:
            return f"ground region has non-positive size: {region}"
        if region.x < 0 or region.y < 0 or region.right > cw or region.bottom > ch:
            return f"ground region extends past canvas: {region}"
    seen_ids: set[str] = set()
    for obj in scene.objects:
        if obj.instance_id in seen_ids:
            return f"duplicate instance_id {obj.instance_id!r}"
        seen_ids.add(obj.instance_id)
        box = obj.bbox
        if box.w <= 0 or box.h <= 0:
            return f"{obj.instance_id}: bbox must have positive size"
        if box.x < 0 or box.y < 0 or box.right > cw or box.bottom > ch:
            return f"{obj.instance_id}: bbox extends past canvas"
        if not (0.0 <= obj.orientation_deg < 360.0):
            return f"{obj.instance_id}: orientation {obj.orientation_deg} not in [0, 360)"
    counts: dict[str, int] = {}
    for obj in scene.objects:
        counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
    for label, n in counts.items():
        if label not in scene.gt_counts:
            return f"gt_counts missing entry for class {label!r}"
        if scene.gt_counts[label] < n:
            return f"gt_counts[{label!r}] = {scene.gt_counts[label]} < {n} instances"
    for label, n in scene.gt_counts.items():
        if n < 0:
            return f"gt_counts[{label!r}] is negative"
    return None


@dataclass(frozen=True)
class Dataset:
    """All ingested scenes plus the class universe they draw labels from."""

    scenes: tuple[Scene, ...]
    class_universe: frozenset[str]

    def scene_by_id(self, scene_id: str) -> Scene:
        for scene in self.scenes:
            if scene.scene_id == scene_id:
                return scene
        raise KeyError(scene_id)


# ---------------------------------------------------------------------------
# JSON serialization (schema documented in the README)
# ---------------------------------------------------------------------------


def scene_to_json(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "canvas": {"width": scene.canvas[0], "height": scene.canvas[1]},
        "ground_regions": [
            {"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in scene.ground_regions
        ],
        "objects": [
            {
                "instance_id": o.instance_id,
                "class": o.class_label,
                "bbox": {"x": o.bbox.x, "y": o.bbox.y, "w": o.bbox.w, "h": o.bbox.h},
                "orientation_deg": o.orientation_deg,
                "depth_rank": o.depth_rank,
            }
            for o in scene.objects
        ],
        "gt_counts": {k: scene.gt_counts[k] for k in sorted(scene.gt_counts)},
    }


def scene_from_json(data: dict, source: str = "<memory>") -> Scene:
    try:
        canvas = (int(data["canvas"]["width"]), int(data["canvas"]["height"]))
        regions = tuple(
            BBox(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"]))
            for r in data.get("ground_regions", [])
        )
        objects = tuple(
            ObjectInstance(
                instance_id=str(o["instance_id"]),
                class_label=str(o["class"]),
                bbox=BBox(
                    int(o["bbox"]["x"]),
                    int(o["bbox"]["y"]),
                    int(o["bbox"]["w"]),
                    int(o["bbox"]["h"]),
                ),
                orientation_deg=float(o.get("orientation_deg", 0.0)),
                depth_rank=int(o.get("depth_rank", 0)),
            )
            for o in data.get("objects", [])
        )
        gt_counts = {str(k): int(v) for k, v in data.get("gt_counts", {}).items()}
        scene_id = str(data["scene_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedSceneError(source, f"bad schema: {exc!r}") from exc
    try:
        return Scene(scene_id, canvas, regions, objects, gt_counts)
    except MalformedSceneError as exc:
        raise MalformedSceneError(source, exc.reason) from exc


def canonical_json(data: object) -> str:
    """Stable JSON encoding used for digests and cache keys."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def scene_digest(scene: Scene) -> str:
    return hashlib.sha256(canonical_json(scene_to_json(scene)).encode()).hexdigest()


def write_scene(scene: Scene, path: Path) -> None:
    path.write_text(json.dumps(scene_to_json(scene), indent=2, sort_keys=True))


def ingest_dataset(path: str | Path) -> Dataset:
    """Load every *.json scene file under `path` into a validated Dataset.

    Rejects the whole dataset on the first malformed scene or duplicate
    scene_id; never repairs.
    """
    root = Path(path)
    files = sorted(root.glob("*.json"))
    if not files:
        raise EmptyDatasetError(f"no scene files in {root}")
    scenes: list[Scene] = []
    seen: set[str] = set()
    for file in files:
        try:
            data = json.loads(file.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedSceneError(str(file), f"unreadable JSON: {exc}") from exc
        scene = scene_from_json(data, source=str(file))
        if scene.scene_id in seen:
            raise DuplicateSceneIdError(scene.scene_id)
        seen.add(scene.scene_id)
        scenes.append(scene)
    universe: set[str] = set()
    for scene in scenes:
        universe.update(o.class_label for o in scene.objects)
        universe.update(scene.gt_counts)
    return Dataset(tuple(scenes), frozenset(universe))


# ---------------------------------------------------------------------------
# Segmentation grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SegmentationGrid:
    """Per-cell class labeling derived from annotations.

    Each cell takes the label of the nearest (max depth_rank) object whose
    bbox contains the cell center, else "ground" when the center falls in a
    ground region, else "background". Equal depth_rank ties resolve to the
    later object in the scene's object list.
    """

    cols: int
    rows: int
    labels: tuple[str, ...]
    cells: np.ndarray = field(repr=False)  # int16 index into labels, shape (rows, cols)
    canvas: tuple[int, int] = (0, 0)

    def label_at(self, col: int, row: int) -> str:
        return self.labels[int(self.cells[row, col])]

    def cell_of_point(self, px: float, py: float) -> tuple[int, int]:
        """Cell (col, row) containing a canvas point."""
        cw, ch = self.canvas
        col = min(self.cols - 1, max(0, int(px * self.cols / cw)))
        row = min(self.rows - 1, max(0, int(py * self.rows / ch)))
        return col, row

    def label_counts(self) -> dict[str, int]:
        idx, counts = np.unique(self.cells, return_counts=True)
        return {self.labels[int(i)]: int(c) for i, c in zip(idx, counts)}


def _paint_boxes(grid: np.ndarray, value: int, box: BBox, canvas: tuple[int, int]) -> None:
    """Set cells whose centers fall inside `box`."""
    rows, cols = grid.shape
    cw, ch = canvas
    # cell center (c + 0.5) * cw / cols lies in [box.x, box.right)
    c0 = int(np.ceil(box.x * cols / cw - 0.5))
    c1 = int(np.ceil(box.right * cols / cw - 0.5))
    r0 = int(np.ceil(box.y * rows / ch - 0.5))
    r1 = int(np.ceil(box.bottom * rows / ch - 0.5))
    c0, c1 = max(0, c0), min(cols, c1)
    r0, r1 = max(0, r0), min(rows, r1)
    if c0 < c1 and r0 < r1:
        grid[r0:r1, c0:c1] = value


def derive_segmentation(
    scene: Scene, resolution: tuple[int, int] | None = None
) -> SegmentationGrid:
    """Label every grid cell; deterministic and total for valid scenes.

    resolution defaults to the canvas size (one cell per pixel).
    """
    cols, rows = resolution if resolution is not None else scene.canvas
    if cols < 1 or rows < 1:
        raise ValueError(f"resolution must be >= (1,1), got {(cols, rows)}")
    labels: list[str] = [BACKGROUND, GROUND]
    label_index = {BACKGROUND: 0, GROUND: 1}
    grid = np.zeros((rows, cols), dtype=np.int16)
    for region in scene.ground_regions:
        _paint_boxes(grid, 1, region, scene.canvas)
    # Paint farthest first so nearer objects overwrite; stable order for ties.
    order = sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].depth_rank, i))
    for i in order:
        obj = scene.objects[i]
        if obj.class_label not in label_index:
            label_index[obj.class_label] = len(labels)
            labels.append(obj.class_label)
        _paint_boxes(grid, label_index[obj.class_label], obj.bbox, scene.canvas)
    return SegmentationGrid(cols, rows, tuple(labels), grid, scene.canvas)


def instance_visibility(scene: Scene) -> dict[str, float]:
    """Fraction of each instance's bbox not covered by nearer objects.

    Computed on a canvas-resolution paint grid: instances are painted in
    depth order and the surviving cell share of each bbox is its visibility.
    Instances whose bbox covers no cell count as fully occluded.
    """
    cw, ch = scene.canvas
    grid = np.full((ch, cw), -1, dtype=np.int32)
    order = sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].depth_rank, i))
    for i in order:
        _paint_boxes(grid, i, scene.objects[i].bbox, scene.canvas)
    visible: dict[str, float] = {}
    for i, obj in enumerate(scene.objects):
        total = obj.bbox.area
        if total == 0:
            visible[obj.instance_id] = 0.0
            continue
        box = obj.bbox
        window = grid[box.y : box.bottom, box.x : box.right]
        visible[obj.instance_id] = float(np.count_nonzero(window == i)) / total
    return visible


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def class_count_vector(scene: Scene, class_universe: Sequence[str]) -> np.ndarray:
    """Per-class instance counts in the fixed universe order."""
    counts = scene.class_counts
    return np.array([counts.get(label, 0) for label in class_universe], dtype=np.int64)


def rank_by_depth(objects: Iterable[ObjectInstance]) -> tuple[ObjectInstance, ...]:
    """Reassign dense 1-based depth ranks ordered by (bbox bottom, instance_id).

    Smaller bottom edge = farther from the observer = lower rank.
    """
    objects = list(objects)
    ordered = sorted(objects, key=lambda o: (o.bbox.bottom, o.instance_id))
    rank_of = {o.instance_id: rank for rank, o in enumerate(ordered, start=1)}
    return tuple(
        ObjectInstance(
            o.instance_id, o.class_label, o.bbox, o.orientation_deg, rank_of[o.instance_id]
        )
        for o in objects
    )


# ---------------------------------------------------------------------------
# COCO-style import
# ---------------------------------------------------------------------------


def scenes_from_coco(coco_path: str | Path) -> list[Scene]:
    """Map a COCO-style annotation file into scenes.

    Orientation defaults to 0; depth ranks follow bbox bottom edges. COCO
    has no ground-region concept, so imported scenes carry none (deletion
    and rotation work; insertion will find no feasible placement).
    """
    data = json.loads(Path(coco_path).read_text())
    categories = {c["id"]: str(c["name"]) for c in data.get("categories", [])}
    by_image: dict[int, list[dict]] = {}
    for ann in data.get("annotations", []):
        by_image.setdefault(int(ann["image_id"]), []).append(ann)
    scenes = []
    for image in data.get("images", []):
        image_id = int(image["id"])
        canvas = (int(image["width"]), int(image["height"]))
        objects = []
        for ann in by_image.get(image_id, []):
            x, y, w, h = (int(round(v)) for v in ann["bbox"])
            w, h = max(1, w), max(1, h)
            x = min(max(0, x), canvas[0] - w)
            y = min(max(0, y), canvas[1] - h)
            objects.append(
                ObjectInstance(
                    instance_id=f"a{ann['id']}",
                    class_label=categories.get(ann["category_id"], str(ann["category_id"])),
                    bbox=BBox(x, y, w, h),
                )
            )
        ranked = rank_by_depth(objects)
        gt_counts: dict[str, int] = {}
        for obj in ranked:
            gt_counts[obj.class_label] = gt_counts.get(obj.class_label, 0) + 1
        scenes.append(
            Scene(
                scene_id=str(image.get("file_name", image_id)),
                canvas=canvas,
                ground_regions=(),
                objects=ranked,
                gt_counts=gt_counts,
            )
        )
    return scenes


# ---------------------------------------------------------------------------
# Debug raster
# ---------------------------------------------------------------------------


def _class_color(label: str) -> tuple[int, int, int]:
    digest = hashlib.sha256(label.encode()).digest()
    # Keep colors away from the white background and gray ground.
    return tuple(32 + (b % 160) for b in digest[:3])  # type: ignore[return-value]


def render_ppm(scene: Scene) -> bytes:
    """Render the scene as a binary PPM: white background, gray ground,
    one stable color per class, nearer objects painted over farther ones."""
    cw, ch = scene.canvas
    img = np.full((ch, cw, 3), 255, dtype=np.uint8)
    for region in scene.ground_regions:
        img[region.y : region.bottom, region.x : region.right] = (128, 128, 128)
    order = sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].depth_rank, i))
    for i in order:
        obj = scene.objects[i]
        img[obj.bbox.y : obj.bbox.bottom, obj.bbox.x : obj.bbox.right] = _class_color(
            obj.class_label
        )
    header = f"P6\n{cw} {ch}\n255\n".encode()
    return header + img.tobytes()
