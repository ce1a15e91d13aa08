"""Synthetic road-scene corpus generator.

Produces annotation-only scenes that look like the datasets the pipeline
expects: a ground band across the lower canvas, objects sized by a linear
perspective model, small per-class orientation sets, and ground-truth
counts that occasionally exceed the visible instances (off-frame objects).
Scenes are valid by construction and deterministic per (seed, index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .mutation import DEFAULT_ASPECT_RATIOS, DEFAULT_SIZE_RATIOS
from .scenes import BBox, Dataset, ObjectInstance, Scene, rank_by_depth, write_scene
from .seeding import rng_for

DEFAULT_CLASS_MIX: dict[str, tuple[int, int]] = {
    "car": (2, 5),
    "person": (1, 4),
    "dog": (0, 2),
    "truck": (0, 1),
}

# Orientations land on 5-degree bin boundaries so learned theta sets stay
# small and rotation always has novel bins available.
DEFAULT_ORIENTATIONS: dict[str, tuple[float, ...]] = {
    "car": (0.0, 180.0),
    "person": (0.0, 90.0, 180.0, 270.0),
    "dog": (0.0, 180.0),
    "truck": (0.0, 180.0),
}


@dataclass(frozen=True)
class CorpusSpec:
    canvas: tuple[int, int] = (320, 200)
    class_mix: Mapping[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_MIX)
    )
    orientations: Mapping[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(DEFAULT_ORIENTATIONS)
    )
    ground_top_fraction: float = 0.55
    horizon_fraction: float = 0.5
    reference_height_at_bottom_fraction: float = 0.22
    extra_gt_probability: float = 0.25
    max_placement_overlap: float = 0.10


def _reference_height(spec: CorpusSpec, bottom_y: float) -> float:
    _, ch = spec.canvas
    horizon = spec.horizon_fraction * ch
    slope = spec.reference_height_at_bottom_fraction * ch / (ch - horizon)
    return slope * (bottom_y - horizon)


def make_scene(index: int, seed: int, spec: CorpusSpec | None = None) -> Scene:
    spec = spec or CorpusSpec()
    cw, ch = spec.canvas
    rng = rng_for("corpus", seed, index)
    ground_top = int(spec.ground_top_fraction * ch)
    ground = BBox(0, ground_top, cw, ch - ground_top)
    objects: list[ObjectInstance] = []
    counts: dict[str, int] = {}
    serial = 0
    for label in sorted(spec.class_mix):
        lo, hi = spec.class_mix[label]
        target = int(rng.integers(lo, hi + 1))
        ratio = DEFAULT_SIZE_RATIOS.get(label, 1.0)
        aspect = DEFAULT_ASPECT_RATIOS.get(label, 1.0)
        placed = 0
        for _ in range(40 * max(target, 1)):
            if placed >= target:
                break
            bottom_y = int(rng.integers(ground_top + 4, ch + 1))
            height = max(3, int(round(_reference_height(spec, bottom_y) * ratio)))
            width = max(2, int(round(height * aspect)))
            if width >= cw or bottom_y - height < 0:
                continue
            x = int(rng.integers(0, cw - width + 1))
            box = BBox(x, bottom_y - height, width, height)
            if any(
                box.overlap_over_smaller(o.bbox) > spec.max_placement_overlap
                for o in objects
            ):
                continue
            # Keep reference objects at distinct depths so the perspective
            # model is always fittable.
            if label == "car" and any(
                o.class_label == "car" and o.bbox.bottom == box.bottom for o in objects
            ):
                continue
            choices = spec.orientations.get(label, (0.0,))
            orientation = float(choices[int(rng.integers(0, len(choices)))])
            objects.append(
                ObjectInstance(
                    instance_id=f"{label}-{serial}",
                    class_label=label,
                    bbox=box,
                    orientation_deg=orientation,
                    depth_rank=0,
                )
            )
            serial += 1
            placed += 1
        if placed:
            counts[label] = placed
    gt_counts = dict(counts)
    for label in list(gt_counts):
        if rng.random() < spec.extra_gt_probability:
            gt_counts[label] += int(rng.integers(1, 4))
    return Scene(
        scene_id=f"scene-{index:04d}",
        canvas=spec.canvas,
        ground_regions=(ground,),
        objects=rank_by_depth(objects),
        gt_counts=gt_counts,
    )


def make_corpus(n_scenes: int, seed: int, spec: CorpusSpec | None = None) -> Dataset:
    spec = spec or CorpusSpec()
    scenes = tuple(make_scene(i, seed, spec) for i in range(n_scenes))
    universe: set[str] = set()
    for scene in scenes:
        universe.update(o.class_label for o in scene.objects)
        universe.update(scene.gt_counts)
    return Dataset(scenes, frozenset(universe))


def write_corpus(dataset: Dataset, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for scene in dataset.scenes:
        path = out / f"{scene.scene_id}.json"
        write_scene(scene, path)
        paths.append(path)
    return paths
