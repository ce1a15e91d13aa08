"""Insertion, deletion, and rotation operators over annotated scenes.

Insertion sizes new objects with a per-scene linear perspective model
(reference-object height as a function of vertical position), places them
on ground cells without meaningfully occluding existing objects, and skips
the whole operation when the requested number of placements cannot be
found. Deletion removes every instance of the target class. Rotation turns
one unobstructed instance into an orientation bin never observed in the
cluster. All operators are pure functions of (scene, parameters, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .distribution import (
    MODE_ID,
    MODE_OOD,
    OP_DELETE,
    OP_INSERT,
    OP_ROTATE,
    ClusterDistribution,
    OodStatus,
    is_ood,
    mutation_count,
    n_orientation_bins,
)
from .errors import (
    InsufficientReferencesError,
    NoNovelOrientationError,
    NothingToDeleteError,
    NoUnobstructedInstanceError,
)
from .scenes import (
    GROUND,
    BBox,
    Dataset,
    ObjectInstance,
    Scene,
    SegmentationGrid,
    derive_segmentation,
    rank_by_depth,
)
from .seeding import derive_seed

# Calibration values, not measured ground truth: height of each class
# relative to the reference class at equal depth, and median width/height
# aspect per class. Override via the size-table config file.
DEFAULT_SIZE_RATIOS = {
    "car": 1.0,
    "person": 1.2,
    "truck": 1.6,
    "motorcycle": 0.9,
    "dog": 0.5,
    "cat": 0.35,
    "bird": 0.2,
}
DEFAULT_ASPECT_RATIOS = {
    "car": 2.0,
    "person": 0.4,
    "truck": 2.4,
    "motorcycle": 1.4,
    "dog": 1.3,
    "cat": 1.1,
    "bird": 1.2,
}

DEFAULT_OCCLUSION_THRESHOLD = 0.15
DEFAULT_MAX_ATTEMPTS = 50

SKIP_NO_FEASIBLE_PLACEMENT = "no_feasible_placement"
SKIP_INSUFFICIENT_REFERENCES = "insufficient_references"
SKIP_MISSING_SIZE_RATIO = "missing_size_ratio"
SKIP_NOTHING_TO_DELETE = "nothing_to_delete"
SKIP_NO_UNOBSTRUCTED = "no_unobstructed_instance"
SKIP_NO_NOVEL_ORIENTATION = "no_novel_orientation"
SKIP_ID_RANGE_EMPTY = "id_range_empty"


@dataclass(frozen=True)
class RelativeSizeTable:
    """Height of each class relative to a reference class at equal depth."""

    reference_class: str = "car"
    ratios: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIZE_RATIOS))

    def __post_init__(self):
        object.__setattr__(self, "ratios", dict(self.ratios))
        if self.ratios.get(self.reference_class) != 1.0:
            raise ValueError(f"ratios[{self.reference_class!r}] must be 1.0")
        if any(r <= 0 for r in self.ratios.values()):
            raise ValueError("all size ratios must be positive")


@dataclass(frozen=True)
class MutationSpec:
    op_kind: str
    target_class: str
    count: int
    seed: int
    source_scene_id: str


@dataclass(frozen=True)
class MutationResult:
    """A planned mutation plus its outcome.

    skipped results carry no mutant; successful ones record exactly which
    instance ids were inserted, removed, or rotated, and the mutant's OOD
    status against the cluster distribution the mutation targeted.
    """

    spec: MutationSpec
    mutant: Scene | None
    inserted_ids: tuple[str, ...] = ()
    removed_ids: tuple[str, ...] = ()
    rotated_ids: tuple[str, ...] = ()
    ood: OodStatus | None = None
    skipped: bool = False
    skip_reason: str | None = None
    iteration: int = 0


@dataclass(frozen=True)
class ScalingModel:
    """Reference-class height as a linear function of bbox bottom y."""

    height_at_mid: float
    slope: float
    mid_y: float

    def reference_height(self, bottom_y: float) -> float:
        return self.height_at_mid + self.slope * (bottom_y - self.mid_y)


def compute_scaling_factor(scene: Scene, table: RelativeSizeTable) -> ScalingModel:
    """Fit the perspective line over (bottom y, reference-equivalent height).

    Every object with a size ratio contributes its height divided by the
    ratio; a least-squares line is fit and evaluated at mid-canvas.
    """
    points = [
        (float(obj.bbox.bottom), obj.bbox.h / table.ratios[obj.class_label])
        for obj in scene.objects
        if obj.class_label in table.ratios
    ]
    ys = {y for y, _ in points}
    if len(points) < 2 or len(ys) < 2:
        raise InsufficientReferencesError(
            f"scene {scene.scene_id}: need >=2 sized objects at distinct depths"
        )
    y_arr = np.array([y for y, _ in points])
    h_arr = np.array([h for _, h in points])
    slope, intercept = np.polyfit(y_arr, h_arr, 1)
    mid_y = scene.canvas[1] / 2.0
    return ScalingModel(
        height_at_mid=float(intercept + slope * mid_y),
        slope=float(slope),
        mid_y=mid_y,
    )


def _covered_columns(grid: SegmentationGrid, box: BBox) -> tuple[int, int]:
    cw, _ = grid.canvas
    c0 = int(np.ceil(box.x * grid.cols / cw - 0.5))
    c1 = int(np.ceil(box.right * grid.cols / cw - 0.5))
    return max(0, c0), min(grid.cols, c1)


def _bottom_row_on_ground(grid: SegmentationGrid, box: BBox) -> bool:
    """All cells under the bbox's bottom edge row must be labeled ground."""
    c0, c1 = _covered_columns(grid, box)
    if c0 >= c1:
        return False
    _, row = grid.cell_of_point(box.x, box.bottom - 0.5)
    return all(grid.label_at(c, row) == GROUND for c in range(c0, c1))


def _paint_non_ground(grid: SegmentationGrid, box: BBox) -> None:
    cw, ch = grid.canvas
    c0, c1 = _covered_columns(grid, box)
    r0 = max(0, int(np.ceil(box.y * grid.rows / ch - 0.5)))
    r1 = min(grid.rows, int(np.ceil(box.bottom * grid.rows / ch - 0.5)))
    if c0 < c1 and r0 < r1:
        grid.cells[r0:r1, c0:c1] = 0  # background index


def _fresh_instance_id(existing: set[str], class_label: str, index: int) -> str:
    candidate = f"ins-{class_label}-{index}"
    bump = 0
    while candidate in existing:
        bump += 1
        candidate = f"ins-{class_label}-{index}-{bump}"
    return candidate


def insert_objects(
    scene: Scene,
    dist: ClusterDistribution,
    class_label: str,
    count: int,
    table: RelativeSizeTable,
    seed: int,
    aspect_ratios: Mapping[str, float] | None = None,
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    segmentation_resolution: tuple[int, int] | None = None,
    mutant_id: str | None = None,
) -> MutationResult:
    """Insert `count` objects of the class onto ground, sized by perspective.

    Skips the whole operation (no partial mutants) when the scaling model
    cannot be fit or any placement fails within max_attempts candidates.
    """
    aspects = dict(DEFAULT_ASPECT_RATIOS if aspect_ratios is None else aspect_ratios)
    spec = MutationSpec(OP_INSERT, class_label, max(count, 1), seed, scene.scene_id)
    if class_label not in table.ratios:
        return MutationResult(spec, None, skipped=True, skip_reason=SKIP_MISSING_SIZE_RATIO)
    try:
        model = compute_scaling_factor(scene, table)
    except InsufficientReferencesError:
        return MutationResult(spec, None, skipped=True, skip_reason=SKIP_INSUFFICIENT_REFERENCES)
    ratio = table.ratios[class_label]
    aspect = aspects.get(class_label, 1.0)
    cw, ch = scene.canvas
    rng = np.random.default_rng(seed)
    theta = sorted(dist[class_label].theta_bins)
    objects = list(scene.objects)
    existing_ids = {o.instance_id for o in scene.objects}
    grid = derive_segmentation(scene, segmentation_resolution)
    inserted: list[ObjectInstance] = []
    for j in range(count):
        placed = None
        for _ in range(max_attempts):
            bottom_y = int(rng.integers(1, ch + 1))
            height = int(round(model.reference_height(bottom_y) * ratio))
            width = int(round(height * aspect))
            if height < 1 or width < 1 or width > cw:
                continue
            x = int(rng.integers(0, cw - width + 1))
            box = BBox(x, bottom_y - height, width, height)
            if box.y < 0:
                continue
            if not _bottom_row_on_ground(grid, box):
                continue
            if any(
                box.overlap_over_smaller(o.bbox) > occlusion_threshold for o in objects
            ):
                continue
            placed = box
            break
        if placed is None:
            return MutationResult(
                spec, None, skipped=True, skip_reason=SKIP_NO_FEASIBLE_PLACEMENT
            )
        orientation = 0.0
        if theta:
            orientation = float(theta[int(rng.integers(0, len(theta)))]) * dist.bin_width_deg
        instance = ObjectInstance(
            instance_id=_fresh_instance_id(existing_ids, class_label, j),
            class_label=class_label,
            bbox=placed,
            orientation_deg=orientation,
            depth_rank=0,
        )
        existing_ids.add(instance.instance_id)
        objects.append(instance)
        inserted.append(instance)
        # Mark occupied cells non-ground so later placements cannot sit on
        # this object; the exact label does not matter to the predicate.
        _paint_non_ground(grid, placed)
    gt_counts = _bump_gt(scene.gt_counts, class_label, count)
    mutant = Scene(
        scene_id=mutant_id or f"{scene.scene_id}~ins-{class_label}",
        canvas=scene.canvas,
        ground_regions=scene.ground_regions,
        objects=rank_by_depth(objects),
        gt_counts=gt_counts,
    )
    return MutationResult(
        spec,
        mutant,
        inserted_ids=tuple(o.instance_id for o in inserted),
        ood=is_ood(mutant, dist, class_label),
    )


def _bump_gt(gt_counts: Mapping[str, int], class_label: str, extra: int) -> dict[str, int]:
    updated = dict(gt_counts)
    updated[class_label] = updated.get(class_label, 0) + extra
    return updated


def delete_class(
    scene: Scene,
    class_label: str,
    dist: ClusterDistribution | None = None,
    mutant_id: str | None = None,
) -> MutationResult:
    """Remove every instance of the class; deterministic, no seed.

    The mutant's ground-truth count for the class drops to zero since the
    notional photo no longer contains it.
    """
    victims = scene.instances_of(class_label)
    if not victims:
        raise NothingToDeleteError(f"no {class_label!r} in scene {scene.scene_id}")
    spec = MutationSpec(OP_DELETE, class_label, len(victims), 0, scene.scene_id)
    gt_counts = dict(scene.gt_counts)
    gt_counts[class_label] = 0
    mutant = Scene(
        scene_id=mutant_id or f"{scene.scene_id}~del-{class_label}",
        canvas=scene.canvas,
        ground_regions=scene.ground_regions,
        objects=tuple(o for o in scene.objects if o.class_label != class_label),
        gt_counts=gt_counts,
    )
    ood = is_ood(mutant, dist, class_label) if dist is not None else None
    return MutationResult(
        spec,
        mutant,
        removed_ids=tuple(o.instance_id for o in victims),
        ood=ood,
    )


def unobstructed_instances(
    scene: Scene,
    class_label: str,
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
) -> list[ObjectInstance]:
    """Instances of the class not meaningfully overlapped by nearer objects."""
    result = []
    for obj in scene.instances_of(class_label):
        obstructed = any(
            other.depth_rank > obj.depth_rank
            and obj.bbox.overlap_over_smaller(other.bbox) > occlusion_threshold
            for other in scene.objects
        )
        if not obstructed:
            result.append(obj)
    return result


def rotate_object(
    scene: Scene,
    dist: ClusterDistribution,
    class_label: str,
    seed: int,
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    mutant_id: str | None = None,
) -> MutationResult:
    """Rotate one unobstructed instance into a never-observed orientation bin.

    Box width and height stay unchanged, so counts are untouched and the
    mutant is OOD purely through its novel orientation.
    """
    candidates = sorted(
        unobstructed_instances(scene, class_label, occlusion_threshold),
        key=lambda o: o.instance_id,
    )
    if not candidates:
        raise NoUnobstructedInstanceError(
            f"no unobstructed {class_label!r} in scene {scene.scene_id}"
        )
    bins = n_orientation_bins(dist.bin_width_deg)
    novel = sorted(set(range(bins)) - dist[class_label].theta_bins)
    if not novel:
        raise NoNovelOrientationError(f"theta covers all {bins} bins for {class_label!r}")
    rng = np.random.default_rng(seed)
    target = candidates[int(rng.integers(0, len(candidates)))]
    new_orientation = float(novel[int(rng.integers(0, len(novel)))]) * dist.bin_width_deg
    rotated = ObjectInstance(
        instance_id=target.instance_id,
        class_label=target.class_label,
        bbox=target.bbox,
        orientation_deg=new_orientation,
        depth_rank=target.depth_rank,
    )
    spec = MutationSpec(OP_ROTATE, class_label, 1, seed, scene.scene_id)
    mutant = Scene(
        scene_id=mutant_id or f"{scene.scene_id}~rot-{class_label}",
        canvas=scene.canvas,
        ground_regions=scene.ground_regions,
        objects=tuple(rotated if o.instance_id == target.instance_id else o for o in scene.objects),
        gt_counts=dict(scene.gt_counts),
    )
    return MutationResult(
        spec,
        mutant,
        rotated_ids=(target.instance_id,),
        ood=is_ood(mutant, dist, class_label),
    )


def generate_ood_set(
    dataset: Dataset,
    assignment: Mapping[str, int],
    dists: Mapping[int, ClusterDistribution],
    ops: Sequence[str],
    classes: Mapping[str, Sequence[str]] | Sequence[str],
    seed: int,
    table: RelativeSizeTable | None = None,
    aspect_ratios: Mapping[str, float] | None = None,
    iterations: int = 5,
    surplus_max: int = 2,
    distribution_mode: str = MODE_OOD,
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    segmentation_resolution: tuple[int, int] | None = None,
) -> list[MutationResult]:
    """Attempt one mutant per (operation, class, scene, iteration).

    Deletion runs once per scene (it is deterministic); insertion and
    rotation repeat `iterations` times with distinct derived seeds. In ID
    mode only insertion applies and counts stay within the envelope.
    Failures are recorded as skipped results, never raised.
    """
    table = table or RelativeSizeTable()
    if not isinstance(classes, Mapping):
        classes = {op: list(classes) for op in ops}
    results: list[MutationResult] = []
    for cluster_index in sorted(dists):
        dist = dists[cluster_index]
        cluster_scenes = [
            s for s in dataset.scenes if assignment.get(s.scene_id) == cluster_index
        ]
        for op in ops:
            if distribution_mode == MODE_ID and op != OP_INSERT:
                continue
            for label in classes.get(op, []):
                for scene in cluster_scenes:
                    reps = 1 if op == OP_DELETE else iterations
                    for it in range(reps):
                        mseed = derive_seed(seed, scene.scene_id, op, label, it)
                        results.append(
                            _one_mutation(
                                scene,
                                dist,
                                op,
                                label,
                                mseed,
                                it,
                                table=table,
                                aspect_ratios=aspect_ratios,
                                surplus_max=surplus_max,
                                distribution_mode=distribution_mode,
                                occlusion_threshold=occlusion_threshold,
                                max_attempts=max_attempts,
                                segmentation_resolution=segmentation_resolution,
                            )
                        )
    return results


def _mutant_id(scene_id: str, mode: str, op: str, label: str, iteration: int) -> str:
    prefix = "id-" if mode == MODE_ID else ""
    return f"{scene_id}~{prefix}{op}-{label}-r{iteration}"


def _one_mutation(
    scene: Scene,
    dist: ClusterDistribution,
    op: str,
    label: str,
    mseed: int,
    iteration: int,
    table: RelativeSizeTable,
    aspect_ratios: Mapping[str, float] | None,
    surplus_max: int,
    distribution_mode: str,
    occlusion_threshold: float,
    max_attempts: int,
    segmentation_resolution: tuple[int, int] | None,
) -> MutationResult:
    mutant_id = _mutant_id(scene.scene_id, distribution_mode, op, label, iteration)
    fallback_spec = MutationSpec(op, label, 1, mseed, scene.scene_id)

    def skipped(reason: str) -> MutationResult:
        return MutationResult(
            fallback_spec, None, skipped=True, skip_reason=reason, iteration=iteration
        )

    try:
        if op == OP_INSERT:
            count = mutation_count(
                scene.class_counts.get(label, 0),
                dist,
                label,
                OP_INSERT,
                surplus_max=surplus_max,
                rng=np.random.default_rng(derive_seed(mseed, "count")),
                distribution_mode=distribution_mode,
            )
            if count < 1:
                return skipped(SKIP_ID_RANGE_EMPTY)
            result = insert_objects(
                scene,
                dist,
                label,
                count,
                table,
                mseed,
                aspect_ratios=aspect_ratios,
                occlusion_threshold=occlusion_threshold,
                max_attempts=max_attempts,
                segmentation_resolution=segmentation_resolution,
                mutant_id=mutant_id,
            )
        elif op == OP_DELETE:
            result = delete_class(scene, label, dist=dist, mutant_id=mutant_id)
        elif op == OP_ROTATE:
            result = rotate_object(
                scene,
                dist,
                label,
                mseed,
                occlusion_threshold=occlusion_threshold,
                mutant_id=mutant_id,
            )
        else:
            raise ValueError(f"unknown op {op!r}")
    except NothingToDeleteError:
        return skipped(SKIP_NOTHING_TO_DELETE)
    except NoUnobstructedInstanceError:
        return skipped(SKIP_NO_UNOBSTRUCTED)
    except NoNovelOrientationError:
        return skipped(SKIP_NO_NOVEL_ORIENTATION)
    if result.skipped:
        return MutationResult(
            result.spec,
            None,
            skipped=True,
            skip_reason=result.skip_reason,
            iteration=iteration,
        )
    return MutationResult(
        result.spec,
        result.mutant,
        inserted_ids=result.inserted_ids,
        removed_ids=result.removed_ids,
        rotated_ids=result.rotated_ids,
        ood=result.ood,
        iteration=iteration,
    )
