"""Per-cluster object distributions and the out-of-distribution predicate.

For each class the learned envelope is a triplet: the set of observed
orientation bins plus the minimum and maximum per-scene instance counts.
A scene is OOD for a class when its count falls below the minimum, above
the maximum, or some instance sits in an orientation bin never observed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import UnknownClassError
from .scenes import Scene

DEFAULT_BIN_WIDTH_DEG = 5.0

BELOW_MIN = "below_min"
ABOVE_MAX = "above_max"
NOVEL_ORIENTATION = "novel_orientation"

OP_INSERT = "insert"
OP_DELETE = "delete"
OP_ROTATE = "rotate"

MODE_OOD = "ood"
MODE_ID = "id"


def n_orientation_bins(bin_width_deg: float) -> int:
    bins = round(360.0 / bin_width_deg)
    if bins < 1 or not math.isclose(bins * bin_width_deg, 360.0, abs_tol=1e-9):
        raise ValueError(f"bin width {bin_width_deg} must evenly divide 360 degrees")
    return bins


def orientation_bin(orientation_deg: float, bin_width_deg: float) -> int:
    bins = n_orientation_bins(bin_width_deg)
    return int((orientation_deg % 360.0) // bin_width_deg) % bins


@dataclass(frozen=True)
class ClassDistribution:
    """Learned envelope for one class: count bounds plus orientation bins."""

    class_label: str
    min_count: int
    max_count: int
    theta_bins: frozenset[int]


@dataclass(frozen=True)
class ClusterDistribution:
    """Envelopes for every class in the universe, over one cluster's scenes."""

    cluster_index: int
    per_class: Mapping[str, ClassDistribution]
    source_scene_ids: tuple[str, ...]
    bin_width_deg: float = DEFAULT_BIN_WIDTH_DEG

    def __getitem__(self, class_label: str) -> ClassDistribution:
        try:
            return self.per_class[class_label]
        except KeyError as exc:
            raise UnknownClassError(class_label) from exc


def learn_distribution(
    scenes: Iterable[Scene],
    class_universe: Iterable[str],
    bin_width_deg: float = DEFAULT_BIN_WIDTH_DEG,
    cluster_index: int = 0,
) -> ClusterDistribution:
    """Learn per-class count bounds and orientation-bin sets over scenes.

    Classes never observed get min = max = 0 and an empty bin set, so even a
    single inserted instance of such a class is OOD.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("scenes must be non-empty")
    n_orientation_bins(bin_width_deg)  # validate early
    labels = sorted(set(class_universe))
    per_class: dict[str, ClassDistribution] = {}
    for label in labels:
        counts = [scene.class_counts.get(label, 0) for scene in scenes]
        bins: set[int] = set()
        for scene in scenes:
            for obj in scene.objects:
                if obj.class_label == label:
                    bins.add(orientation_bin(obj.orientation_deg, bin_width_deg))
        per_class[label] = ClassDistribution(
            class_label=label,
            min_count=min(counts),
            max_count=max(counts),
            theta_bins=frozenset(bins),
        )
    return ClusterDistribution(
        cluster_index=cluster_index,
        per_class=per_class,
        source_scene_ids=tuple(s.scene_id for s in scenes),
        bin_width_deg=bin_width_deg,
    )


@dataclass(frozen=True)
class OodStatus:
    is_ood: bool
    reason: str | None = None


def is_ood(scene: Scene, dist: ClusterDistribution, class_label: str) -> OodStatus:
    """Check the three envelope conditions in order: count below minimum,
    count above maximum, then orientation bin never observed.

    The orientation condition holds when *some* instance of the class sits
    in a bin outside the learned set.
    """
    envelope = dist[class_label]
    count = scene.class_counts.get(class_label, 0)
    if count < envelope.min_count:
        return OodStatus(True, BELOW_MIN)
    if count > envelope.max_count:
        return OodStatus(True, ABOVE_MAX)
    for obj in scene.objects:
        if obj.class_label != class_label:
            continue
        if orientation_bin(obj.orientation_deg, dist.bin_width_deg) not in envelope.theta_bins:
            return OodStatus(True, NOVEL_ORIENTATION)
    return OodStatus(False, None)


def mutation_count(
    count_in_scene: int,
    dist: ClusterDistribution,
    class_label: str,
    op_kind: str,
    surplus_max: int = 2,
    rng: np.random.Generator | None = None,
    distribution_mode: str = MODE_OOD,
) -> int:
    """Number of instances a mutation should touch.

    insert: enough to exceed the cluster maximum, plus a seeded surplus in
    [0, surplus_max]; in ID mode instead a seeded count that keeps the total
    within the envelope (0 when there is no headroom). delete: every
    instance. rotate: one instance.
    """
    if op_kind == OP_DELETE:
        return count_in_scene
    if op_kind == OP_ROTATE:
        return 1
    if op_kind != OP_INSERT:
        raise ValueError(f"unknown op_kind {op_kind!r}")
    envelope = dist[class_label]
    if rng is None:
        rng = np.random.default_rng(0)
    if distribution_mode == MODE_ID:
        headroom = envelope.max_count - count_in_scene
        if headroom < 1:
            return 0
        return int(rng.integers(1, headroom + 1))
    surplus = int(rng.integers(0, surplus_max + 1)) if surplus_max > 0 else 0
    return (envelope.max_count - count_in_scene + 1) + surplus


def distribution_to_json(dist: ClusterDistribution) -> dict:
    return {
        "cluster": dist.cluster_index,
        "classes": {
            label: {
                "min": d.min_count,
                "max": d.max_count,
                "theta_bins": sorted(d.theta_bins),
            }
            for label, d in sorted(dist.per_class.items())
        },
    }


def distribution_from_json(
    data: dict,
    source_scene_ids: tuple[str, ...] = (),
    bin_width_deg: float = DEFAULT_BIN_WIDTH_DEG,
) -> ClusterDistribution:
    per_class = {
        label: ClassDistribution(
            class_label=label,
            min_count=int(entry["min"]),
            max_count=int(entry["max"]),
            theta_bins=frozenset(int(b) for b in entry["theta_bins"]),
        )
        for label, entry in data["classes"].items()
    }
    return ClusterDistribution(
        cluster_index=int(data["cluster"]),
        per_class=per_class,
        source_scene_ids=source_scene_ids,
        bin_width_deg=bin_width_deg,
    )
