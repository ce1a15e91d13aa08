"""Error oracles, per-class error accounting, and violation detection.

Two oracles measure how a subject's detections change between an original
scene and its mutant, always excluding the mutated class itself:

* ground-truth (gt): error = |ood - ref| - |orig - ref| against a reference
  that is the per-class maximum of the dataset ground truth and every
  subject's detections on the original; negative values mean the mutation
  improved detection.
* metamorphic (mt): inclusion errors count objects newly detected in the
  mutant, exclusion errors count objects newly missed; both non-negative.

A class violates fairness when its accumulated error rate strictly exceeds
the mean rate over all included classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .detection import DetectionRecord
from .errors import EmptyAfterFilteringError
from .mutation import MutationSpec
from .scenes import Scene

ORACLE_GT = "gt"
ORACLE_MT = "mt"
ERR_INCLUSION = "inclusion"
ERR_EXCLUSION = "exclusion"

DEFAULT_MIN_CLASS_COUNT = 10


@dataclass(frozen=True)
class OracleReference:
    """Per-class reference counts for one original scene."""

    scene_id: str
    gt_ref: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "gt_ref", dict(self.gt_ref))

    def count(self, class_label: str) -> int:
        return self.gt_ref.get(class_label, 0)


def build_reference(
    scene: Scene,
    gt_counts: Mapping[str, int] | None,
    subject_records: Sequence[DetectionRecord],
) -> OracleReference:
    """Multiset union (per-class maximum) of ground truth and all subjects'
    detections on the original scene."""
    gt = dict(gt_counts if gt_counts is not None else scene.gt_counts)
    ref = dict(gt)
    for record in subject_records:
        if record.scene_id != scene.scene_id:
            raise ValueError(
                f"record for {record.scene_id!r} is not for scene {scene.scene_id!r}"
            )
        for label, count in record.counts.items():
            ref[label] = max(ref.get(label, 0), count)
    return OracleReference(scene.scene_id, ref)


def gt_errors(
    orig: DetectionRecord,
    ood: DetectionRecord,
    ref: OracleReference,
    mutated_class: str,
) -> dict[str, int]:
    """Signed error per reference class: how much farther from the reference
    the mutant's detection moved. The mutated class is excluded."""
    errors: dict[str, int] = {}
    for label, gt_c in ref.gt_ref.items():
        if label == mutated_class:
            continue
        errors[label] = abs(ood.count(label) - gt_c) - abs(orig.count(label) - gt_c)
    return errors


def mt_errors(
    orig: DetectionRecord,
    ood: DetectionRecord,
    mutated_class: str,
    err_type: str,
) -> dict[str, int]:
    """Non-negative count deltas per class: inclusion keeps increases,
    exclusion keeps decreases. The mutated class is excluded."""
    if err_type not in (ERR_INCLUSION, ERR_EXCLUSION):
        raise ValueError(f"unknown err_type {err_type!r}")
    labels = set(orig.counts) | set(ood.counts)
    labels.discard(mutated_class)
    errors: dict[str, int] = {}
    for label in labels:
        delta = ood.count(label) - orig.count(label)
        if err_type == ERR_INCLUSION:
            errors[label] = delta if delta > 0 else 0
        else:
            errors[label] = -delta if delta < 0 else 0
    return errors


# ---------------------------------------------------------------------------
# Accumulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassTally:
    tot_count: int = 0
    err_count: int = 0
    err_image_count: int = 0
    err_image_ids: tuple[str, ...] = ()

    def add(self, tot: int, err: int, image_id: str | None) -> "ClassTally":
        return ClassTally(
            self.tot_count + tot,
            self.err_count + err,
            self.err_image_count + (1 if image_id is not None else 0),
            self.err_image_ids + ((image_id,) if image_id is not None else ()),
        )


@dataclass
class ErrorLedger:
    """Per (subject, op, class) error tallies plus evaluated-pair counts."""

    oracle_mode: str
    err_type: str | None = None
    entries: dict[tuple[str, str], dict[str, ClassTally]] = field(default_factory=dict)
    pairs_evaluated: dict[tuple[str, str], int] = field(default_factory=dict)

    def tally(self, subject_id: str, op_kind: str, class_label: str) -> ClassTally:
        return self.entries.get((subject_id, op_kind), {}).get(class_label, ClassTally())

    def merged(self, other: "ErrorLedger") -> "ErrorLedger":
        if (self.oracle_mode, self.err_type) != (other.oracle_mode, other.err_type):
            raise ValueError("cannot merge ledgers with different oracle settings")
        result = ErrorLedger(self.oracle_mode, self.err_type)
        for source in (self, other):
            for group, classes in source.entries.items():
                bucket = result.entries.setdefault(group, {})
                for label, tally in classes.items():
                    base = bucket.get(label, ClassTally())
                    bucket[label] = ClassTally(
                        base.tot_count + tally.tot_count,
                        base.err_count + tally.err_count,
                        base.err_image_count + tally.err_image_count,
                        base.err_image_ids + tally.err_image_ids,
                    )
            for group, n in source.pairs_evaluated.items():
                result.pairs_evaluated[group] = result.pairs_evaluated.get(group, 0) + n
        return result


def accumulate(
    pairs: Sequence[tuple[DetectionRecord, DetectionRecord, MutationSpec]],
    oracle_mode: str,
    err_type: str = ERR_EXCLUSION,
    references: Mapping[str, OracleReference] | None = None,
) -> ErrorLedger:
    """Fold (original, mutant) detection pairs into an error ledger.

    In gt mode every reference class accumulates its reference count per
    pair; in mt mode a class accumulates (its original detection count and
    the error) only on pairs where it actually erred, matching the oracle's
    conditional difference map.
    """
    if oracle_mode not in (ORACLE_GT, ORACLE_MT):
        raise ValueError(f"unknown oracle_mode {oracle_mode!r}")
    if oracle_mode == ORACLE_GT and references is None:
        raise ValueError("gt oracle requires references")
    ledger = ErrorLedger(oracle_mode, err_type if oracle_mode == ORACLE_MT else None)
    for orig, ood, spec in pairs:
        if orig.subject_id != ood.subject_id:
            raise ValueError("paired records must share a subject")
        group = (orig.subject_id, spec.op_kind)
        bucket = ledger.entries.setdefault(group, {})
        ledger.pairs_evaluated[group] = ledger.pairs_evaluated.get(group, 0) + 1
        if oracle_mode == ORACLE_GT:
            ref = references[orig.scene_id]  # type: ignore[index]
            errors = gt_errors(orig, ood, ref, spec.target_class)
            for label, err in errors.items():
                image_id = ood.scene_id if err > 0 else None
                bucket[label] = bucket.get(label, ClassTally()).add(
                    ref.count(label), err, image_id
                )
        else:
            errors = mt_errors(orig, ood, spec.target_class, err_type)
            for label, err in errors.items():
                if err <= 0:
                    continue
                bucket[label] = bucket.get(label, ClassTally()).add(
                    orig.count(label), err, ood.scene_id
                )
    return ledger


# ---------------------------------------------------------------------------
# Violation detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassStats:
    class_label: str
    tot_count: int
    err_count: int
    err_rate: float | None
    included: bool
    violation: bool
    err_image_count: int
    err_image_ids: tuple[str, ...]


@dataclass(frozen=True)
class GroupReport:
    subject_id: str
    op_kind: str
    class_stats: tuple[ClassStats, ...]
    mean_error_rate: float
    n_classes: int
    n_violations: int
    violation_rate: float
    n_generated: int
    n_error_inducing: int
    error_inducing_ids: tuple[str, ...]
    fairness_error_rate: float

    def violating_classes(self) -> list[str]:
        return [c.class_label for c in self.class_stats if c.violation]


@dataclass(frozen=True)
class FairnessReport:
    oracle_mode: str
    err_type: str | None
    min_class_count: int
    filtering_enabled: bool
    groups: tuple[GroupReport, ...]

    def group(self, subject_id: str, op_kind: str) -> GroupReport:
        for g in self.groups:
            if (g.subject_id, g.op_kind) == (subject_id, op_kind):
                return g
        raise KeyError((subject_id, op_kind))


def detect_violations(
    ledger: ErrorLedger,
    min_class_count: int = DEFAULT_MIN_CLASS_COUNT,
    filtering_enabled: bool = True,
) -> FairnessReport:
    """Flag classes whose error rate strictly exceeds the mean over included
    classes, per (subject, op) group.

    Classes with zero accumulated objects are always excluded (their rate is
    undefined); the prominence filter additionally drops classes with fewer
    than min_class_count objects. An error-inducing input is a mutant that
    contributed a positive error to some violating class. Groups left with
    no includable class report zero rates; when that happens to every group
    the filter removed everything and EmptyAfterFilteringError is raised.
    """
    if not ledger.entries:
        raise ValueError("ledger is empty")
    groups = []
    any_included = False
    for (subject_id, op_kind) in sorted(ledger.entries):
        classes = ledger.entries[(subject_id, op_kind)]
        included: dict[str, float] = {}
        for label, tally in classes.items():
            if tally.tot_count <= 0:
                continue
            if filtering_enabled and tally.tot_count < min_class_count:
                continue
            included[label] = tally.err_count / tally.tot_count
        any_included = any_included or bool(included)
        mean_rate = sum(included.values()) / len(included) if included else 0.0
        stats = []
        for label in sorted(classes):
            tally = classes[label]
            rate = tally.err_count / tally.tot_count if tally.tot_count > 0 else None
            is_included = label in included
            stats.append(
                ClassStats(
                    class_label=label,
                    tot_count=tally.tot_count,
                    err_count=tally.err_count,
                    err_rate=rate,
                    included=is_included,
                    violation=is_included and included[label] > mean_rate,
                    err_image_count=tally.err_image_count,
                    err_image_ids=tally.err_image_ids,
                )
            )
        violations = [s for s in stats if s.violation]
        error_inducing = sorted({i for s in violations for i in s.err_image_ids})
        n_generated = ledger.pairs_evaluated.get((subject_id, op_kind), 0)
        groups.append(
            GroupReport(
                subject_id=subject_id,
                op_kind=op_kind,
                class_stats=tuple(stats),
                mean_error_rate=mean_rate,
                n_classes=len(included),
                n_violations=len(violations),
                violation_rate=len(violations) / len(included) if included else 0.0,
                n_generated=n_generated,
                n_error_inducing=len(error_inducing),
                error_inducing_ids=tuple(error_inducing),
                fairness_error_rate=(
                    len(error_inducing) / n_generated if n_generated else 0.0
                ),
            )
        )
    if not any_included:
        raise EmptyAfterFilteringError(
            "no class passes the prominence filter in any (subject, op) group"
        )
    return FairnessReport(
        oracle_mode=ledger.oracle_mode,
        err_type=ledger.err_type,
        min_class_count=min_class_count,
        filtering_enabled=filtering_enabled,
        groups=tuple(groups),
    )


# ---------------------------------------------------------------------------
# Accuracy comparisons (insertion mutants vs. matched real scenes)
# ---------------------------------------------------------------------------


def insertion_expected_counts(
    gt_data: Mapping[str, int],
    considered_classes: Iterable[str],
    inserted_class: str,
    insert_count: int,
) -> dict[str, int]:
    """Expected per-class counts in an insertion mutant: the original ground
    truth restricted to the considered classes, with the inserted class
    raised by the number of insertions."""
    expected = {label: gt_data.get(label, 0) for label in sorted(considered_classes)}
    if inserted_class in expected:
        expected[inserted_class] = gt_data.get(inserted_class, 0) + insert_count
    return expected


def pair_with_real(
    expected: Mapping[str, int],
    considered_classes: Iterable[str],
    scenes: Sequence[Scene],
    seed: int,
) -> Scene | None:
    """Pick one real scene whose restricted ground truth matches `expected`
    exactly, by a seeded draw over all matches; None when nothing matches."""
    considered = sorted(considered_classes)
    matches = [
        scene
        for scene in scenes
        if {c: scene.gt_counts.get(c, 0) for c in considered}
        == {c: expected.get(c, 0) for c in considered}
    ]
    if not matches:
        return None
    matches.sort(key=lambda s: s.scene_id)
    rng = np.random.default_rng(seed)
    return matches[int(rng.integers(0, len(matches)))]


def counting_accuracy(
    detected: Mapping[str, int], expected: Mapping[str, int]
) -> float:
    """Correctly counted objects over expected objects.

    Per class the correct count is min(detected, expected); classes outside
    the expected map are ignored. An empty expectation is trivially correct.
    """
    total = sum(expected.values())
    if total == 0:
        return 1.0
    correct = sum(min(detected.get(c, 0), n) for c, n in expected.items())
    return correct / total


@dataclass(frozen=True)
class AccuracyPair:
    expected_ood: Mapping[str, int]
    detected_ood: Mapping[str, int]
    expected_ref: Mapping[str, int]
    detected_ref: Mapping[str, int]


@dataclass(frozen=True)
class AccuracyComparison:
    accuracy_ood: float
    accuracy_reference: float
    relative_pct: float | None
    n_pairs: int


def accuracy_comparison(pairs: Sequence[AccuracyPair]) -> AccuracyComparison:
    """Pooled counting accuracy on mutants vs. their matched references."""
    ood_correct = ood_total = ref_correct = ref_total = 0
    for pair in pairs:
        ood_total += sum(pair.expected_ood.values())
        ref_total += sum(pair.expected_ref.values())
        ood_correct += sum(
            min(pair.detected_ood.get(c, 0), n) for c, n in pair.expected_ood.items()
        )
        ref_correct += sum(
            min(pair.detected_ref.get(c, 0), n) for c, n in pair.expected_ref.items()
        )
    acc_ood = ood_correct / ood_total if ood_total else 1.0
    acc_ref = ref_correct / ref_total if ref_total else 1.0
    relative = 100.0 * acc_ood / acc_ref if acc_ref > 0 else None
    return AccuracyComparison(acc_ood, acc_ref, relative, len(pairs))


def image_error_rate(
    record: DetectionRecord,
    ref: OracleReference,
    exclude_class: str | None = None,
) -> float | None:
    """Total absolute count error over total reference objects for one image;
    None when the reference (minus any excluded class) is empty."""
    labels = [c for c in ref.gt_ref if c != exclude_class]
    denom = sum(ref.gt_ref[c] for c in labels)
    if denom <= 0:
        return None
    num = sum(abs(record.count(c) - ref.gt_ref[c]) for c in labels)
    return num / denom


def original_data_baseline(
    records_by_subject: Mapping[str, Sequence[DetectionRecord]],
    references: Mapping[str, OracleReference],
) -> dict:
    """Fairness analysis using only the original dataset: per-class counting
    accuracy against the reference, flagging classes strictly below the mean
    accuracy."""
    result: dict = {}
    for subject_id in sorted(records_by_subject):
        correct: dict[str, int] = {}
        total: dict[str, int] = {}
        for record in records_by_subject[subject_id]:
            ref = references[record.scene_id]
            for label, expected in ref.gt_ref.items():
                total[label] = total.get(label, 0) + expected
                correct[label] = correct.get(label, 0) + min(record.count(label), expected)
        accuracy = {
            label: correct[label] / total[label] for label in total if total[label] > 0
        }
        if not accuracy:
            result[subject_id] = {"class_accuracy": {}, "mean_accuracy": None, "unfair_classes": []}
            continue
        mean_acc = sum(accuracy.values()) / len(accuracy)
        unfair = sorted(label for label, acc in accuracy.items() if acc < mean_acc)
        result[subject_id] = {
            "class_accuracy": {k: accuracy[k] for k in sorted(accuracy)},
            "mean_accuracy": mean_acc,
            "unfair_classes": unfair,
        }
    return result


__all__ = [
    "ORACLE_GT",
    "ORACLE_MT",
    "ERR_INCLUSION",
    "ERR_EXCLUSION",
    "OracleReference",
    "build_reference",
    "gt_errors",
    "mt_errors",
    "ClassTally",
    "ErrorLedger",
    "accumulate",
    "ClassStats",
    "GroupReport",
    "FairnessReport",
    "detect_violations",
    "insertion_expected_counts",
    "pair_with_real",
    "counting_accuracy",
    "AccuracyPair",
    "AccuracyComparison",
    "accuracy_comparison",
    "image_error_rate",
    "original_data_baseline",
]
