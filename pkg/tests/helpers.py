"""Shared fixtures-in-code: canonical worked examples and independent
brute-force oracles used by both the unit tests and the acceptance suite.

The brute-force implementations here are deliberately written as plain
loops over raw counts, independent of the library's code paths, so they can
serve as oracles for the production oracles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from scenefair.detection import DetectionRecord
from scenefair.fairness import OracleReference
from scenefair.mutation import MutationSpec
from scenefair.scenes import BBox, ObjectInstance, Scene, rank_by_depth

# ---------------------------------------------------------------------------
# Scene construction helpers
# ---------------------------------------------------------------------------


def simple_scene(
    scene_id="s0",
    canvas=(320, 200),
    objects=(),
    ground=True,
    gt_extra=None,
):
    """Build a valid scene from (label, bbox-tuple[, orientation]) specs."""
    instances = []
    for i, spec in enumerate(objects):
        label, box = spec[0], spec[1]
        orientation = spec[2] if len(spec) > 2 else 0.0
        instances.append(
            ObjectInstance(
                instance_id=f"{label}-{i}",
                class_label=label,
                bbox=BBox(*box),
                orientation_deg=orientation,
            )
        )
    counts = {}
    for inst in instances:
        counts[inst.class_label] = counts.get(inst.class_label, 0) + 1
    if gt_extra:
        for label, extra in gt_extra.items():
            counts[label] = counts.get(label, 0) + extra
    regions = ()
    if ground:
        top = canvas[1] // 2
        regions = (BBox(0, top, canvas[0], canvas[1] - top),)
    return Scene(scene_id, canvas, regions, rank_by_depth(instances), counts)


# ---------------------------------------------------------------------------
# The paper-reported worked example: three (subject, mutation) rows with
# original/mutant detections and ground truths.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkedRow:
    subject_id: str
    op_kind: str
    mutated_class: str
    orig: DetectionRecord
    ood: DetectionRecord
    gt: dict
    spec: MutationSpec

    @property
    def reference(self) -> OracleReference:
        return OracleReference(self.orig.scene_id, self.gt)


def _row(subject, op, mutated, scene_id, orig_counts, ood_counts, gt):
    return WorkedRow(
        subject_id=subject,
        op_kind=op,
        mutated_class=mutated,
        orig=DetectionRecord(scene_id, subject, orig_counts),
        ood=DetectionRecord(f"{scene_id}~{op}-{mutated}", subject, ood_counts),
        gt=gt,
        spec=MutationSpec(op, mutated, 1, 0, scene_id),
    )


def worked_rows() -> dict[str, WorkedRow]:
    return {
        "ms_insert_cat": _row(
            "MS",
            "insert",
            "cat",
            "img-1",
            {"car": 3, "person": 2, "taxi": 2, "traffic light": 1},
            {"car": 2, "person": 2, "taxi": 2, "traffic light": 1, "cat": 2},
            {"car": 15, "person": 7, "taxi": 2, "traffic light": 5},
        ),
        "aws_delete_person": _row(
            "AWS",
            "delete",
            "person",
            "img-2",
            {"car": 3, "person": 7, "traffic light": 2, "bus": 1},
            {"car": 3, "traffic light": 3, "bus": 2},
            {"car": 8, "person": 12, "traffic light": 3, "bus": 1},
        ),
        "gcp_rotate_person": _row(
            "GCP",
            "rotate",
            "person",
            "img-3",
            {"car": 2, "traffic light": 2},
            {"car": 3, "traffic light": 1, "building": 1},
            {"car": 12, "person": 1, "traffic light": 6, "building": 1},
        ),
    }


# ---------------------------------------------------------------------------
# Independent naive recomputation of the error ledgers
# ---------------------------------------------------------------------------


def naive_tallies(pairs, oracle_mode, err_type=None, references=None):
    """Plain-loop ledger: {(subject, op, class): [tot, err, err_image_ids]}."""
    tallies: dict[tuple[str, str, str], list] = {}

    def bucket(subject, op, label):
        return tallies.setdefault((subject, op, label), [0, 0, []])

    for orig, ood, spec in pairs:
        subject = orig.subject_id
        if oracle_mode == "gt":
            ref = references[orig.scene_id].gt_ref
            for label, gt_c in ref.items():
                if label == spec.target_class:
                    continue
                err = abs(ood.counts.get(label, 0) - gt_c) - abs(
                    orig.counts.get(label, 0) - gt_c
                )
                rec = bucket(subject, spec.op_kind, label)
                rec[0] += gt_c
                rec[1] += err
                if err > 0:
                    rec[2].append(ood.scene_id)
        else:
            for label in set(orig.counts) | set(ood.counts):
                if label == spec.target_class:
                    continue
                delta = ood.counts.get(label, 0) - orig.counts.get(label, 0)
                err = delta if err_type == "inclusion" else -delta
                if err > 0:
                    rec = bucket(subject, spec.op_kind, label)
                    rec[0] += orig.counts.get(label, 0)
                    rec[1] += err
                    rec[2].append(ood.scene_id)
    return tallies


def ledger_as_tallies(ledger):
    """Flatten an ErrorLedger into the naive format for comparison."""
    flat = {}
    for (subject, op), classes in ledger.entries.items():
        for label, tally in classes.items():
            flat[(subject, op, label)] = [
                tally.tot_count,
                tally.err_count,
                list(tally.err_image_ids),
            ]
    return flat


# ---------------------------------------------------------------------------
# Independent Mann-Whitney oracle: U from pairwise comparisons, p from
# explicit enumeration of every group assignment.
# ---------------------------------------------------------------------------


def brute_force_u(sample_a, sample_b) -> float:
    u = 0.0
    for a in sample_a:
        for b in sample_b:
            if a > b:
                u += 1.0
            elif a == b:
                u += 0.5
    return u


def brute_force_p(sample_a, sample_b) -> float:
    pooled = list(sample_a) + list(sample_b)
    n1 = len(sample_a)
    u_obs = brute_force_u(sample_a, sample_b)
    n_le = n_ge = total = 0
    for indices in itertools.combinations(range(len(pooled)), n1):
        chosen = [pooled[i] for i in indices]
        rest = [pooled[i] for i in range(len(pooled)) if i not in set(indices)]
        u = brute_force_u(chosen, rest)
        total += 1
        if u <= u_obs + 1e-9:
            n_le += 1
        if u >= u_obs - 1e-9:
            n_ge += 1
    return min(1.0, 2.0 * min(n_le / total, n_ge / total))
