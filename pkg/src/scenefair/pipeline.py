"""Resumable pipeline: ingest, cluster, learn, mutate, detect, analyze, report.

Every stage writes its output under <output_dir>/stages/ and records a
completion marker in the run manifest; a rerun with the same configuration
digest skips completed stages. All randomness fans out from the single
configured seed, so two runs over the same dataset and configuration
produce byte-identical report files (timing lives in its own file and the
manifest, which are the only run-varying outputs).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .clustering import ClusterAssignment, choose_k, cluster_dataset
from .detection import (
    DetectionRecord,
    HttpDetector,
    SimulatedDetector,
    SimulatedDetectorConfig,
    Subject,
    detect_batch,
)
from .distribution import (
    MODE_ID,
    MODE_OOD,
    OP_DELETE,
    OP_INSERT,
    OP_ROTATE,
    ClusterDistribution,
    distribution_from_json,
    distribution_to_json,
    learn_distribution,
)
from .errors import ConfigError, DegenerateSamplesError, EmptyAfterFilteringError, StageError
from .fairness import (
    ERR_EXCLUSION,
    ERR_INCLUSION,
    ORACLE_GT,
    ORACLE_MT,
    ErrorLedger,
    FairnessReport,
    OracleReference,
    accumulate,
    build_reference,
    detect_violations,
    image_error_rate,
    original_data_baseline,
)
from .mutation import (
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_OCCLUSION_THRESHOLD,
    MutationResult,
    MutationSpec,
    RelativeSizeTable,
    generate_ood_set,
)
from .scenes import (
    Dataset,
    Scene,
    canonical_json,
    ingest_dataset,
    scene_from_json,
    scene_to_json,
)
from .seeding import derive_seed
from .stats import mann_whitney_u

STAGES = ("ingest", "cluster", "learn", "mutate", "detect", "analyze", "report")

DEFAULT_DELETE_CLASSES = ("person", "car", "motorcycle", "truck")
DEFAULT_INSERT_CLASSES = ("person", "car", "motorcycle", "truck", "bird", "cat", "dog")


def default_mutable_classes() -> dict[str, tuple[str, ...]]:
    return {
        OP_INSERT: DEFAULT_INSERT_CLASSES,
        OP_DELETE: DEFAULT_DELETE_CLASSES,
        OP_ROTATE: DEFAULT_DELETE_CLASSES,
    }


@dataclass(frozen=True)
class PipelineConfig:
    dataset_dir: str
    output_dir: str
    cache_dir: str | None = None
    seed: int = 0
    k: int | str = "auto"
    k_max: int = 8
    ops: tuple[str, ...] = (OP_INSERT, OP_DELETE, OP_ROTATE)
    mutable_classes: Mapping[str, tuple[str, ...]] = field(
        default_factory=default_mutable_classes
    )
    iterations: int = 5
    oracle_mode: str = ORACLE_MT
    err_type: str = ERR_EXCLUSION
    min_class_count: int = 10
    filtering_enabled: bool = True
    distribution_mode: str = MODE_OOD
    subjects: tuple[Mapping, ...] = ()
    surplus_max: int = 2
    bin_width_deg: float = 5.0
    size_table_path: str | None = None
    parallelism: int = 1
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    segmentation_resolution: tuple[int, int] | None = None
    id_baseline: bool = True

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(
            self,
            "mutable_classes",
            {k: tuple(v) for k, v in dict(self.mutable_classes).items()},
        )
        object.__setattr__(self, "subjects", tuple(dict(s) for s in self.subjects))

    def validate(self) -> None:
        if not self.dataset_dir:
            raise ConfigError("dataset_dir is required")
        if not self.output_dir:
            raise ConfigError("output_dir is required")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        for op in self.ops:
            if op not in (OP_INSERT, OP_DELETE, OP_ROTATE):
                raise ConfigError(f"unknown op {op!r}")
        if self.oracle_mode not in (ORACLE_GT, ORACLE_MT):
            raise ConfigError(f"oracle must be one of gt, mt; got {self.oracle_mode!r}")
        if self.err_type not in (ERR_INCLUSION, ERR_EXCLUSION):
            raise ConfigError(f"err-type must be inclusion or exclusion; got {self.err_type!r}")
        if self.distribution_mode not in (MODE_OOD, MODE_ID):
            raise ConfigError(f"distribution-mode must be ood or id; got {self.distribution_mode!r}")
        if not isinstance(self.k, int) and self.k != "auto":
            raise ConfigError(f"k must be an integer or 'auto'; got {self.k!r}")
        if isinstance(self.k, int) and self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.subjects:
            raise ConfigError("at least one subject is required")
        for spec in self.subjects:
            kind = spec.get("kind")
            if kind not in ("simulated", "http"):
                raise ConfigError(f"subject kind must be simulated or http; got {kind!r}")
            if "subject_id" not in spec:
                raise ConfigError("every subject needs a subject_id")
            if kind == "http" and "endpoint" not in spec:
                raise ConfigError("http subjects need an endpoint")

    # Paths are excluded from the digest: moving a run directory must not
    # invalidate its science, and reports never embed absolute paths.
    def digest(self) -> str:
        payload = self.to_json()
        for key in ("dataset_dir", "output_dir", "cache_dir", "size_table_path"):
            payload.pop(key, None)
        return hashlib.sha256(canonical_json(payload).encode()).hexdigest()

    def to_json(self) -> dict:
        return {
            "dataset_dir": self.dataset_dir,
            "output_dir": self.output_dir,
            "cache_dir": self.cache_dir,
            "seed": self.seed,
            "k": self.k,
            "k_max": self.k_max,
            "ops": list(self.ops),
            "mutable_classes": {k: list(v) for k, v in sorted(self.mutable_classes.items())},
            "iterations": self.iterations,
            "oracle_mode": self.oracle_mode,
            "err_type": self.err_type,
            "min_class_count": self.min_class_count,
            "filtering_enabled": self.filtering_enabled,
            "distribution_mode": self.distribution_mode,
            "subjects": [dict(s) for s in self.subjects],
            "surplus_max": self.surplus_max,
            "bin_width_deg": self.bin_width_deg,
            "size_table_path": self.size_table_path,
            "parallelism": self.parallelism,
            "occlusion_threshold": self.occlusion_threshold,
            "max_attempts": self.max_attempts,
            "segmentation_resolution": (
                list(self.segmentation_resolution)
                if self.segmentation_resolution
                else None
            ),
            "id_baseline": self.id_baseline,
        }

    @staticmethod
    def from_json(data: Mapping) -> "PipelineConfig":
        known = dict(data)
        if "segmentation_resolution" in known and known["segmentation_resolution"]:
            known["segmentation_resolution"] = tuple(known["segmentation_resolution"])
        if "ops" in known:
            known["ops"] = tuple(known["ops"])
        if "subjects" in known:
            known["subjects"] = tuple(known["subjects"])
        unknown = set(known) - set(PipelineConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return PipelineConfig(**known)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def build_subject(spec: Mapping, global_seed: int) -> Subject:
    kind = spec["kind"]
    subject_id = spec["subject_id"]
    if kind == "simulated":
        config = SimulatedDetectorConfig(
            per_class_recall=spec.get("per_class_recall", {}),
            default_recall=spec.get("default_recall", 1.0),
            crowding_penalty=spec.get("crowding_penalty", 0.0),
            crowding_threshold=spec.get("crowding_threshold", 0),
            confusion_pairs={
                k: (v[0], v[1]) for k, v in spec.get("confusion_pairs", {}).items()
            },
            seed=spec.get("seed", derive_seed(global_seed, "subject", subject_id)),
            min_visible_fraction=spec.get("min_visible_fraction", 0.25),
        )
        return SimulatedDetector(subject_id, config)
    return HttpDetector(
        subject_id,
        spec["endpoint"],
        send_raster=spec.get("send_raster", False),
        max_attempts=spec.get("max_attempts", 3),
        backoff_base=spec.get("backoff_base", 0.5),
        timeout=spec.get("timeout", 10.0),
    )


def load_size_table(path: str | None) -> tuple[RelativeSizeTable, dict[str, float] | None]:
    if path is None:
        return RelativeSizeTable(), None
    data = json.loads(Path(path).read_text())
    table = RelativeSizeTable(
        reference_class=data.get("reference_class", "car"),
        ratios=data["ratios"],
    )
    aspects = data.get("aspect_ratios")
    return table, aspects


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


class RunManifest:
    """Per-stage completion markers, counters, and wall-clock timings."""

    def __init__(self, path: Path, config_digest: str):
        self.path = path
        self.data: dict = {"config_digest": config_digest, "stages": {}}
        if path.exists():
            stored = json.loads(path.read_text())
            if stored.get("config_digest") == config_digest:
                self.data = stored

    def completed(self, stage: str) -> bool:
        return self.data["stages"].get(stage, {}).get("completed", False)

    def mark(self, stage: str, wall_s: float, counts: Mapping[str, int]) -> None:
        self.data["stages"][stage] = {
            "completed": True,
            "wall_s": wall_s,
            "counts": dict(counts),
        }
        self.save()

    def mark_failed(self, stage: str, reason: str) -> None:
        self.data["stages"][stage] = {"completed": False, "error": reason}
        self.save()

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True))

    def wall_s(self, stage: str) -> float:
        return float(self.data["stages"].get(stage, {}).get("wall_s", 0.0))


# ---------------------------------------------------------------------------
# Pipeline state and stages
# ---------------------------------------------------------------------------


def _dump_json(path: Path, payload: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _result_to_index_entry(result: MutationResult) -> dict:
    return {
        "mutant_id": result.mutant.scene_id if result.mutant else None,
        "source": result.spec.source_scene_id,
        "op": result.spec.op_kind,
        "class": result.spec.target_class,
        "count": result.spec.count,
        "seed": result.spec.seed,
        "iteration": result.iteration,
        "skipped": result.skipped,
        "skip_reason": result.skip_reason,
        "ood": result.ood.is_ood if result.ood else None,
        "ood_reason": result.ood.reason if result.ood else None,
        "inserted_ids": list(result.inserted_ids),
        "removed_ids": list(result.removed_ids),
        "rotated_ids": list(result.rotated_ids),
    }


@dataclass
class MutantEntry:
    """One generated (or skipped) mutant as reloaded from disk."""

    mutant_id: str | None
    source: str
    op: str
    target_class: str
    count: int
    seed: int
    iteration: int
    skipped: bool
    skip_reason: str | None
    ood: bool | None
    ood_reason: str | None
    scene: Scene | None = None

    @property
    def spec(self) -> MutationSpec:
        return MutationSpec(self.op, self.target_class, max(1, self.count), self.seed, self.source)


class PipelineState:
    """Lazily loads stage outputs so resumed runs skip completed work."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.stages_dir = self.out / "stages"
        self.reports_dir = self.out / "reports"
        self.cache_dir = Path(config.cache_dir) if config.cache_dir else self.out / "cache"
        self._dataset: Dataset | None = None
        self._assignment: ClusterAssignment | None = None
        self._dists: dict[int, ClusterDistribution] | None = None
        self._mutants: list[MutantEntry] | None = None
        self._id_mutants: list[MutantEntry] | None = None
        self._records: dict[tuple[str, str], DetectionRecord] | None = None
        self._analysis: dict | None = None

    # -- ingest --------------------------------------------------------

    def run_ingest(self) -> dict[str, int]:
        dataset = ingest_dataset(self.config.dataset_dir)
        payload = {
            "class_universe": sorted(dataset.class_universe),
            "scenes": [scene_to_json(s) for s in dataset.scenes],
        }
        _dump_json(self.stages_dir / "ingest.json", payload)
        self._dataset = dataset
        return {"scenes": len(dataset.scenes), "classes": len(dataset.class_universe)}

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            data = json.loads((self.stages_dir / "ingest.json").read_text())
            scenes = tuple(scene_from_json(s) for s in data["scenes"])
            self._dataset = Dataset(scenes, frozenset(data["class_universe"]))
        return self._dataset

    # -- cluster -------------------------------------------------------

    def run_cluster(self) -> dict[str, int]:
        config = self.config
        seed = derive_seed(config.seed, "cluster")
        if config.k == "auto":
            k = choose_k(self.dataset, config.k_max, seed)
        else:
            k = int(config.k)
        assignment = cluster_dataset(self.dataset, k, seed)
        _dump_json(
            self.stages_dir / "cluster.json",
            {
                "k": assignment.k,
                "assignments": dict(sorted(assignment.assignments.items())),
                "inertia": assignment.inertia,
            },
        )
        self._assignment = assignment
        return {"k": k}

    @property
    def assignment_map(self) -> dict[str, int]:
        if self._assignment is not None:
            return self._assignment.assignments
        data = json.loads((self.stages_dir / "cluster.json").read_text())
        return {k: int(v) for k, v in data["assignments"].items()}

    # -- learn ---------------------------------------------------------

    def run_learn(self) -> dict[str, int]:
        assignments = self.assignment_map
        dataset = self.dataset
        dists: dict[int, ClusterDistribution] = {}
        for cluster_index in sorted(set(assignments.values())):
            members = [s for s in dataset.scenes if assignments[s.scene_id] == cluster_index]
            dists[cluster_index] = learn_distribution(
                members,
                dataset.class_universe,
                self.config.bin_width_deg,
                cluster_index=cluster_index,
            )
        _dump_json(
            self.stages_dir / "distributions.json",
            {
                "bin_width_deg": self.config.bin_width_deg,
                "clusters": [distribution_to_json(dists[i]) for i in sorted(dists)],
            },
        )
        self._dists = dists
        return {"clusters": len(dists)}

    @property
    def distributions(self) -> dict[int, ClusterDistribution]:
        if self._dists is None:
            data = json.loads((self.stages_dir / "distributions.json").read_text())
            self._dists = {
                int(entry["cluster"]): distribution_from_json(
                    entry, bin_width_deg=data["bin_width_deg"]
                )
                for entry in data["clusters"]
            }
        return self._dists

    # -- mutate --------------------------------------------------------

    def _write_mutants(
        self, results: Sequence[MutationResult], directory: Path, index_name: str
    ) -> dict[str, int]:
        directory.mkdir(parents=True, exist_ok=True)
        for result in results:
            if result.skipped or result.mutant is None:
                continue
            mutant = result.mutant
            _dump_json(directory / f"{mutant.scene_id}.json", scene_to_json(mutant))
            _dump_json(
                directory / f"{mutant.scene_id}.prov.json",
                {
                    "source": result.spec.source_scene_id,
                    "op": result.spec.op_kind,
                    "class": result.spec.target_class,
                    "count": result.spec.count,
                    "seed": result.spec.seed,
                    "iteration": result.iteration,
                    "ood": result.ood.is_ood if result.ood else None,
                    "reason": result.ood.reason if result.ood else None,
                },
            )
        _dump_json(
            self.stages_dir / index_name,
            {"results": [_result_to_index_entry(r) for r in results]},
        )
        generated = sum(1 for r in results if not r.skipped)
        return {"generated": generated, "skipped": len(results) - generated}

    def run_mutate(self) -> dict[str, int]:
        config = self.config
        table, aspects = load_size_table(config.size_table_path)
        common = dict(
            table=table,
            aspect_ratios=aspects,
            surplus_max=config.surplus_max,
            occlusion_threshold=config.occlusion_threshold,
            max_attempts=config.max_attempts,
            segmentation_resolution=config.segmentation_resolution,
        )
        results = generate_ood_set(
            self.dataset,
            self.assignment_map,
            self.distributions,
            config.ops,
            config.mutable_classes,
            derive_seed(config.seed, "mutate"),
            iterations=config.iterations,
            distribution_mode=config.distribution_mode,
            **common,
        )
        counts = self._write_mutants(results, self.stages_dir / "mutants", "mutate.json")
        if self._baseline_active():
            id_results = generate_ood_set(
                self.dataset,
                self.assignment_map,
                self.distributions,
                (OP_INSERT,),
                {OP_INSERT: config.mutable_classes.get(OP_INSERT, ())},
                derive_seed(config.seed, "mutate-id"),
                iterations=1,
                distribution_mode=MODE_ID,
                **common,
            )
            id_counts = self._write_mutants(
                id_results, self.stages_dir / "id_mutants", "mutate_id.json"
            )
            counts["id_generated"] = id_counts["generated"]
            counts["id_skipped"] = id_counts["skipped"]
        return counts

    def _baseline_active(self) -> bool:
        return (
            self.config.id_baseline
            and self.config.distribution_mode == MODE_OOD
            and OP_INSERT in self.config.ops
        )

    def _load_mutants(self, index_name: str, directory: Path) -> list[MutantEntry]:
        data = json.loads((self.stages_dir / index_name).read_text())
        entries = []
        for item in data["results"]:
            entry = MutantEntry(
                mutant_id=item["mutant_id"],
                source=item["source"],
                op=item["op"],
                target_class=item["class"],
                count=item["count"],
                seed=item["seed"],
                iteration=item["iteration"],
                skipped=item["skipped"],
                skip_reason=item["skip_reason"],
                ood=item["ood"],
                ood_reason=item["ood_reason"],
            )
            if entry.mutant_id and not entry.skipped:
                entry.scene = scene_from_json(
                    json.loads((directory / f"{entry.mutant_id}.json").read_text())
                )
            entries.append(entry)
        return entries

    @property
    def mutants(self) -> list[MutantEntry]:
        if self._mutants is None:
            self._mutants = self._load_mutants("mutate.json", self.stages_dir / "mutants")
        return self._mutants

    @property
    def id_mutants(self) -> list[MutantEntry]:
        if self._id_mutants is None:
            if self._baseline_active():
                self._id_mutants = self._load_mutants(
                    "mutate_id.json", self.stages_dir / "id_mutants"
                )
            else:
                self._id_mutants = []
        return self._id_mutants

    # -- detect --------------------------------------------------------

    def run_detect(self) -> dict[str, int]:
        config = self.config
        subjects = [build_subject(s, config.seed) for s in config.subjects]
        scenes: list[Scene] = list(self.dataset.scenes)
        scenes.extend(m.scene for m in self.mutants if m.scene is not None)
        scenes.extend(m.scene for m in self.id_mutants if m.scene is not None)
        outcomes = detect_batch(scenes, subjects, self.cache_dir, config.parallelism)
        lines = []
        failures = 0
        for outcome in outcomes:
            if outcome.record is not None:
                lines.append(canonical_json(outcome.record.to_json()))
            else:
                failures += 1
                lines.append(
                    canonical_json(
                        {
                            "scene_id": outcome.scene_id,
                            "subject_id": outcome.subject_id,
                            "error": outcome.error,
                        }
                    )
                )
        path = self.stages_dir / "detections.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        hits = sum(1 for o in outcomes if o.from_cache)
        return {"records": len(outcomes) - failures, "failures": failures, "cache_hits": hits}

    @property
    def records(self) -> dict[tuple[str, str], DetectionRecord]:
        if self._records is None:
            self._records = {}
            path = self.stages_dir / "detections.jsonl"
            for line in path.read_text().splitlines():
                data = json.loads(line)
                if "error" in data:
                    continue
                record = DetectionRecord.from_json(data)
                self._records[(record.scene_id, record.subject_id)] = record
        return self._records

    # -- analyze -------------------------------------------------------

    def _subject_ids(self) -> list[str]:
        return [s["subject_id"] for s in self.config.subjects]

    def _references(self) -> dict[str, OracleReference]:
        refs = {}
        for scene in self.dataset.scenes:
            originals = [
                self.records[(scene.scene_id, sid)]
                for sid in self._subject_ids()
                if (scene.scene_id, sid) in self.records
            ]
            refs[scene.scene_id] = build_reference(scene, scene.gt_counts, originals)
        return refs

    def _pairs_for(
        self, entries: Sequence[MutantEntry], subject_id: str
    ) -> list[tuple[DetectionRecord, DetectionRecord, MutationSpec]]:
        pairs = []
        for entry in entries:
            if entry.skipped or entry.mutant_id is None:
                continue
            orig = self.records.get((entry.source, subject_id))
            mut = self.records.get((entry.mutant_id, subject_id))
            if orig is None or mut is None:
                continue
            pairs.append((orig, mut, entry.spec))
        return pairs

    def _ledgers_for(
        self,
        entries: Sequence[MutantEntry],
        references: Mapping[str, OracleReference],
    ) -> dict[str, ErrorLedger]:
        config = self.config
        all_pairs = []
        for sid in self._subject_ids():
            all_pairs.extend(self._pairs_for(entries, sid))
        if config.oracle_mode == ORACLE_GT:
            return {"gt": accumulate(all_pairs, ORACLE_GT, references=references)}
        return {
            "mt_exclusion": accumulate(all_pairs, ORACLE_MT, ERR_EXCLUSION),
            "mt_inclusion": accumulate(all_pairs, ORACLE_MT, ERR_INCLUSION),
        }

    def _primary_key(self) -> str:
        if self.config.oracle_mode == ORACLE_GT:
            return "gt"
        return f"mt_{self.config.err_type}"

    def run_analyze(self) -> dict[str, int]:
        config = self.config
        references = self._references()
        ledgers = self._ledgers_for(self.mutants, references)
        reports: dict[str, FairnessReport] = {}
        stubs: dict[str, dict] = {}
        for key, ledger in ledgers.items():
            try:
                reports[key] = detect_violations(
                    ledger, config.min_class_count, config.filtering_enabled
                )
            except EmptyAfterFilteringError:
                # The run's configured oracle must produce a report; the
                # companion error type may legitimately come up empty.
                if key == self._primary_key():
                    raise
                stubs[key] = {"note": "empty after filtering", "groups": []}
        analysis: dict = {
            "oracle_mode": config.oracle_mode,
            "primary": self._primary_key(),
            "references": {
                sid: dict(sorted(ref.gt_ref.items())) for sid, ref in references.items()
            },
            "reports": {
                **{key: report_to_json(rep) for key, rep in reports.items()},
                **stubs,
            },
            "original_data_baseline": original_data_baseline(
                {
                    sid: [
                        self.records[(s.scene_id, sid)]
                        for s in self.dataset.scenes
                        if (s.scene_id, sid) in self.records
                    ]
                    for sid in self._subject_ids()
                },
                references,
            ),
            "error_rate_samples": self._error_rate_samples(references),
        }
        if self._baseline_active():
            analysis["id_baseline"] = self._id_baseline_section(references)
        _dump_json(self.stages_dir / "analysis.json", analysis)
        self._analysis = analysis
        primary = reports[self._primary_key()]
        return {
            "groups": len(primary.groups),
            "violations": sum(g.n_violations for g in primary.groups),
        }

    def _error_rate_samples(self, references: Mapping[str, OracleReference]) -> dict:
        samples: dict = {"originals": {}, "generated": {}, "id": {}}
        for sid in self._subject_ids():
            originals = []
            for scene in self.dataset.scenes:
                record = self.records.get((scene.scene_id, sid))
                if record is None:
                    continue
                rate = image_error_rate(record, references[scene.scene_id])
                if rate is not None:
                    originals.append(rate)
            samples["originals"][sid] = originals
            samples["generated"][sid] = self._mutant_rates(self.mutants, sid, references)
            if self.id_mutants:
                samples["id"][sid] = self._mutant_rates(self.id_mutants, sid, references)
        return samples

    def _mutant_rates(
        self,
        entries: Sequence[MutantEntry],
        subject_id: str,
        references: Mapping[str, OracleReference],
        first_iteration_only: bool = False,
    ) -> list[float]:
        rates = []
        for entry in entries:
            if entry.skipped or entry.mutant_id is None:
                continue
            if first_iteration_only and entry.iteration != 0:
                continue
            record = self.records.get((entry.mutant_id, subject_id))
            if record is None:
                continue
            rate = image_error_rate(
                record, references[entry.source], exclude_class=entry.target_class
            )
            if rate is not None:
                rates.append(rate)
        return rates

    def _id_baseline_section(self, references: Mapping[str, OracleReference]) -> dict:
        """First-iteration OOD insertions vs. the single ID insertion run,
        analyzed without the prominence filter."""
        config = self.config
        ood_inserts_first = [
            e
            for e in self.mutants
            if e.op == OP_INSERT and e.iteration == 0 and not e.skipped
        ]
        section: dict = {
            "n_ood_first_iteration": len(ood_inserts_first),
            "n_id_generated": sum(1 for e in self.id_mutants if not e.skipped),
            "per_subject": {},
        }
        for label, entries in (("ood", ood_inserts_first), ("id", self.id_mutants)):
            ledgers = self._ledgers_for(entries, references)
            key = self._primary_key()
            try:
                report = detect_violations(ledgers[key], filtering_enabled=False)
                by_subject = {
                    g.subject_id: {
                        "fairness_error_rate": g.fairness_error_rate,
                        "violation_rate": g.violation_rate,
                        "n_generated": g.n_generated,
                        "n_error_inducing": g.n_error_inducing,
                    }
                    for g in report.groups
                }
            except (EmptyAfterFilteringError, ValueError):
                by_subject = {}
            for sid, stats in by_subject.items():
                section["per_subject"].setdefault(sid, {})[label] = stats
        return section

    @property
    def analysis(self) -> dict:
        if self._analysis is None:
            self._analysis = json.loads((self.stages_dir / "analysis.json").read_text())
        return self._analysis

    # -- report --------------------------------------------------------

    def run_report(self, manifest: RunManifest) -> dict[str, int]:
        analysis = self.analysis
        dataset_name = Path(self.config.dataset_dir).name
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        report_payload = {
            "dataset": dataset_name,
            "config": {
                k: v
                for k, v in self.config.to_json().items()
                if k not in ("dataset_dir", "output_dir", "cache_dir", "size_table_path")
            },
            "oracle_mode": analysis["oracle_mode"],
            "primary": analysis["primary"],
            "reports": analysis["reports"],
            "original_data_baseline": analysis["original_data_baseline"],
        }
        if "id_baseline" in analysis:
            report_payload["id_baseline"] = analysis["id_baseline"]
        (self.reports_dir / "report.json").write_text(
            json.dumps(report_payload, indent=2, sort_keys=True)
        )
        (self.reports_dir / "report.csv").write_text(
            summary_csv(analysis, dataset_name)
        )
        (self.reports_dir / "per_class.csv").write_text(per_class_csv(analysis))
        (self.reports_dir / "mwu_comparisons.json").write_text(
            json.dumps(mwu_comparisons(analysis), indent=2, sort_keys=True)
        )
        generated = sum(1 for e in self.mutants if not e.skipped)
        timing = {
            "stage_wall_s": {stage: manifest.wall_s(stage) for stage in STAGES},
            "n_generated_inputs": generated,
            "seconds_per_generated_input": (
                sum(manifest.wall_s(s) for s in ("mutate", "detect")) / generated
                if generated
                else None
            ),
        }
        (self.reports_dir / "timing.json").write_text(
            json.dumps(timing, indent=2, sort_keys=True)
        )
        return {"report_files": 5}


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def report_to_json(report: FairnessReport) -> dict:
    return {
        "oracle_mode": report.oracle_mode,
        "err_type": report.err_type,
        "min_class_count": report.min_class_count,
        "filtering_enabled": report.filtering_enabled,
        "groups": [
            {
                "subject_id": g.subject_id,
                "op_kind": g.op_kind,
                "mean_error_rate": g.mean_error_rate,
                "n_classes": g.n_classes,
                "n_violations": g.n_violations,
                "violation_rate": g.violation_rate,
                "n_generated": g.n_generated,
                "n_error_inducing": g.n_error_inducing,
                "fairness_error_rate": g.fairness_error_rate,
                "violating_classes": g.violating_classes(),
                "classes": [
                    {
                        "class": c.class_label,
                        "tot_count": c.tot_count,
                        "err_count": c.err_count,
                        "err_rate": c.err_rate,
                        "included": c.included,
                        "violation": c.violation,
                        "err_image_count": c.err_image_count,
                        "err_image_ids": list(c.err_image_ids),
                    }
                    for c in g.class_stats
                ],
            }
            for g in report.groups
        ],
    }


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def summary_csv(analysis: dict, dataset_name: str) -> str:
    """Table-style summary: one row per (subject, op), plus totals."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    reports = analysis["reports"]
    if analysis["oracle_mode"] == ORACLE_GT:
        writer.writerow(
            [
                "Subject",
                "Dataset",
                "MutationOp",
                "Classes",
                "Violations",
                "ViolationRate",
                "ErrorInputs",
                "GenInputs",
                "FairnessErrorRate",
            ]
        )
        groups = reports["gt"]["groups"]
        for g in groups:
            writer.writerow(
                [
                    g["subject_id"],
                    dataset_name,
                    g["op_kind"],
                    g["n_classes"],
                    g["n_violations"],
                    _fmt(g["violation_rate"]),
                    g["n_error_inducing"],
                    g["n_generated"],
                    _fmt(g["fairness_error_rate"]),
                ]
            )
        totals = _totals(groups)
        writer.writerow(
            [
                "All",
                dataset_name,
                "All",
                totals["classes"],
                totals["violations"],
                _fmt(totals["violation_rate"]),
                totals["error_inducing"],
                totals["generated"],
                _fmt(totals["fairness_error_rate"]),
            ]
        )
        return out.getvalue()
    writer.writerow(
        [
            "Subject",
            "Dataset",
            "MutationOp",
            "ExClasses",
            "IncClasses",
            "ExViolations",
            "IncViolations",
            "ExViolationRate",
            "IncViolationRate",
            "ExErrorInputs",
            "IncErrorInputs",
            "GenInputs",
            "ExFairnessErrorRate",
            "IncFairnessErrorRate",
        ]
    )
    exc_groups = {(g["subject_id"], g["op_kind"]): g for g in reports["mt_exclusion"]["groups"]}
    inc_groups = {(g["subject_id"], g["op_kind"]): g for g in reports["mt_inclusion"]["groups"]}
    for key in sorted(set(exc_groups) | set(inc_groups)):
        ex = exc_groups.get(key)
        inc = inc_groups.get(key)
        writer.writerow(
            [
                key[0],
                dataset_name,
                key[1],
                ex["n_classes"] if ex else 0,
                inc["n_classes"] if inc else 0,
                ex["n_violations"] if ex else 0,
                inc["n_violations"] if inc else 0,
                _fmt(ex["violation_rate"]) if ex else "",
                _fmt(inc["violation_rate"]) if inc else "",
                ex["n_error_inducing"] if ex else 0,
                inc["n_error_inducing"] if inc else 0,
                (ex or inc)["n_generated"],
                _fmt(ex["fairness_error_rate"]) if ex else "",
                _fmt(inc["fairness_error_rate"]) if inc else "",
            ]
        )
    ex_tot = _totals(list(exc_groups.values()))
    inc_tot = _totals(list(inc_groups.values()))
    writer.writerow(
        [
            "All",
            dataset_name,
            "All",
            ex_tot["classes"],
            inc_tot["classes"],
            ex_tot["violations"],
            inc_tot["violations"],
            _fmt(ex_tot["violation_rate"]),
            _fmt(inc_tot["violation_rate"]),
            ex_tot["error_inducing"],
            inc_tot["error_inducing"],
            ex_tot["generated"],
            _fmt(ex_tot["fairness_error_rate"]),
            _fmt(inc_tot["fairness_error_rate"]),
        ]
    )
    return out.getvalue()


def _totals(groups: list[dict]) -> dict:
    classes = sum(g["n_classes"] for g in groups)
    violations = sum(g["n_violations"] for g in groups)
    error_inducing = sum(g["n_error_inducing"] for g in groups)
    generated = sum(g["n_generated"] for g in groups)
    return {
        "classes": classes,
        "violations": violations,
        "error_inducing": error_inducing,
        "generated": generated,
        "violation_rate": violations / classes if classes else 0.0,
        "fairness_error_rate": error_inducing / generated if generated else 0.0,
    }


def per_class_csv(analysis: dict) -> str:
    """Per-class detail sorted by error rate descending, ties by label."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        [
            "Report",
            "Subject",
            "MutationOp",
            "Class",
            "TotCount",
            "ErrCount",
            "ErrRate",
            "Included",
            "Violation",
            "ErrImageCount",
        ]
    )
    for key in sorted(analysis["reports"]):
        report = analysis["reports"][key]
        for group in report["groups"]:
            rows = sorted(
                group["classes"],
                key=lambda c: (
                    -(c["err_rate"] if c["err_rate"] is not None else float("-inf")),
                    c["class"],
                ),
            )
            for c in rows:
                writer.writerow(
                    [
                        key,
                        group["subject_id"],
                        group["op_kind"],
                        c["class"],
                        c["tot_count"],
                        c["err_count"],
                        _fmt(c["err_rate"]),
                        int(c["included"]),
                        int(c["violation"]),
                        c["err_image_count"],
                    ]
                )
    return out.getvalue()


def _mwu_entry(sample_a: list[float], sample_b: list[float]) -> dict:
    if not sample_a or not sample_b:
        return {"note": "insufficient samples", "n_a": len(sample_a), "n_b": len(sample_b)}
    try:
        result = mann_whitney_u(sample_a, sample_b)
        return {
            "n_a": len(sample_a),
            "n_b": len(sample_b),
            "u_statistic": result.u_statistic,
            "p_value": result.p_value,
            "method": result.method,
        }
    except DegenerateSamplesError:
        return {
            "n_a": len(sample_a),
            "n_b": len(sample_b),
            "u_statistic": len(sample_a) * len(sample_b) / 2.0,
            "p_value": 1.0,
            "method": "degenerate",
        }


def mwu_comparisons(analysis: dict) -> dict:
    """Per-image error-rate comparisons: originals vs. generated mutants,
    and (when the baseline ran) ID vs. OOD insertions."""
    samples = analysis["error_rate_samples"]
    out: dict = {"original_vs_generated": {}, "id_vs_ood": {}}
    for sid in sorted(samples["originals"]):
        out["original_vs_generated"][sid] = _mwu_entry(
            samples["originals"][sid], samples["generated"].get(sid, [])
        )
    if samples.get("id"):
        for sid in sorted(samples["id"]):
            out["id_vs_ood"][sid] = _mwu_entry(
                samples["id"][sid], samples["generated"].get(sid, [])
            )
    else:
        out["id_vs_ood"] = {"note": "no in-distribution baseline in this run"}
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineResult:
    output_dir: Path
    manifest: dict
    report_paths: tuple[Path, ...]


def run_pipeline(config: PipelineConfig, until: str = "report") -> PipelineResult:
    """Execute stages in order up to `until`, skipping completed ones."""
    config.validate()
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    state = PipelineState(config)
    state.out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(state.out / "manifest.json", config.digest())
    runners = {
        "ingest": state.run_ingest,
        "cluster": state.run_cluster,
        "learn": state.run_learn,
        "mutate": state.run_mutate,
        "detect": state.run_detect,
        "analyze": state.run_analyze,
        "report": lambda: state.run_report(manifest),
    }
    for stage in STAGES:
        if manifest.completed(stage):
            if stage == until:
                break
            continue
        started = time.perf_counter()
        try:
            counts = runners[stage]()
        except Exception as exc:
            manifest.mark_failed(stage, str(exc))
            raise StageError(stage, str(exc)) from exc
        manifest.mark(stage, time.perf_counter() - started, counts)
        if stage == until:
            break
    report_paths = tuple(
        sorted(state.reports_dir.glob("*")) if state.reports_dir.exists() else ()
    )
    return PipelineResult(state.out, manifest.data, report_paths)


def emit_reports(analysis: dict, output_dir: str | Path, dataset_name: str = "dataset") -> list[Path]:
    """Write the report files from a finished analysis (library entry point;
    the pipeline's report stage goes through the same formatting)."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": json.dumps(
            {"dataset": dataset_name, "reports": analysis["reports"]},
            indent=2,
            sort_keys=True,
        ),
        "report.csv": summary_csv(analysis, dataset_name),
        "per_class.csv": per_class_csv(analysis),
        "mwu_comparisons.json": json.dumps(
            mwu_comparisons(analysis), indent=2, sort_keys=True
        ),
    }
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths
