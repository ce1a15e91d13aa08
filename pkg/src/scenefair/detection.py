"""Detector subjects and batch detection with a content-addressed cache.

Two subject kinds share one interface: a simulated detector whose per-class
recall, crowding sensitivity, and label confusion are configurable (a test
double for commercial recognition APIs), and an HTTP detector speaking a
small JSON protocol with retry/backoff. Simulated detection is a pure
function of (scene, config): every instance's detection draw is hashed from
the config seed, the scene id, and the instance id, so replays are
bit-identical while distinct scenes re-roll independently.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .errors import ProtocolError, SubjectUnavailableError
from .scenes import Scene, canonical_json, instance_visibility, render_ppm, scene_to_json
from .seeding import unit_float

DEFAULT_MIN_VISIBLE_FRACTION = 0.25


@dataclass(frozen=True)
class DetectionRecord:
    """Multiset of detected class labels for one scene and subject."""

    scene_id: str
    subject_id: str
    counts: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(
            self, "counts", {k: int(v) for k, v in sorted(self.counts.items()) if v != 0}
        )

    def count(self, class_label: str) -> int:
        return self.counts.get(class_label, 0)

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "subject_id": self.subject_id,
            "counts": dict(self.counts),
        }

    @staticmethod
    def from_json(data: dict) -> "DetectionRecord":
        return DetectionRecord(data["scene_id"], data["subject_id"], data["counts"])


class Subject(Protocol):
    subject_id: str

    def detect(self, scene: Scene) -> DetectionRecord: ...

    def digest(self) -> str: ...


@dataclass(frozen=True)
class SimulatedDetectorConfig:
    """Biased-detector knobs.

    Effective recall of an instance is its class recall times
    (1 - crowding_penalty) ** max(0, total_objects - crowding_threshold),
    clamped to [0, 1]. confusion_pairs maps a class to (other class, prob):
    a detected instance is miscounted as the other class with that
    probability. Instances less than min_visible_fraction un-occluded are
    never detected.
    """

    per_class_recall: Mapping[str, float] = field(default_factory=dict)
    default_recall: float = 1.0
    crowding_penalty: float = 0.0
    crowding_threshold: int = 0
    confusion_pairs: Mapping[str, tuple[str, float]] = field(default_factory=dict)
    seed: int = 0
    min_visible_fraction: float = DEFAULT_MIN_VISIBLE_FRACTION

    def __post_init__(self):
        object.__setattr__(self, "per_class_recall", dict(self.per_class_recall))
        object.__setattr__(
            self,
            "confusion_pairs",
            {k: (str(v[0]), float(v[1])) for k, v in dict(self.confusion_pairs).items()},
        )
        for label, recall in self.per_class_recall.items():
            if not 0.0 <= recall <= 1.0:
                raise ValueError(f"recall[{label!r}] = {recall} outside [0, 1]")
        if not 0.0 <= self.default_recall <= 1.0:
            raise ValueError("default_recall outside [0, 1]")
        if self.crowding_penalty < 0:
            raise ValueError("crowding_penalty must be >= 0")
        for label, (_, prob) in self.confusion_pairs.items():
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"confusion prob for {label!r} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "per_class_recall": dict(sorted(self.per_class_recall.items())),
            "default_recall": self.default_recall,
            "crowding_penalty": self.crowding_penalty,
            "crowding_threshold": self.crowding_threshold,
            "confusion_pairs": {
                k: [v[0], v[1]] for k, v in sorted(self.confusion_pairs.items())
            },
            "seed": self.seed,
            "min_visible_fraction": self.min_visible_fraction,
        }


class SimulatedDetector:
    """Deterministic simulated recognition subject."""

    def __init__(self, subject_id: str, config: SimulatedDetectorConfig):
        self.subject_id = subject_id
        self.config = config

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.config.to_json()).encode()).hexdigest()

    def effective_recall(self, class_label: str, total_objects: int) -> float:
        cfg = self.config
        recall = cfg.per_class_recall.get(class_label, cfg.default_recall)
        overflow = max(0, total_objects - cfg.crowding_threshold)
        if cfg.crowding_penalty > 0 and overflow > 0:
            recall *= (1.0 - cfg.crowding_penalty) ** overflow
        return min(1.0, max(0.0, recall))

    def detect(self, scene: Scene) -> DetectionRecord:
        cfg = self.config
        visibility = instance_visibility(scene)
        total = len(scene.objects)
        counts: dict[str, int] = {}
        for obj in scene.objects:
            if visibility[obj.instance_id] < cfg.min_visible_fraction:
                continue
            recall = self.effective_recall(obj.class_label, total)
            draw = unit_float(cfg.seed, scene.scene_id, obj.instance_id, "detect")
            if draw >= recall:
                continue
            label = obj.class_label
            pair = cfg.confusion_pairs.get(obj.class_label)
            if pair is not None:
                target, prob = pair
                if unit_float(cfg.seed, scene.scene_id, obj.instance_id, "confuse") < prob:
                    label = target
            counts[label] = counts.get(label, 0) + 1
        return DetectionRecord(scene.scene_id, self.subject_id, counts)


class HttpDetector:
    """Client for an external recognition service.

    Protocol: POST {endpoint} with {"scene": <scene JSON>} (or
    {"image_ppm_b64": <base64 PPM>} when send_raster), expecting
    HTTP 200 and {"counts": {class: int}}. Non-200 responses and transport
    errors are retried with exponential backoff; a malformed 200 response
    fails immediately.
    """

    def __init__(
        self,
        subject_id: str,
        endpoint: str,
        send_raster: bool = False,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ):
        self.subject_id = subject_id
        self.endpoint = endpoint
        self.send_raster = send_raster
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.session = session or requests.Session()

    def digest(self) -> str:
        material = canonical_json(
            {"endpoint": self.endpoint, "send_raster": self.send_raster}
        )
        return hashlib.sha256(material.encode()).hexdigest()

    def _payload(self, scene: Scene) -> dict:
        if self.send_raster:
            return {"image_ppm_b64": base64.b64encode(render_ppm(scene)).decode("ascii")}
        return {"scene": scene_to_json(scene)}

    def detect(self, scene: Scene) -> DetectionRecord:
        payload = self._payload(scene)
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            try:
                response = self.session.post(
                    self.endpoint, json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    return self._parse(scene, response)
                last_error = f"HTTP {response.status_code}"
            if attempt + 1 < self.max_attempts:
                time.sleep(self.backoff_base * (2**attempt))
        raise SubjectUnavailableError(
            f"{self.subject_id} at {self.endpoint}: {last_error} "
            f"after {self.max_attempts} attempts"
        )

    def _parse(self, scene: Scene, response: requests.Response) -> DetectionRecord:
        try:
            data = response.json()
            counts = {str(k): int(v) for k, v in data["counts"].items()}
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ProtocolError(
                f"{self.subject_id}: malformed response body: {exc!r}"
            ) from exc
        return DetectionRecord(scene.scene_id, self.subject_id, counts)


def detect(scene: Scene, subject: Subject) -> DetectionRecord:
    """Query one subject on one scene."""
    return subject.detect(scene)


# ---------------------------------------------------------------------------
# Batch detection with content-addressed caching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionOutcome:
    scene_id: str
    subject_id: str
    record: DetectionRecord | None = None
    error: str | None = None
    from_cache: bool = False

    @property
    def failed(self) -> bool:
        return self.record is None


def cache_key(scene: Scene, subject: Subject) -> str:
    material = (
        canonical_json(scene_to_json(scene))
        + "\x00"
        + subject.subject_id
        + "\x00"
        + subject.digest()
    )
    return hashlib.sha256(material.encode()).hexdigest()


def _cache_path(cache_dir: Path, key: str) -> Path:
    return cache_dir / key[:2] / f"{key}.json"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _detect_one(scene: Scene, subject: Subject, cache_dir: Path | None) -> DetectionOutcome:
    path = None
    if cache_dir is not None:
        path = _cache_path(cache_dir, cache_key(scene, subject))
        if path.exists():
            record = DetectionRecord.from_json(json.loads(path.read_text()))
            return DetectionOutcome(scene.scene_id, subject.subject_id, record, from_cache=True)
    try:
        record = subject.detect(scene)
    except (SubjectUnavailableError, ProtocolError) as exc:
        return DetectionOutcome(scene.scene_id, subject.subject_id, error=str(exc))
    if path is not None:
        _write_atomic(path, canonical_json(record.to_json()))
    return DetectionOutcome(scene.scene_id, subject.subject_id, record)


def detect_batch(
    scenes: Sequence[Scene],
    subjects: Sequence[Subject],
    cache_dir: str | Path | None = None,
    parallelism: int = 1,
) -> list[DetectionOutcome]:
    """Detect every (scene, subject) pair, reusing cached results.

    Per-pair failures become failed outcomes without aborting the batch.
    Output is (scene_id, subject_id)-sorted regardless of completion order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cache = Path(cache_dir) if cache_dir is not None else None
    tasks = [(scene, subject) for scene in scenes for subject in subjects]
    if parallelism == 1:
        outcomes = [_detect_one(scene, subject, cache) for scene, subject in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(
                pool.map(lambda pair: _detect_one(pair[0], pair[1], cache), tasks)
            )
    return sorted(outcomes, key=lambda o: (o.scene_id, o.subject_id))
