"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SceneFairError(Exception):
    """Base class for all package-specific errors."""


class MalformedSceneError(SceneFairError):
    """A scene file violates the schema or a scene invariant."""

    def __init__(self, file: str, reason: str):
        self.file = file
        self.reason = reason
        super().__init__(f"{file}: {reason}")


class DuplicateSceneIdError(SceneFairError):
    """Two scene files share the same scene_id."""


class EmptyDatasetError(SceneFairError):
    """No scene files found in the dataset directory."""


class KTooLargeError(SceneFairError):
    """Requested more clusters than there are scenes."""


class UnknownClassError(SceneFairError):
    """Class label not in the dataset class universe."""


class InsufficientReferencesError(SceneFairError):
    """Too few sized objects at distinct depths to fit a scaling model."""


class NothingToDeleteError(SceneFairError):
    """Deletion target class has no instances in the scene."""


class NoUnobstructedInstanceError(SceneFairError):
    """Every candidate instance is occluded by a nearer object."""


class NoNovelOrientationError(SceneFairError):
    """The learned orientation set already covers every bin."""


class SubjectUnavailableError(SceneFairError):
    """HTTP detector kept failing after all retries."""


class ProtocolError(SceneFairError):
    """HTTP detector returned a malformed response."""


class EmptyAfterFilteringError(SceneFairError):
    """No class survives the minimum-count filter."""


class DegenerateSamplesError(SceneFairError):
    """All values identical across both samples; conventionally p = 1."""


class ConfigError(SceneFairError):
    """Pipeline configuration is invalid."""


class StageError(SceneFairError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"stage '{stage}' failed: {reason}")
