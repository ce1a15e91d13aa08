"""Distribution-aware mutation testing for class-level fairness of
multi-label object detectors.

The package learns per-cluster object-count/orientation envelopes from an
annotated scene dataset, mutates scenes beyond those envelopes (insertion,
deletion, rotation), queries detector subjects, and flags classes whose
error rates exceed the cross-class mean.
"""

from .clustering import ClusterAssignment, choose_k, cluster_dataset
from .detection import (
    DetectionOutcome,
    DetectionRecord,
    HttpDetector,
    SimulatedDetector,
    SimulatedDetectorConfig,
    detect,
    detect_batch,
)
from .distribution import (
    ClassDistribution,
    ClusterDistribution,
    OodStatus,
    is_ood,
    learn_distribution,
    mutation_count,
)
from .fairness import (
    AccuracyComparison,
    AccuracyPair,
    ErrorLedger,
    FairnessReport,
    OracleReference,
    accumulate,
    accuracy_comparison,
    build_reference,
    counting_accuracy,
    detect_violations,
    gt_errors,
    insertion_expected_counts,
    mt_errors,
    pair_with_real,
)
from .mutation import (
    MutationResult,
    MutationSpec,
    RelativeSizeTable,
    compute_scaling_factor,
    delete_class,
    generate_ood_set,
    insert_objects,
    rotate_object,
)
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .scenes import (
    BBox,
    Dataset,
    ObjectInstance,
    Scene,
    SegmentationGrid,
    class_count_vector,
    derive_segmentation,
    ingest_dataset,
)
from .stats import StatTestResult, mann_whitney_u
from .synthetic import CorpusSpec, make_corpus, write_corpus

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Scene",
    "ObjectInstance",
    "SegmentationGrid",
    "Dataset",
    "ingest_dataset",
    "derive_segmentation",
    "class_count_vector",
    "ClusterAssignment",
    "cluster_dataset",
    "choose_k",
    "ClassDistribution",
    "ClusterDistribution",
    "OodStatus",
    "learn_distribution",
    "is_ood",
    "mutation_count",
    "RelativeSizeTable",
    "MutationSpec",
    "MutationResult",
    "compute_scaling_factor",
    "insert_objects",
    "delete_class",
    "rotate_object",
    "generate_ood_set",
    "DetectionRecord",
    "DetectionOutcome",
    "SimulatedDetectorConfig",
    "SimulatedDetector",
    "HttpDetector",
    "detect",
    "detect_batch",
    "OracleReference",
    "build_reference",
    "gt_errors",
    "mt_errors",
    "ErrorLedger",
    "accumulate",
    "FairnessReport",
    "detect_violations",
    "insertion_expected_counts",
    "pair_with_real",
    "counting_accuracy",
    "AccuracyPair",
    "AccuracyComparison",
    "accuracy_comparison",
    "StatTestResult",
    "mann_whitney_u",
    "CorpusSpec",
    "make_corpus",
    "write_corpus",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
]
