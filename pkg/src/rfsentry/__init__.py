"""RF drone detection and identification from signal-strength spectra.

The pipeline: magnitude-spectrum features from raw recordings
(:mod:`rfsentry.spectrum`), labeled datasets and synthetic corpora
(:mod:`rfsentry.dataset`), gradient boosted trees trained from scratch
(:mod:`rfsentry.gbdt`), and stratified cross-validation with paired
t-tests (:mod:`rfsentry.evaluation`).
"""

__version__ = "0.1.0"

from .dataset import (
    Case,
    CaseLabels,
    LabeledDataset,
    LabelSchema,
    Manifest,
    ManifestEntry,
    SegmentRecord,
    build_dataset,
    build_dronerf_manifest,
    label_from_case3,
    load_features,
    load_manifest,
    load_segment,
    save_features,
    save_manifest,
    synth_segment,
    write_synthetic_corpus,
)
from .evaluation import (
    BandComparison,
    CvReport,
    FoldAssignment,
    MetricSet,
    TTestResult,
    compare_bands,
    confusion_matrix,
    cross_validate,
    metrics,
    paired_ttest,
    stratified_kfold,
    student_t_cdf,
    t_critical,
)
from .gbdt import (
    GbdtModel,
    TrainConfig,
    TreeNode,
    build_tree,
    leaf_weight,
    load_model,
    predict,
    predict_proba,
    save_model,
    softmax_grad_hess,
    split_gain,
    train,
)
from .spectrum import (
    Band,
    BandMode,
    FeatureVector,
    MagnitudeSpectrum,
    SampleFrame,
    average_spectrum,
    compute_scaling_factor,
    concatenate_bands,
    dft,
    frame_segment,
    one_sided_magnitude,
    segment_spectrum,
)

__all__ = [
    "Band",
    "BandComparison",
    "BandMode",
    "Case",
    "CaseLabels",
    "CvReport",
    "FeatureVector",
    "FoldAssignment",
    "GbdtModel",
    "LabelSchema",
    "LabeledDataset",
    "MagnitudeSpectrum",
    "Manifest",
    "ManifestEntry",
    "MetricSet",
    "SampleFrame",
    "SegmentRecord",
    "TTestResult",
    "TrainConfig",
    "TreeNode",
    "average_spectrum",
    "build_dataset",
    "build_dronerf_manifest",
    "build_tree",
    "compare_bands",
    "compute_scaling_factor",
    "concatenate_bands",
    "confusion_matrix",
    "cross_validate",
    "dft",
    "frame_segment",
    "label_from_case3",
    "leaf_weight",
    "load_features",
    "load_manifest",
    "load_model",
    "load_segment",
    "metrics",
    "one_sided_magnitude",
    "paired_ttest",
    "predict",
    "predict_proba",
    "save_features",
    "save_manifest",
    "save_model",
    "segment_spectrum",
    "softmax_grad_hess",
    "split_gain",
    "stratified_kfold",
    "student_t_cdf",
    "synth_segment",
    "t_critical",
    "train",
    "write_synthetic_corpus",
]
