"""Pose confidence calibration: OKS metrics, expected-OKS theory, rescoring and a calibration head."""
from .oks import (
    COCO_SIGMAS,
    DegenerateWarning,
    GroundTruthInstance,
    KeypointSpec,
    NotEvaluableError,
    PredictedInstance,
    aggregate_soft,
    aggregate_threshold,
    instance_oks,
    keypoint_oks,
)
from .ranking import EvalConfig, EvalReport, ause, average_precision, average_recall, evaluate, pearson
from .theory import (
    AnnotationModel,
    EstimatorParams,
    expected_oks,
    heatmap_confidence,
    imperfect_detection,
    imperfect_regression,
    laplace_misspec,
    oracle_score,
    rescore,
    rle_confidence,
    sigma_from_maxval,
)
from .dataset import AlignmentError, ConfigError, ParseError, PoseDataset, load_dataset
from .ccnet import CalibHead, TrainConfig, TrainingError
from .benchmark import SynthConfig, synth_benchmark

__version__ = "0.1.0"

__all__ = [
    "COCO_SIGMAS",
    "DegenerateWarning",
    "GroundTruthInstance",
    "KeypointSpec",
    "NotEvaluableError",
    "PredictedInstance",
    "aggregate_soft",
    "aggregate_threshold",
    "instance_oks",
    "keypoint_oks",
    "EvalConfig",
    "EvalReport",
    "ause",
    "average_precision",
    "average_recall",
    "evaluate",
    "pearson",
    "AnnotationModel",
    "EstimatorParams",
    "expected_oks",
    "heatmap_confidence",
    "imperfect_detection",
    "imperfect_regression",
    "laplace_misspec",
    "oracle_score",
    "rescore",
    "rle_confidence",
    "sigma_from_maxval",
    "AlignmentError",
    "ConfigError",
    "ParseError",
    "PoseDataset",
    "load_dataset",
    "CalibHead",
    "TrainConfig",
    "TrainingError",
    "SynthConfig",
    "synth_benchmark",
]
