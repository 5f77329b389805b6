"""Boosted Haar-feature cascade detection: training, scanning, model files and evaluation."""

from .boost import StrongClassifier, TrainingSample, WeakClassifier, adaboost_train, fit_stump
from .cascade import Cascade, CascadeTrainConfig, Stage, classify_window, train_cascade
from .cascadexml import (from_canonical_json, load_model, parse_cascade_xml, to_canonical_json,
                         write_cascade_xml)
from .dataset import GTBox, SynthSpec, load_ground_truth, load_manifest, synth_dataset
from .detect import Detection, DetectParams, detect_multiscale, group_detections
from .evaluation import compute_metrics, match_detections, scene_report
from .haar import FeatureKind, HaarFeature, enumerate_features, evaluate, scale_feature
from .imagecore import GrayImage, IntegralImage, Rect, compute_integral, load_image, rect_sum

__version__ = "0.1.0"

__all__ = [
    "StrongClassifier",
    "TrainingSample",
    "WeakClassifier",
    "adaboost_train",
    "fit_stump",
    "Cascade",
    "CascadeTrainConfig",
    "Stage",
    "classify_window",
    "train_cascade",
    "from_canonical_json",
    "load_model",
    "parse_cascade_xml",
    "to_canonical_json",
    "write_cascade_xml",
    "GTBox",
    "SynthSpec",
    "load_ground_truth",
    "load_manifest",
    "synth_dataset",
    "Detection",
    "DetectParams",
    "detect_multiscale",
    "group_detections",
    "compute_metrics",
    "match_detections",
    "scene_report",
    "FeatureKind",
    "HaarFeature",
    "enumerate_features",
    "evaluate",
    "scale_feature",
    "GrayImage",
    "IntegralImage",
    "Rect",
    "compute_integral",
    "load_image",
    "rect_sum",
]
