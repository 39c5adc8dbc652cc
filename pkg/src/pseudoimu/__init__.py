"""Pseudo-inertial features from 3D keypoints, swim/stop classification and online transition detection."""

__version__ = "0.1.0"

from .detector import DetectorConfig, TransitionDetector, TransitionEvent, detect_transitions
from .errors import PimuError
from .features import FeatureMatrix, FeatureMode, extract_features, features_from_positions
from .pose import JointId, PoseFrame, PoseSequence
from .stream import StreamEngine
from .tsf import Forest, ForestParams, Prediction, load_model, save_model, train_forest

__all__ = [
    "DetectorConfig",
    "FeatureMatrix",
    "FeatureMode",
    "Forest",
    "ForestParams",
    "JointId",
    "PimuError",
    "PoseFrame",
    "PoseSequence",
    "Prediction",
    "StreamEngine",
    "TransitionDetector",
    "TransitionEvent",
    "detect_transitions",
    "extract_features",
    "features_from_positions",
    "load_model",
    "save_model",
    "train_forest",
]
