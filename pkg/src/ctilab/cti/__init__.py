"""Interference detection, differentiation and filtration."""

from .calibration import Calibration, CalibrationError, CalibrationSuite, calibrate, load_calibration
from .detection import Cause, Detection, DetectionConfig, SymbolVerdict, detect, detect_frame, partition_packet
from .differentiation import InterferenceClass, Templates, differentiate
from .features import FeatureVector, extract_features
from .filtration import FiltrationError, FiltrationResult, filtrate

__all__ = [
    "Calibration",
    "CalibrationError",
    "CalibrationSuite",
    "Cause",
    "Detection",
    "DetectionConfig",
    "FeatureVector",
    "FiltrationError",
    "FiltrationResult",
    "InterferenceClass",
    "SymbolVerdict",
    "Templates",
    "calibrate",
    "detect",
    "detect_frame",
    "differentiate",
    "extract_features",
    "filtrate",
    "load_calibration",
    "partition_packet",
]
