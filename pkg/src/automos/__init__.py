"""Offline moving-object labels for LiDAR sequences."""
from .config import PipelineConfig, load_config
from .errors import AutomosError, FormatError, ValidationError
from .pipeline import LabelingResult, clean_map, label_sequence

__all__ = ["PipelineConfig", "load_config", "AutomosError", "FormatError", "ValidationError",
           "LabelingResult", "clean_map", "label_sequence"]
__version__ = "0.1.0"
