"""Facial layout descriptors for recognising human interactions in still images."""

__version__ = "0.1.0"

from .data import DatasetManifest, FaceBox, FeatureVector, ImageRecord, load_annotations, load_channel, save_annotations
from .facedesc import DescriptorConfig, combined
from .learn import SvmParams, train_binary, train_channel
from .merge import MergeConfig, iou, merge_detections
from .metrics import average_precision

__all__ = [
    "DatasetManifest",
    "DescriptorConfig",
    "FaceBox",
    "FeatureVector",
    "ImageRecord",
    "MergeConfig",
    "SvmParams",
    "average_precision",
    "combined",
    "iou",
    "load_annotations",
    "load_channel",
    "merge_detections",
    "save_annotations",
    "train_binary",
    "train_channel",
]
