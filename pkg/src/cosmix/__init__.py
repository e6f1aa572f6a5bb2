"""Compositional semantic mixing for unsupervised domain adaptation of LiDAR segmentation."""

from .core import IGNORE, ClassSet, Patch, PointCloud, validate
from .mixing import BASE, PATCH, GlobalAugConfig, LocalAugConfig, MixedSample, compose_mix, cosmix_pair
from .selection import ClassHistogram, Prediction, SelectionConfig, class_frequency

__version__ = "0.1.0"

__all__ = [
    "IGNORE",
    "BASE",
    "PATCH",
    "ClassSet",
    "ClassHistogram",
    "GlobalAugConfig",
    "LocalAugConfig",
    "MixedSample",
    "Patch",
    "PointCloud",
    "Prediction",
    "SelectionConfig",
    "class_frequency",
    "compose_mix",
    "cosmix_pair",
    "validate",
]
