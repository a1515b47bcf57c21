"""Synthesise handwritten-music staff images with DCGAN, ProGAN and CycleWGAN, and score them."""

from .dataprep import DatasetManifest, Domain, ImageCrop, SourceImage
from .metrics import FeatureMoments, MetricReport
from .traincore import Checkpoint, LossLog, TrainConfig, default_config

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "DatasetManifest", "Domain", "FeatureMoments", "ImageCrop", "LossLog",
    "MetricReport", "SourceImage", "TrainConfig", "default_config",
]
