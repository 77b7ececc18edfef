"""Pose-overlay vision transformer for multi-view driver action recognition."""
from .distribution import ClassDistribution
from .errors import CheckpointError, ConfigError, ContractError, FormatError
from .fusion import FusionConfig, FusionResult, ViewPrediction, fuse, predict_view
from .imaging import (BoneTopology, Image, LandmarkSet, SkeletonStyle, composite,
                      read_ppm, render_skeleton, resize_bilinear, write_ppm)
from .rng import Rng
from .vit import ViTConfig, forward, init_params

__version__ = "0.1.0"
