"""Real-time stylised locomotion modelling toolkit.

Pipeline: BVH ingest -> character-space features -> local motion phases ->
gated-experts synthesis network with feature-wise style modulation ->
autoregressive runtime with live serving.
"""

__version__ = "0.1.0"

from .clip import MotionClip, load_clip, save_clip
from .model import ModelConfig, StyleModel, count_parameters
from .skeleton import Skeleton, default_skeleton

__all__ = [
    "MotionClip",
    "ModelConfig",
    "Skeleton",
    "StyleModel",
    "count_parameters",
    "default_skeleton",
    "load_clip",
    "save_clip",
    "__version__",
]
