"""Keypoint-driven ultrasound video synthesis on procedural phantoms."""
from .adaptation import AdaptationRecord, adapt_and_synthesize, synthesize_clip, trajectory_hsd_loss
from .config import PRESETS, LossWeights, TrainConfig, load_config, parse_config_text
from .data import DatasetIndex, VideoClip, load_dataset, preprocess, save_dataset, split_into_subclips
from .estimator import MotionSynthesizer
from .exceptions import MotionSynthError
from .geometry import AffineTransform2D, KeypointSet, ThinPlateSpline, hausdorff_directed, hausdorff_twoway
from .phantom import PhantomConfig, generate_phantom_video, make_phantom_dataset
from .training import MotionTransferModel, Trainer, read_checkpoint, train, write_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AdaptationRecord", "adapt_and_synthesize", "synthesize_clip", "trajectory_hsd_loss",
    "PRESETS", "LossWeights", "TrainConfig", "load_config", "parse_config_text",
    "DatasetIndex", "VideoClip", "load_dataset", "preprocess", "save_dataset", "split_into_subclips",
    "MotionSynthesizer", "MotionSynthError",
    "AffineTransform2D", "KeypointSet", "ThinPlateSpline", "hausdorff_directed", "hausdorff_twoway",
    "PhantomConfig", "generate_phantom_video", "make_phantom_dataset",
    "MotionTransferModel", "Trainer", "read_checkpoint", "train", "write_checkpoint",
]
