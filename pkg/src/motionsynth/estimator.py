"""Estimator-style facade: ``fit`` trains on clips, ``predict`` animates."""
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .adaptation import ADAPT_LR, adapt_and_synthesize, synthesize_clip
from .config import PRESETS, TrainConfig
from .data import VideoClip
from .exceptions import ShapeMismatch, VideoTooShort
from .metrics import psnr
from .training import Trainer


def check_frame(frame, size=None):
    """Validate a single grayscale frame; returns float32 ``(H, W)`` in [0, 1]."""
    f = np.asarray(frame, dtype=np.float32)
    if f.ndim != 2:
        raise ShapeMismatch(f"expected a (H, W) frame, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("frame contains non-finite values")
    if size is not None and f.shape != tuple(size):
        raise ShapeMismatch(f"frame is {f.shape}, model expects {tuple(size)}")
    return np.clip(f, 0.0, 1.0)


def check_clip(clip, size=None, min_frames=2):
    """Accept a VideoClip or a ``(T, H, W)`` array; returns a VideoClip."""
    if not isinstance(clip, VideoClip):
        arr = np.asarray(clip, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatch(f"expected a (T, H, W) clip, got shape {arr.shape}")
        clip = VideoClip(arr)
    if len(clip) < min_frames:
        raise VideoTooShort(f"clip {clip.video_id!r} has {len(clip)} frame(s), need {min_frames}")
    if size is not None and tuple(clip.size) != tuple(size):
        raise ShapeMismatch(f"clip frames are {tuple(clip.size)}, model expects {tuple(size)}")
    if not np.all(np.isfinite(clip.frames)):
        raise ValueError("clip contains non-finite values")
    return clip


def check_is_fitted(est):
    if getattr(est, "trainer_", None) is None:
        raise NotFittedError(f"{type(est).__name__} is not fitted; call fit() first")


class MotionSynthesizer(BaseEstimator):
    """Keypoint-driven video synthesizer.

    ``preset`` is a preset name or a full TrainConfig; the other parameters,
    when not None, override the matching TrainConfig fields.

    >>> est = MotionSynthesizer(preset="tiny", epochs=1)  # doctest: +SKIP
    >>> est.fit(train_clips).predict(source_frame, driving_clip)  # doctest: +SKIP
    """

    def __init__(self, preset="desk", epochs=None, batch_size=None, learning_rate=None,
                 num_keypoints=None, supervised_count=None, seed=None, adapt_iterations=0,
                 adapt_lr=ADAPT_LR):
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.num_keypoints = num_keypoints
        self.supervised_count = supervised_count
        self.seed = seed
        self.adapt_iterations = adapt_iterations
        self.adapt_lr = adapt_lr

    def build_config(self):
        base = self.preset if isinstance(self.preset, TrainConfig) else PRESETS[self.preset]
        d = asdict(base)
        for k in ("epochs", "batch_size", "learning_rate", "num_keypoints", "supervised_count", "seed"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return TrainConfig.from_dict(d).validate()

    def fit(self, X, y=None, out_dir=None):
        """Train on a list of clips (``y`` is ignored; annotations ride on the clips)."""
        cfg = self.build_config()
        size = (cfg.resolution, cfg.resolution)
        clips = [check_clip(c, size) for c in X]
        if not clips:
            raise ValueError("fit needs at least one clip")
        self.config_ = cfg
        self.trainer_ = Trainer(cfg)
        self.history_ = self.trainer_.fit(clips, out_dir)
        self.n_clips_ = len(clips)
        return self

    @classmethod
    def from_checkpoint(cls, path, **params):
        trainer = Trainer.from_checkpoint(path)
        est = cls(preset=trainer.cfg, **params)
        est.config_ = trainer.cfg
        est.trainer_ = trainer
        est.history_ = []
        return est

    @property
    def model_(self):
        check_is_fitted(self)
        return self.trainer_.model

    def _size(self):
        return (self.config_.resolution,) * 2

    def predict(self, source, driving):
        """Animate ``source`` with ``driving``; returns frames ``(T, H, W)``."""
        check_is_fitted(self)
        src = check_frame(source, self._size())
        drv = check_clip(driving, self._size())
        if self.adapt_iterations:
            clip, self.adaptation_report_ = adapt_and_synthesize(
                src, drv, self.model_, iterations=self.adapt_iterations, lr=self.adapt_lr)
            return clip.frames
        return synthesize_clip(src, drv, self.model_).frames

    def transform(self, X):
        """Reconstruct each clip from its own first frame."""
        check_is_fitted(self)
        out = []
        for c in X:
            c = check_clip(c, self._size())
            out.append(self.predict(c.frames[0], c))
        return out

    def score(self, X, y=None):
        """Mean reconstruction PSNR (dB) over ``X``."""
        clips = [check_clip(c, self._size()) for c in X]
        gen = self.transform(clips)
        return float(np.mean([psnr(g, c.frames) for g, c in zip(gen, clips)]))
