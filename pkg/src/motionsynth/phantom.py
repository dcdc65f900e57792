"""Procedural ultrasound-like phantom videos with ground-truth landmarks.

Each video is a fixed canonical scene (tissue texture, speckle, dark
chambers with bright walls) seen through a static fan-shaped aperture. Frame
``t`` samples the scene through a smooth backward deformation made of
periodic chamber contractions plus a small global drift, so landmarks are
known exactly: they are the forward images of canonical chamber apex/base
points.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import VideoClip, normalized_to_pixel
from .exceptions import InvalidConfig


@dataclass(frozen=True)
class PhantomConfig:
    resolution: int = 64
    frames_per_video: int = 32
    n_chambers: int = 2
    motion_amplitude: float = 0.25
    speckle_strength: float = 0.3
    fan_angle: float = 75.0  # degrees
    rng_seed: int = 0
    n_landmarks: int = 2

    def validate(self):
        if self.resolution < 16 or self.resolution % 4:
            raise InvalidConfig(f"resolution must be >= 16 and divisible by 4, got {self.resolution}")
        if self.frames_per_video < 2:
            raise InvalidConfig("frames_per_video must be >= 2")
        if not 1 <= self.n_chambers <= 4:
            raise InvalidConfig("n_chambers must be in 1..4")
        if self.motion_amplitude < 0 or self.speckle_strength < 0:
            raise InvalidConfig("motion_amplitude and speckle_strength must be non-negative")
        if not 10 <= self.fan_angle <= 170:
            raise InvalidConfig("fan_angle must be in [10, 170] degrees")
        if not 0 <= self.n_landmarks <= 4 * self.n_chambers:
            raise InvalidConfig("n_landmarks must be in [0, 4 * n_chambers]")


_LAYOUTS = {
    1: [(0.0, 0.15)],
    2: [(-0.28, 0.2), (0.28, 0.2)],
    3: [(-0.3, 0.0), (0.3, 0.0), (0.0, 0.55)],
    4: [(-0.28, 0.0), (0.28, 0.0), (-0.28, 0.6), (0.28, 0.6)],
}
_APEX = np.array([0.0, -1.05])
_FAN_RADII = (0.15, 2.0)


class _Scene:
    def __init__(self, cfg, rng):
        n = cfg.resolution
        self.n = n
        self.cfg = cfg
        scale = 1.0 / np.sqrt(cfg.n_chambers)
        self.centers = np.array(_LAYOUTS[cfg.n_chambers]) + rng.uniform(-0.05, 0.05, (cfg.n_chambers, 2))
        self.axes = np.column_stack([
            rng.uniform(0.18, 0.24, cfg.n_chambers) * max(scale, 0.6),
            rng.uniform(0.26, 0.34, cfg.n_chambers) * max(scale, 0.6),
        ])
        self.phases = rng.uniform(0, 2 * np.pi, cfg.n_chambers)
        self.period = rng.uniform(12.0, 20.0)
        self.drift_phase = rng.uniform(0, 2 * np.pi)
        # Canonical textures live on a padded lattice covering [-1.5, 1.5]^2.
        self.pad = n // 4
        m = n + 2 * self.pad
        low = ndimage.gaussian_filter(rng.standard_normal((m, m)), sigma=n / 8)
        low /= np.abs(low).max() + 1e-12
        self.tissue = 0.55 + 0.12 * low
        if cfg.speckle_strength > 0:
            noise = ndimage.gaussian_filter(rng.standard_normal((m, m)), sigma=0.6)
            noise /= noise.std()
            s = cfg.speckle_strength
            self.speckle = np.clip(np.exp(s * noise - 0.5 * s * s), 0.0, 3.0)
        else:
            self.speckle = np.ones((m, m))

    def contraction(self, t):
        a = self.cfg.motion_amplitude
        return a * 0.5 * (1.0 - np.cos(2 * np.pi * t / self.period + self.phases))

    def drift(self, t):
        a = 0.15 * self.cfg.motion_amplitude
        ang = 2 * np.pi * t / (1.7 * self.period) + self.drift_phase
        return a * np.array([np.sin(ang), 0.5 * np.cos(ang)])

    def backward(self, z, t):
        """Frame coordinates ``z (..., 2)`` -> canonical scene coordinates."""
        u = z - self.drift(t)
        out = u.copy()
        for c, ax, k in zip(self.centers, self.axes, self.contraction(t)):
            d = u - c
            rho2 = (1.4 * ax.max()) ** 2
            out = out + k * d * np.exp(-0.5 * (d ** 2).sum(-1, keepdims=True) / rho2)
        return out

    def forward(self, u, t, iters=100):
        z = np.array(u, dtype=np.float64)
        for _ in range(iters):
            z = z - (self.backward(z, t) - u)
        return z

    def fan_mask(self, z):
        d = z - _APEX
        r = np.hypot(d[..., 0], d[..., 1])
        ang = np.degrees(np.arctan2(d[..., 0], d[..., 1]))
        soft = 2.0 / self.n
        half = self.cfg.fan_angle / 2
        inside_ang = _smoothstep((half - np.abs(ang)) * np.pi / 180 * r / soft)
        inside_r = _smoothstep((r - _FAN_RADII[0]) / soft) * _smoothstep((_FAN_RADII[1] - r) / soft)
        return inside_ang * inside_r

    def tissue_at(self, u):
        n, pad = self.n, self.pad
        pix = (u + 1.0) * 0.5 * (n - 1) + pad
        coords = [pix[..., 1], pix[..., 0]]
        base = ndimage.map_coordinates(self.tissue, coords, order=1, mode="nearest")
        speck = ndimage.map_coordinates(self.speckle, coords, order=1, mode="nearest")
        soft = 2.0 / n
        value = base
        for c, ax in zip(self.centers, self.axes):
            e = np.sqrt((((u - c) / ax) ** 2).sum(-1))
            edge = (e - 1.0) * ax.min() / soft
            wall = np.exp(-0.5 * ((e - 1.18) * ax.min() / (1.5 * soft)) ** 2)
            value = value * _smoothstep(edge) + 0.06 * (1 - _smoothstep(edge))
            value = value + 0.3 * wall
        depth = np.hypot(*(u - _APEX).transpose(-1, *range(u.ndim - 1)))
        value = value * (1.0 - 0.25 * depth / _FAN_RADII[1])
        return value * speck

    def landmarks(self):
        pts = []
        for c, ax in zip(self.centers, self.axes):
            pts.append([(c[0], c[1] - ax[1]), (c[0], c[1] + ax[1])])
        lateral = [[(c[0] - ax[0], c[1]), (c[0] + ax[0], c[1])] for c, ax in zip(self.centers, self.axes)]
        ordered = [p for pair in pts for p in pair] + [p for pair in lateral for p in pair]
        return np.array(ordered[: self.cfg.n_landmarks]).reshape(-1, 2)


def _smoothstep(x):
    return 0.5 * (1.0 + np.tanh(x))


def generate_phantom_video(config, video_id=None):
    """Render one phantom clip; returns ``(VideoClip, keypoints (T, S, 2))``.

    Keypoints are in pixel coordinates. Output is a pure function of
    ``config``.
    """
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    scene = _Scene(config, rng)
    n = config.resolution
    axis = np.linspace(-1.0, 1.0, n)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    z = np.stack([xx, yy], axis=-1)
    mask = scene.fan_mask(z)
    canon = scene.landmarks()
    frames, kps = [], []
    for t in range(config.frames_per_video):
        u = scene.backward(z, t)
        frames.append(np.clip(mask * scene.tissue_at(u), 0.0, 1.0))
        pts = scene.forward(canon, t) if len(canon) else np.zeros((0, 2))
        kps.append(np.clip(normalized_to_pixel(pts, (n, n)), 0, n - 1))
    kps = np.array(kps).reshape(config.frames_per_video, len(canon), 2)
    vid = video_id or f"phantom_{config.rng_seed:05d}"
    clip = VideoClip(np.array(frames, dtype=np.float32), vid, kps, {"phantom": True})
    return clip, kps


def make_phantom_dataset(n_videos, frames=32, resolution=64, seed=0, test_fraction=0.2, **overrides):
    """Phantom clips split by video into ``{"train": [...], "test": [...]}``."""
    if n_videos < 1:
        raise InvalidConfig("need at least one video")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, n_videos)
    chambers = rng.integers(1, 3, n_videos) + 1 if "n_chambers" not in overrides else None
    clips = []
    for i, s in enumerate(seeds):
        params = dict(resolution=resolution, frames_per_video=frames, rng_seed=int(s))
        if chambers is not None:
            params["n_chambers"] = int(chambers[i])
        params.update(overrides)
        clip, _ = generate_phantom_video(PhantomConfig(**params), video_id=f"video_{i:04d}")
        clips.append(clip)
    n_test = int(round(n_videos * test_fraction))
    n_train = n_videos - n_test
    return {"train": clips[:n_train], "test": clips[n_train:]}
