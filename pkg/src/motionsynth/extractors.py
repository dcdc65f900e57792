"""Frozen feature extractors used by the perceptual loss and the metrics.

The default extractors are seed-initialized random convolutional stacks.
Their values are surrogates and are not comparable to numbers computed with
pretrained Inception, I3D or VGG weights. Weights can be loaded from a
``state_dict`` file to upgrade fidelity.
"""
from pathlib import Path

import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import ExtractorUnavailable

IMAGE_SEED = 1234
VIDEO_SEED = 4321
SURROGATE_NOTE = "surrogate extractor; values are not comparable to Inception/I3D/VGG numbers"


class _Frozen(nn.Module):
    kind = None

    def __init__(self, seed, path=None):
        super().__init__()
        self.seed = seed
        self.provenance = f"random-seed-initialized(seed={seed})"
        self._path = path

    def _finish(self):
        if self._path is not None:
            path = Path(self._path)
            if not path.is_file():
                raise ExtractorUnavailable(f"extractor weights not found: {path}")
            self.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
            self.provenance = f"loaded-from-file({path})"
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def num_stages(self):
        return len(self.stages)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def embed(self, x):
        """Pooled feature vector per sample: concatenated per-stage spatial means."""
        return torch.cat([f.flatten(2).mean(-1) for f in self(x)], dim=1)


class ImageFeatureExtractor(_Frozen):
    """Three-stage random conv stack on ``(N, C, H, W)`` images."""

    kind = "image"

    def __init__(self, in_channels=1, channels=(16, 32, 64), seed=IMAGE_SEED, path=None):
        super().__init__(seed, path)
        gen = torch.Generator().manual_seed(seed)
        stages = []
        cin = in_channels
        for i, cout in enumerate(channels):
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            _seeded_init(conv, gen)
            layers = [conv, nn.LeakyReLU(0.2)]
            if i > 0:
                layers.insert(0, nn.AvgPool2d(2))
            stages.append(nn.Sequential(*layers))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self._finish()


class VideoFeatureExtractor(_Frozen):
    """Random 3-D conv embedder on ``(N, C, T, H, W)`` clips."""

    kind = "video"

    def __init__(self, in_channels=1, channels=(8, 16, 32), seed=VIDEO_SEED, frames=16, path=None):
        super().__init__(seed, path)
        self.frames = frames
        gen = torch.Generator().manual_seed(seed)
        stages = []
        cin = in_channels
        for i, cout in enumerate(channels):
            conv = nn.Conv3d(cin, cout, 3, padding=1)
            _seeded_init(conv, gen)
            layers = [conv, nn.LeakyReLU(0.2)]
            if i > 0:
                layers.insert(0, nn.AvgPool3d((1, 2, 2)))
            stages.append(nn.Sequential(*layers))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self._finish()


def _seeded_init(conv, gen):
    fan_in = conv.weight[0].numel()
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
        conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.01)


class IdentityExtractor(nn.Module):
    """Single stage returning its input; degenerate case for tests and docs."""

    kind = "image"
    provenance = "identity"
    num_stages = 1

    def forward(self, x):
        return [x]

    def embed(self, x):
        return x.flatten(1)


def fit_clip_length(clip, frames=16):
    """Uniformly subsample or pad (repeating the last frame) ``(N, C, T, H, W)`` to ``frames``."""
    t = clip.shape[2]
    if t == frames:
        return clip
    if t > frames:
        idx = torch.linspace(0, t - 1, frames).round().long()
        return clip[:, :, idx]
    pad = clip[:, :, -1:].expand(-1, -1, frames - t, -1, -1)
    return torch.cat([clip, pad], dim=2)


def pyramid(x, levels):
    """``[x, pool(x), pool(pool(x)), ...]`` with ``levels + 1`` entries (2x2 average pooling)."""
    out = [x]
    for _ in range(levels):
        out.append(F.avg_pool2d(out[-1], 2))
    return out
