"""Multi-scale patch critics, a ViT critic, and the adversarial losses."""
from dataclasses import dataclass, field

import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import FeatureShapeMismatch, ResolutionMismatch


@dataclass
class CriticReport:
    """Scores and intermediate activations for one batch of images.

    ``features`` holds one list of activations per critic, in the order
    patch critics (one per scale) then the transformer critic.
    """

    patch_scores: list
    global_score: torch.Tensor = None
    features: list = field(default_factory=list)

    def score_tensors(self):
        scores = list(self.patch_scores)
        if self.global_score is not None:
            scores.append(self.global_score)
        return scores


class PatchDiscriminator(nn.Module):
    """Four stride-2 4x4 convolutions; each output cell scores one patch."""

    def __init__(self, num_channels=1, channels=(32, 64, 128)):
        super().__init__()
        widths = (num_channels,) + tuple(channels) + (1,)
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1) for i in range(len(widths) - 1)
        )

    def forward(self, x):
        feats = []
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, 0.2)
            feats.append(x)
        return x, feats


class _TransformerBlock(nn.Module):
    def __init__(self, dim, heads, mlp_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViTDiscriminator(nn.Module):
    """Patch-token transformer with a class token producing one score per image."""

    def __init__(self, image_size=64, patch_size=8, num_channels=1, dim=64, depth=2, heads=4, mlp_dim=128):
        super().__init__()
        if image_size % patch_size:
            raise ResolutionMismatch(f"image size {image_size} not divisible by patch {patch_size}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.embed = nn.Conv2d(num_channels, dim, patch_size, stride=patch_size)
        n_tokens = (image_size // patch_size) ** 2
        self.cls = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.randn(1, n_tokens + 1, dim) * 0.02)
        self.blocks = nn.ModuleList(_TransformerBlock(dim, heads, mlp_dim) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, 1)

    def forward(self, x):
        if x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise ResolutionMismatch(f"ViT critic expects {self.image_size}px input, got {tuple(x.shape)}")
        tokens = self.embed(x).flatten(2).transpose(1, 2)
        tokens = torch.cat([self.cls.expand(x.shape[0], -1, -1), tokens], dim=1) + self.pos
        feats = []
        for block in self.blocks:
            tokens = block(tokens)
            feats.append(tokens)
        return self.head(self.norm(tokens[:, 0]))[:, 0], feats


class MultiScaleDiscriminator(nn.Module):
    """Patch critics at every scale plus a transformer critic at full scale."""

    def __init__(self, resolution=(64, 64), num_channels=1, scales=(1.0, 0.5), patch_channels=(32, 64, 128),
                 vit_patch=None, vit_dim=64, vit_depth=2, vit_heads=4, use_vit=True):
        super().__init__()
        self.resolution = tuple(resolution)
        self.scales = tuple(scales)
        self.patch = nn.ModuleList(PatchDiscriminator(num_channels, patch_channels) for _ in self.scales)
        self.vit = None
        if use_vit:
            patch = vit_patch or (16 if resolution[0] >= 256 else 8)
            self.vit = ViTDiscriminator(resolution[0], patch, num_channels, vit_dim, vit_depth, vit_heads, 2 * vit_dim)

    def forward(self, image):
        if image.dim() != 4 or tuple(image.shape[-2:]) != self.resolution:
            raise ResolutionMismatch(f"critic expects {self.resolution}, got {tuple(image.shape)}")
        scores, feats = [], []
        for scale, critic in zip(self.scales, self.patch):
            x = image if scale == 1.0 else F.avg_pool2d(image, int(round(1 / scale)))
            s, f = critic(x)
            scores.append(s)
            feats.append(f)
        global_score = None
        if self.vit is not None:
            global_score, f = self.vit(image)
            feats.append(f)
        return CriticReport(scores, global_score, feats)


def discriminate(image, discriminator):
    return discriminator(image)


def _reports(r):
    return [r] if isinstance(r, CriticReport) else list(r)


def _mean_over_critics(terms):
    return sum(terms) / len(terms)


def lsgan_generator_loss(fake_reports):
    """Average over critics of ``mean((score - 1)^2)``."""
    terms = [((s - 1.0) ** 2).mean() for r in _reports(fake_reports) for s in r.score_tensors()]
    return _mean_over_critics(terms)


def lsgan_discriminator_loss(real_reports, fake_reports):
    real = [((s - 1.0) ** 2).mean() for r in _reports(real_reports) for s in r.score_tensors()]
    fake = [(s ** 2).mean() for r in _reports(fake_reports) for s in r.score_tensors()]
    return _mean_over_critics(real) + _mean_over_critics(fake)


def feature_matching_loss(real_reports, fake_reports):
    """Per critic, sum over layers of mean |real - fake|; averaged over critics.

    Real activations are treated as constants.
    """
    terms = []
    for real, fake in zip(_reports(real_reports), _reports(fake_reports)):
        if len(real.features) != len(fake.features):
            raise FeatureShapeMismatch("reports come from different critic configurations")
        for fr_list, ff_list in zip(real.features, fake.features):
            if len(fr_list) != len(ff_list):
                raise FeatureShapeMismatch("critic feature lists differ in length")
            total = 0.0
            for fr, ff in zip(fr_list, ff_list):
                if fr.shape != ff.shape:
                    raise FeatureShapeMismatch(f"feature shapes differ: {tuple(fr.shape)} vs {tuple(ff.shape)}")
                total = total + (fr.detach() - ff).abs().mean()
            terms.append(total)
    return _mean_over_critics(terms)
