"""Dual-decoder generator and its reconstruction losses."""
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .blocks import ConvBlock, DownBlock, ResBlock, UpBlock
from .exceptions import ExtractorUnavailable, ResolutionMismatch, ShapeMismatch
from .extractors import pyramid
from .geometry import bilinear_warp, resize_grid


@dataclass
class GeneratorOutput:
    content: torch.Tensor
    texture: torch.Tensor
    final: torch.Tensor


class _Decoder(nn.Module):
    def __init__(self, channels, first_features, num_channels):
        super().__init__()
        ups = []
        cin = channels[-1]
        for cout in reversed((first_features,) + tuple(channels[:-1])):
            ups.append(UpBlock(cin, cout))
            cin = 2 * cout
        self.ups = nn.ModuleList(ups)
        self.out = nn.Conv2d(cin, num_channels, 7, padding=3)

    def forward(self, x, skips):
        for up, skip in zip(self.ups, skips):
            x = torch.cat([up(x), skip], dim=1)
        return self.out(x)


class Generator(nn.Module):
    """Encode the source, deform features, decode content and texture.

    Encoder features at every resolution are warped by the deformation grid
    and multiplied by the occlusion map, then feed the residual bottleneck
    and every upsampling stage of both decoders.
    """

    def __init__(self, resolution=(64, 64), num_channels=1, first_features=32,
                 down_channels=(64, 128), num_bottleneck_blocks=3):
        super().__init__()
        self.resolution = tuple(resolution)
        self.first = ConvBlock(num_channels, first_features, kernel_size=7)
        downs = []
        cin = first_features
        for cout in down_channels:
            downs.append(DownBlock(cin, cout))
            cin = cout
        self.downs = nn.ModuleList(downs)
        self.bottleneck = nn.Sequential(*[ResBlock(cin) for _ in range(num_bottleneck_blocks)])
        self.content_decoder = _Decoder(tuple(down_channels), first_features, num_channels)
        self.texture_decoder = _Decoder(tuple(down_channels), first_features, num_channels)
        with torch.no_grad():
            self.texture_decoder.out.weight.mul_(0.1)
            self.texture_decoder.out.bias.zero_()

    @staticmethod
    def deform(features, motion):
        n, _, h, w = features.shape
        grid = resize_grid(motion.deformation, (h, w))
        out = bilinear_warp(features, grid)
        occ = motion.occlusion
        if occ.shape[-2:] != (h, w):
            occ = F.interpolate(occ, size=(h, w), mode="bilinear", align_corners=True)
        return out * occ

    def forward(self, source, motion):
        if source.dim() != 4 or tuple(source.shape[-2:]) != self.resolution:
            raise ResolutionMismatch(f"expected source at {self.resolution}, got {tuple(source.shape)}")
        feats = [self.first(source)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        deformed = [self.deform(f, motion) for f in feats]
        x = self.bottleneck(deformed[-1])
        skips = deformed[-2::-1]
        content = torch.sigmoid(self.content_decoder(x, skips))
        texture = self.texture_decoder(x, skips)
        return GeneratorOutput(content, texture, content + texture)


def generate(source, motion, generator):
    return generator(source, motion)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def reconstruction_l1(driving, content, levels=3):
    """Sum over ``levels + 1`` pyramid levels of the mean absolute difference."""
    _check_pair(driving, content)
    return sum((a - b).abs().mean() for a, b in zip(pyramid(driving, levels), pyramid(content, levels)))


def perceptual_loss(driving, final, extractor, levels=3):
    """Sum over pyramid levels and extractor stages of mean absolute feature differences."""
    if extractor is None:
        raise ExtractorUnavailable("perceptual loss needs a feature extractor")
    _check_pair(driving, final)
    total = 0.0
    for a, b in zip(pyramid(driving, levels), pyramid(final, levels)):
        with torch.no_grad():
            target = extractor(a)
        for fa, fb in zip(target, extractor(b)):
            total = total + (fa - fb).abs().mean()
    return total
