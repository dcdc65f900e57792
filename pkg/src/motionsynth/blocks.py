"""Convolutional building blocks shared by the networks."""
import torch
from torch import nn
import torch.nn.functional as F


def norm_layer(channels):
    # GroupNorm keeps every network independent of batch composition.
    return nn.GroupNorm(min(8, channels), channels)


class ConvBlock(nn.Module):
    def __init__(self, in_features, out_features, kernel_size=3):
        super().__init__()
        self.conv = nn.Conv2d(in_features, out_features, kernel_size, padding=kernel_size // 2)
        self.norm = norm_layer(out_features)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class DownBlock(ConvBlock):
    def forward(self, x):
        return F.avg_pool2d(super().forward(x), 2)


class UpBlock(ConvBlock):
    def forward(self, x):
        return super().forward(F.interpolate(x, scale_factor=2, mode="nearest"))


class ResBlock(nn.Module):
    """Two 3x3 convolutions with an identity shortcut."""

    def __init__(self, features):
        super().__init__()
        self.norm1 = norm_layer(features)
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.norm2 = norm_layer(features)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, x):
        out = self.conv1(F.relu(self.norm1(x)))
        out = self.conv2(F.relu(self.norm2(out)))
        return x + out


class Hourglass(nn.Module):
    """U-Net style encoder/decoder with skip connections.

    The output has ``block_expansion + in_features`` channels at the input
    resolution. Input sides must be divisible by ``2 ** num_blocks``.
    """

    def __init__(self, in_features, block_expansion=32, num_blocks=3, max_features=256):
        super().__init__()
        self.num_blocks = num_blocks
        down = []
        for i in range(num_blocks):
            cin = in_features if i == 0 else min(max_features, block_expansion * 2 ** i)
            down.append(DownBlock(cin, min(max_features, block_expansion * 2 ** (i + 1))))
        self.down = nn.ModuleList(down)
        up = []
        for i in reversed(range(num_blocks)):
            cin = (1 if i == num_blocks - 1 else 2) * min(max_features, block_expansion * 2 ** (i + 1))
            up.append(UpBlock(cin, min(max_features, block_expansion * 2 ** i)))
        self.up = nn.ModuleList(up)
        self.out_filters = block_expansion + in_features

    def forward(self, x):
        skips = [x]
        for block in self.down:
            skips.append(block(skips[-1]))
        out = skips.pop()
        for block in self.up:
            out = block(out)
            out = torch.cat([out, skips.pop()], dim=1)
        return out
