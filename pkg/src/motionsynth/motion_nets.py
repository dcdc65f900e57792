"""Keypoint detector, background affine predictor, dense motion network and
the motion-side training losses."""
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .blocks import Hourglass, norm_layer
from .exceptions import IndexOutOfRange, ResolutionMismatch, ShapeMismatch
from .geometry import (
    KeypointSet,
    affine_grid,
    bilinear_warp,
    coordinate_grid,
    mat2_mul,
    mat2_solve,
    sparse_motion,
)

KP_VARIANCE = 0.01


def soft_argmax(logits, temperature=1.0):
    """Spatial softmax expectation of ``logits (..., H, W)``.

    Returns ``(positions (..., 2), heatmap (..., H, W))`` where the heatmap
    is the softmax over the spatial axes.
    """
    h, w = logits.shape[-2:]
    flat = logits.reshape(*logits.shape[:-2], h * w) / temperature
    heat = F.softmax(flat, dim=-1).reshape(logits.shape)
    grid = coordinate_grid(h, w, dtype=logits.dtype, device=logits.device)
    pos = (heat[..., None] * grid).sum(dim=(-3, -2))
    return pos, heat


def gaussian_map(points, size, variance=KP_VARIANCE):
    """``exp(-|z - p|^2 / (2 variance))`` for points ``(..., 2)`` -> ``(..., H, W)``."""
    grid = coordinate_grid(*size, dtype=points.dtype, device=points.device)
    d2 = ((grid - points[..., None, None, :]) ** 2).sum(-1)
    return torch.exp(-0.5 * d2 / variance)


def _check_frame(frame, resolution):
    if frame.dim() != 4 or tuple(frame.shape[-2:]) != tuple(resolution):
        raise ResolutionMismatch(
            f"expected frames (N, C, {resolution[0]}, {resolution[1]}), got {tuple(frame.shape)}"
        )


class KeypointDetector(nn.Module):
    """Hourglass keypoint detector with per-keypoint Jacobians.

    Heatmaps are predicted at ``resolution / 4``. Positions are the soft-argmax
    of each channel; Jacobians are the heatmap-weighted sum of four extra
    channels per keypoint, initialized to the identity.
    """

    def __init__(self, num_kp=5, supervised_count=2, resolution=(64, 64), num_channels=1,
                 block_expansion=32, num_blocks=2, max_features=256, temperature=0.1, scale_factor=0.25):
        super().__init__()
        if not 0 <= supervised_count <= num_kp:
            raise ValueError("supervised_count must lie in [0, num_kp]")
        self.num_kp = num_kp
        self.supervised_count = supervised_count
        self.resolution = tuple(resolution)
        self.temperature = temperature
        self.pool = int(round(1 / scale_factor))
        self.predictor = Hourglass(num_channels, block_expansion, num_blocks, max_features)
        self.kp = nn.Conv2d(self.predictor.out_filters, num_kp, 7, padding=3)
        self.jacobian = nn.Conv2d(self.predictor.out_filters, 4 * num_kp, 7, padding=3)
        nn.init.zeros_(self.jacobian.weight)
        with torch.no_grad():
            self.jacobian.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 1.0]).repeat(num_kp))

    def forward(self, frame):
        _check_frame(frame, self.resolution)
        x = F.avg_pool2d(frame, self.pool) if self.pool > 1 else frame
        feat = self.predictor(x)
        logits = self.kp(feat)
        value, heat = soft_argmax(logits, self.temperature)
        n, k, h, w = heat.shape
        jac = self.jacobian(feat).reshape(n, k, 4, h, w)
        jac = (jac * heat[:, :, None]).sum(dim=(-2, -1)).reshape(n, k, 2, 2)
        return KeypointSet(value, jac, self.supervised_count, heat)


def detect_keypoints(frame, detector):
    """Run ``detector`` on ``frame`` and return ``(KeypointSet, heatmap)``."""
    kps = detector(frame)
    return kps, kps.heatmap


class BackgroundPredictor(nn.Module):
    """Residual conv regressor producing a 2x3 affine per frame pair.

    The head is zero-initialized and read as a residual on the identity, so
    an untrained predictor outputs exactly the identity transform.
    """

    def __init__(self, resolution=(64, 64), num_channels=1, channels=(16, 32, 64)):
        super().__init__()
        self.resolution = tuple(resolution)
        layers = [nn.Conv2d(2 * num_channels, channels[0], 3, stride=2, padding=1), norm_layer(channels[0]), nn.ReLU()]
        cin = channels[0]
        for cout in channels:
            layers.append(_BasicBlock(cin, cout, stride=1 if cout == cin else 2))
            cin = cout
        self.backbone = nn.Sequential(*layers)
        self.head = nn.Linear(cin, 6)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, source, driving):
        _check_frame(source, self.resolution)
        _check_frame(driving, self.resolution)
        feat = self.backbone(torch.cat([source, driving], dim=1)).mean(dim=(-2, -1))
        r = self.head(feat)
        ident = torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], dtype=r.dtype, device=r.device)
        return (r + ident).reshape(-1, 2, 3)


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = norm_layer(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = norm_layer(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride)

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


@dataclass
class MotionField:
    """Blended backward deformation, blend masks and occlusion map."""

    deformation: torch.Tensor  # (N, H', W', 2)
    masks: torch.Tensor  # (N, K + 1, H', W'); channel 0 is the background
    occlusion: torch.Tensor  # (N, 1, H', W')
    sparse_grids: torch.Tensor = None  # (N, K + 1, H', W', 2)


class DenseMotionNetwork(nn.Module):
    """Predicts blend masks over K+1 candidate deformations and an occlusion map.

    Candidate 0 is the background affine grid, candidates 1..K come from
    :func:`sparse_motion`. The network sees the keypoint heatmap differences
    and the source warped by every candidate.
    """

    def __init__(self, num_kp=5, resolution=(64, 64), num_channels=1, block_expansion=32,
                 num_blocks=3, max_features=256, scale_factor=0.5, kp_variance=KP_VARIANCE):
        super().__init__()
        self.num_kp = num_kp
        self.resolution = tuple(resolution)
        self.pool = int(round(1 / scale_factor))
        self.kp_variance = kp_variance
        in_features = num_kp + (num_kp + 1) * num_channels
        self.hourglass = Hourglass(in_features, block_expansion, num_blocks, max_features)
        self.mask = nn.Conv2d(self.hourglass.out_filters, num_kp + 1, 7, padding=3)
        self.occlusion = nn.Conv2d(self.hourglass.out_filters, 1, 7, padding=3)

    @property
    def motion_size(self):
        return (self.resolution[0] // self.pool, self.resolution[1] // self.pool)

    def forward(self, source, kp_source, kp_driving, bg, mask_override=None):
        _check_frame(source, self.resolution)
        if kp_source.num_keypoints != self.num_kp:
            raise ShapeMismatch(f"expected {self.num_kp} keypoints, got {kp_source.num_keypoints}")
        src = F.avg_pool2d(source, self.pool) if self.pool > 1 else source
        n, c, h, w = src.shape
        heat = gaussian_map(kp_driving.value, (h, w), self.kp_variance) - gaussian_map(
            kp_source.value, (h, w), self.kp_variance
        )
        bg_grid = affine_grid(bg.to(src.dtype), h, w, dtype=src.dtype)[:, None]
        grids = torch.cat([bg_grid, sparse_motion(kp_source, kp_driving, (h, w))], dim=1)
        k1 = grids.shape[1]
        repeated = src[:, None].expand(n, k1, c, h, w).reshape(n * k1, c, h, w)
        warped = bilinear_warp(repeated, grids.reshape(n * k1, h, w, 2)).reshape(n, k1 * c, h, w)
        feat = self.hourglass(torch.cat([heat, warped], dim=1))
        masks = F.softmax(self.mask(feat), dim=1) if mask_override is None else mask_override
        occlusion = torch.sigmoid(self.occlusion(feat))
        deformation = (masks[..., None] * grids).sum(dim=1)
        return MotionField(deformation, masks, occlusion, grids)


# ---------------------------------------------------------------- losses

def _tps_list(tps, n):
    if isinstance(tps, (list, tuple)):
        if len(tps) != n:
            raise ShapeMismatch(f"need one transform per frame ({n}), got {len(tps)}")
        return list(tps)
    return [tps] * n


def equivariance_loss(detector, frame, tps, kp_frame=None):
    """Keypoint equivariance under a known deformation.

    ``tps`` maps points of the deformed frame back into ``frame`` and exposes
    ``jacobian``. Returns ``(l_eq1, l_eq2)`` averaged over the
    self-supervised keypoints (indices ``>= supervised_count``).
    """
    n, _, h, w = frame.shape
    transforms = _tps_list(tps, n)
    grids = torch.stack([t.grid(h, w, dtype=frame.dtype) for t in transforms])
    deformed = bilinear_warp(frame, grids)
    kp_x = detector(frame) if kp_frame is None else kp_frame
    kp_y = detector(deformed)
    s = kp_x.supervised_count
    if s >= kp_x.num_keypoints:
        zero = frame.new_zeros(())
        return zero, zero
    pos_y = kp_y.value[:, s:]
    mapped = torch.stack([t(p) for t, p in zip(transforms, pos_y)])
    l_eq1 = (kp_x.value[:, s:] - mapped).abs().sum(-1).mean()

    tps_jac = torch.stack([t.jacobian(p) for t, p in zip(transforms, pos_y)])
    transformed = mat2_mul(tps_jac, kp_y.jacobian[:, s:])
    product = mat2_solve(kp_x.jacobian[:, s:], transformed)
    eye = torch.eye(2, dtype=product.dtype, device=product.device)
    l_eq2 = (eye - product).abs().sum(dim=(-2, -1)).mean()
    return l_eq1, l_eq2


def gaussian_target(points, size, variance=KP_VARIANCE):
    """Unit-sum Gaussian heatmaps centered at ``points (..., 2)``."""
    g = gaussian_map(points, size, variance)
    return g / g.sum(dim=(-2, -1), keepdim=True)


def supervised_keypoint_loss(heatmap, annotations, supervised_count=None, variance=KP_VARIANCE):
    """Mean squared heatmap error on annotated keypoints.

    ``annotations`` is ``(N, A, 2)`` in normalized coordinates with NaN rows
    marking absent landmarks; column ``a`` targets heatmap channel ``a``.
    Returns ``(loss, supervised)`` where ``supervised`` is False when nothing
    was annotated (the loss is then zero).
    """
    annotations = torch.as_tensor(annotations, dtype=heatmap.dtype, device=heatmap.device)
    if annotations.dim() == 2:
        annotations = annotations[None]
    count = heatmap.shape[1] if supervised_count is None else supervised_count
    if annotations.shape[1] > count:
        raise IndexOutOfRange(f"annotation index {annotations.shape[1] - 1} >= supervised_count {count}")
    present = torch.isfinite(annotations).all(dim=-1)
    if not bool(present.any()):
        return heatmap.new_zeros(()), False
    a = annotations.shape[1]
    pred = heatmap[:, :a][present]
    target = gaussian_target(annotations[present], heatmap.shape[-2:], variance)
    loss = ((pred - target) ** 2).mean(dim=(-2, -1)).mean()
    return loss, True
