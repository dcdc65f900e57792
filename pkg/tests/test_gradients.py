"""Central finite differences against autograd, double precision, 32x32 / K=3."""
import math
from dataclasses import replace

import pytest
import torch

from motionsynth.adaptation import extract_trajectories, trajectory_hsd_loss
from motionsynth.config import PRESETS
from motionsynth.discriminators import feature_matching_loss, lsgan_generator_loss
from motionsynth.extractors import ImageFeatureExtractor
from motionsynth.generator import perceptual_loss, reconstruction_l1
from motionsynth.geometry import random_tps
from motionsynth.motion_nets import equivariance_loss, supervised_keypoint_loss
from motionsynth.training import MotionTransferModel, build_discriminator

D = torch.float64
EPS = 1e-6
TOL = 1e-3


def directional(f, params, seed):
    """``(autograd, finite difference)`` derivative of ``f`` along a random unit direction."""
    gen = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    norm = math.sqrt(sum(float((d ** 2).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    grads = torch.autograd.grad(f(), params, allow_unused=True)
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs) if g is not None)
    with torch.no_grad():
        for p, d in zip(params, dirs):
            p.add_(EPS * d)
        plus = float(f())
        for p, d in zip(params, dirs):
            p.sub_(2 * EPS * d)
        minus = float(f())
        for p, d in zip(params, dirs):
            p.add_(EPS * d)
    return analytic, (plus - minus) / (2 * EPS)


def assert_close(analytic, fd):
    assert abs(analytic) > 1e-8, "degenerate direction"
    assert abs(analytic - fd) / max(abs(analytic), abs(fd)) < TOL, (analytic, fd)


def make_setup(clip):
    cfg = replace(PRESETS["tiny"], num_keypoints=3, supervised_count=1)
    torch.manual_seed(0)
    model = MotionTransferModel(cfg).to(D)
    # move the background head off its identity initialization
    with torch.no_grad():
        model.bg_predictor.head.weight.normal_(0, 0.02)
    disc = build_discriminator(cfg).to(D).eval()
    frames = torch.as_tensor(clip.frames[:, None], dtype=D)
    return {"model": model, "disc": disc, "source": frames[0:2], "driving": frames[3:5], "cfg": cfg}


def _forward(s):
    return s["model"](s["source"], s["driving"])


def _params(*modules):
    return [p for m in modules for p in m.parameters()]


def equivariance_case(s, seed=0):
    det = s["model"].kp_detector
    tps = [random_tps(10 + seed, 0.05), random_tps(20 + seed, 0.05)]

    def f():
        l1, l2 = equivariance_loss(det, s["driving"], tps)
        return l1 + l2

    return directional(f, _params(det), seed)


def heatmap_case(s):
    det = s["model"].kp_detector
    ann = torch.tensor([[[0.1, -0.2]], [[-0.3, 0.25]]], dtype=D)
    return directional(lambda: supervised_keypoint_loss(det(s["driving"]).heatmap, ann, 1)[0], _params(det), 3)


def reconstruction_case(s):
    m = s["model"]
    f = lambda: reconstruction_l1(s["driving"], _forward(s)["output"].content)
    return directional(f, _params(m.generator, m.dense_motion, m.bg_predictor), 4)


def perceptual_case(s):
    ext = ImageFeatureExtractor().to(D)
    f = lambda: perceptual_loss(s["driving"], _forward(s)["output"].final, ext)
    return directional(f, _params(s["model"].generator), 5)


def lsgan_case(s):
    f = lambda: lsgan_generator_loss(s["disc"](_forward(s)["output"].final))
    return directional(f, _params(s["model"].generator), 6)


def feature_matching_case(s):
    with torch.no_grad():
        real = s["disc"](s["driving"])
    f = lambda: feature_matching_loss(real, s["disc"](_forward(s)["output"].final))
    return directional(f, _params(s["model"].generator), 7)


def mask_case(s):
    weights = torch.randn(2, 4, 16, 16, generator=torch.Generator().manual_seed(8), dtype=D)
    f = lambda: (_forward(s)["motion"].masks * weights).sum()
    return directional(f, _params(s["model"].dense_motion), 8)


def hsd_points_case(s):
    gen = torch.Generator().manual_seed(9)
    drv = torch.rand(3, 6, 2, generator=gen, dtype=D) * 2 - 1
    pts = (torch.rand(3, 6, 2, generator=gen, dtype=D) * 2 - 1).requires_grad_(True)
    return directional(lambda: trajectory_hsd_loss(drv, pts), [pts], 9)


def hsd_detector_case(s):
    det = s["model"].kp_detector
    drv = extract_trajectories(s["driving"], det).detach()
    f = lambda: trajectory_hsd_loss(drv, extract_trajectories(s["source"], det))
    return directional(f, _params(det), 10)


CASES = {
    "equivariance": equivariance_case,
    "equivariance_seed1": lambda s: equivariance_case(s, 1),
    "heatmap": heatmap_case,
    "reconstruction_l1": reconstruction_case,
    "perceptual": perceptual_case,
    "lsgan_generator": lsgan_case,
    "feature_matching": feature_matching_case,
    "dense_motion_masks": mask_case,
    "hsd_points": hsd_points_case,
    "hsd_detector": hsd_detector_case,
}


@pytest.fixture(scope="module")
def setup(tiny_clip):
    return make_setup(tiny_clip)


@pytest.mark.parametrize("name", list(CASES))
def test_gradient(setup, name):
    assert_close(*CASES[name](setup))
