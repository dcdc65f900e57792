"""Test-time synthesis and per-clip adaptation under a keypoint-trajectory
Hausdorff constraint."""
import copy
from dataclasses import dataclass

import numpy as np
import torch

from .data import VideoClip
from .exceptions import ClipTooLong, ShapeMismatch, VideoTooShort
from .extractors import VideoFeatureExtractor
from .geometry import hausdorff_twoway
from .metrics import clip_fvd

MAX_ADAPT_FRAMES = 16
ADAPT_LR = 1e-5


def _frames_tensor(x, dtype):
    arr = x.frames if isinstance(x, VideoClip) else x
    t = torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)
    if t.dim() == 2:
        t = t[None]
    return t[:, None]


def _dtype(model):
    return next(model.parameters()).dtype


def _forward_clip(model, source, driving):
    """Generator outputs for every driving frame, keeping the graph."""
    n = driving.shape[0]
    src = source.expand(n, -1, -1, -1)
    return model(src, driving)


def synthesize_clip(source, driving, model):
    """Animate ``source (H, W)`` with every frame of ``driving``; returns a VideoClip."""
    if len(driving) < 2:
        raise VideoTooShort("driving clip needs at least 2 frames")
    dtype = _dtype(model)
    model.eval()
    with torch.no_grad():
        out = _forward_clip(model, _frames_tensor(source, dtype), _frames_tensor(driving, dtype))
    frames = out["output"].final.clamp(0, 1)[:, 0].float().numpy()
    vid = getattr(driving, "video_id", "")
    return VideoClip(frames, f"generated_{vid}" if vid else "generated")


def extract_trajectories(frames, detector):
    """Keypoint trajectories ``(K, T, 2)`` for frames ``(T, 1, H, W)``."""
    return detector(frames).value.transpose(0, 1)


def trajectory_hsd_loss(drv, gen):
    """Sum over keypoints of the two-way Hausdorff distance between
    trajectories, each treated as an unordered point set."""
    if drv.shape != gen.shape or drv.dim() != 3 or drv.shape[-1] != 2:
        raise ShapeMismatch(f"trajectory sets differ: {tuple(drv.shape)} vs {tuple(gen.shape)}")
    return sum(hausdorff_twoway(p, g) for p, g in zip(drv, gen))


@dataclass
class AdaptationRecord:
    iteration: int
    hsd_loss: float
    fvd: float


def adapt_and_synthesize(source, driving, model, iterations=10, lr=ADAPT_LR, hsd_weight=1.0,
                         video_extractor=None, fvd_window=8, return_candidates=False):
    """Fine-tune a private copy of ``model`` on one clip.

    Candidate 0 is the unadapted synthesis; candidate ``i`` follows ``i``
    optimizer steps on the detector, generator and background predictor
    (dense motion stays frozen). The candidate with the lowest clip FVD
    against the driving clip is returned (earliest on ties), with one
    AdaptationRecord per candidate.
    """
    if len(driving) > MAX_ADAPT_FRAMES:
        raise ClipTooLong(f"adaptation clips are limited to {MAX_ADAPT_FRAMES} frames, got {len(driving)}")
    if len(driving) < 2:
        raise VideoTooShort("driving clip needs at least 2 frames")
    extractor = video_extractor or VideoFeatureExtractor()
    local = copy.deepcopy(model)
    local.eval()
    for p in local.dense_motion.parameters():
        p.requires_grad_(False)
    params = [p for m in (local.kp_detector, local.generator, local.bg_predictor) for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=lr, betas=(0.5, 0.999))
    dtype = _dtype(local)
    src = _frames_tensor(source, dtype)
    drv = _frames_tensor(driving, dtype)
    drv_np = drv[:, 0].float().numpy()
    vid = getattr(driving, "video_id", "")

    records, candidates = [], []
    for it in range(iterations + 1):
        out = _forward_clip(local, src, drv)
        final = out["output"].final
        gen_traj = extract_trajectories(final, local.kp_detector)
        drv_traj = out["kp_driving"].value.detach().transpose(0, 1)
        hsd = trajectory_hsd_loss(drv_traj, gen_traj)
        frames = final.detach().clamp(0, 1)[:, 0].float().numpy()
        candidates.append(frames)
        records.append(AdaptationRecord(it, float(hsd.detach()), clip_fvd(frames, drv_np, extractor, fvd_window)))
        if it < iterations:
            opt.zero_grad(set_to_none=True)
            (hsd_weight * hsd).backward()
            opt.step()
    best = min(range(len(records)), key=lambda i: (records[i].fvd, i))
    clip = VideoClip(candidates[best], f"adapted_{vid}" if vid else "adapted", metadata={"selected_iteration": best})
    if return_candidates:
        return clip, records, [VideoClip(c, f"candidate_{i:02d}") for i, c in enumerate(candidates)]
    return clip, records
