"""Image and video quality metrics.

FID and FVD computed with the bundled random-weight extractors are
surrogate values: they rank models consistently within this package but are
NOT comparable to numbers computed with Inception or I3D.
"""
import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.signal import convolve2d
import torch

from .exceptions import (
    DimensionMismatch,
    ExtractorUnavailable,
    NonConvergentSqrt,
    ShapeMismatch,
    WindowLargerThanImage,
)
from .extractors import SURROGATE_NOTE, fit_clip_length

PSNR_CAP = 100.0
REPORT_COLUMNS = ("metric", "task", "value", "n_samples", "extractor_provenance")
RECONSTRUCTION_METRICS = ("FVD", "FID", "LPIPS", "L1", "PSNR", "SSIM")
ANIMATION_METRICS = ("FVD", "FID")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_metric(a, b):
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def psnr(a, b, max_value=1.0):
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_value ** 2 / mse))


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0


def _gaussian_window(size, sigma):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, config=SSIMConfig()):
    """Mean SSIM over all fully contained Gaussian windows of 2-D images.

    With ``c3 = c2 / 2`` and unit exponents, the luminance, contrast and
    structure terms reduce to the usual two-factor expression.
    """
    a, b = _pair(a, b)
    a = np.squeeze(a)
    b = np.squeeze(b)
    if a.ndim != 2:
        raise ShapeMismatch(f"ssim expects single-channel 2-D images, got {a.shape}")
    if min(a.shape) < config.window:
        raise WindowLargerThanImage(f"{config.window}px window exceeds image {a.shape}")
    win = _gaussian_window(config.window, config.sigma)
    c1 = (config.k1 * config.dynamic_range) ** 2
    c2 = (config.k2 * config.dynamic_range) ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def _normalize_channels(f, eps=1e-10):
    return f / (torch.sqrt((f ** 2).sum(dim=1, keepdim=True)) + eps)


def lpips(a, b, extractor):
    """Sum over stages of the spatial mean squared distance between
    channel-normalized features (unit channel weights)."""
    if extractor is None or getattr(extractor, "kind", "image") != "image":
        raise ExtractorUnavailable("lpips needs an image feature extractor")
    ta = _image_tensor(a)
    tb = _image_tensor(b)
    if ta.shape != tb.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    with torch.no_grad():
        total = 0.0
        for fa, fb in zip(extractor(ta), extractor(tb)):
            d = ((_normalize_channels(fa) - _normalize_channels(fb)) ** 2).sum(dim=1)
            total += float(d.mean())
    return total


def _image_tensor(x):
    t = torch.as_tensor(np.ascontiguousarray(x), dtype=torch.float32)
    if t.dim() == 2:
        t = t[None, None]
    elif t.dim() == 3:
        t = t[:, None]
    return t


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 2:
            raise ValueError("need at least two feature vectors")
        cov = np.cov(f, rowvar=False).reshape(f.shape[1], f.shape[1])
        return cls(f.mean(axis=0), 0.5 * (cov + cov.T), f.shape[0])


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(p, q, eps=1e-6):
    """``|mu_p - mu_q|^2 + tr(S_p + S_q - 2 (S_p S_q)^(1/2))``.

    ``tr (S_p S_q)^(1/2)`` is evaluated as ``tr (A S_q A)^(1/2)`` with
    ``A = S_p^(1/2)``, a symmetric PSD product whose eigenvalues are clamped
    at zero. An ``eps * I`` jitter is added on numerical failure.
    """
    mp, mq = np.asarray(p.mean, np.float64), np.asarray(q.mean, np.float64)
    sp, sq = np.asarray(p.covariance, np.float64), np.asarray(q.covariance, np.float64)
    if mp.shape != mq.shape or sp.shape != sq.shape:
        raise DimensionMismatch(f"feature dimensions differ: {mp.shape} vs {mq.shape}")
    diff = mp - mq
    try:
        root = _psd_sqrt(sp)
        cross = _psd_sqrt(root @ sq @ root)
    except (np.linalg.LinAlgError, ValueError):
        jitter = eps * np.eye(len(mp))
        try:
            root = _psd_sqrt(sp + jitter)
            cross = _psd_sqrt(root @ (sq + jitter) @ root)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NonConvergentSqrt(str(exc)) from exc
    if not np.all(np.isfinite(cross)):
        raise NonConvergentSqrt("matrix square root is not finite")
    value = float(diff @ diff + np.trace(sp) + np.trace(sq) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def frechet_distance_sqrtm(p, q):
    """Reference route through ``scipy.linalg.sqrtm`` of the raw product."""
    diff = np.asarray(p.mean) - np.asarray(q.mean)
    covmean = scipy.linalg.sqrtm(np.asarray(p.covariance) @ np.asarray(q.covariance))
    if np.iscomplexobj(covmean):
        if np.abs(covmean.imag).max() > 1e-3:
            raise NonConvergentSqrt("imaginary component in sqrtm")
        covmean = covmean.real
    return float(diff @ diff + np.trace(p.covariance) + np.trace(q.covariance) - 2.0 * np.trace(covmean))


def image_features(images, extractor, batch_size=64):
    """Pooled extractor features (float64) for a stack of 2-D frames."""
    t = _image_tensor(np.asarray(images))
    out = []
    with torch.no_grad():
        for i in range(0, len(t), batch_size):
            out.append(extractor.embed(t[i:i + batch_size]).double().numpy())
    return np.concatenate(out)


def video_features(videos, extractor, frames=16):
    """Pooled features for clips given as ``(T, H, W)`` arrays."""
    if extractor is None or getattr(extractor, "kind", None) != "video":
        raise ExtractorUnavailable("fvd needs a video feature extractor")
    out = []
    with torch.no_grad():
        for clip in videos:
            arr = clip.frames if hasattr(clip, "frames") else clip
            t = torch.as_tensor(np.ascontiguousarray(arr), dtype=torch.float32)[None, None]
            t = fit_clip_length(t, frames)
            out.append(extractor.embed(t).double().numpy()[0])
    return np.stack(out)


def fid(images_a, images_b, extractor):
    if extractor is None:
        raise ExtractorUnavailable("fid needs an image feature extractor")
    fa = FeatureStats.from_features(image_features(images_a, extractor))
    fb = FeatureStats.from_features(image_features(images_b, extractor))
    return frechet_distance(fa, fb)


def fvd(videos_a, videos_b, extractor, frames=16):
    fa = FeatureStats.from_features(video_features(videos_a, extractor, frames))
    fb = FeatureStats.from_features(video_features(videos_b, extractor, frames))
    return frechet_distance(fa, fb)


def clip_fvd(clip_a, clip_b, extractor, window=8):
    """FVD between two single clips using their sliding windows as samples."""
    a = np.asarray(getattr(clip_a, "frames", clip_a))
    b = np.asarray(getattr(clip_b, "frames", clip_b))
    if min(len(a), len(b)) < 2:
        raise ShapeMismatch("clip_fvd needs clips of at least 2 frames")
    # shrink the window so each side yields at least two samples
    window = max(1, min(window, len(a) - 1, len(b) - 1))
    wins_a = [a[i:i + window] for i in range(len(a) - window + 1)]
    wins_b = [b[i:i + window] for i in range(len(b) - window + 1)]
    return fvd(wins_a, wins_b, extractor, frames=window)


# ---------------------------------------------------------------- reports

@dataclass
class MetricRow:
    metric: str
    task: str
    value: float
    n_samples: int
    extractor_provenance: str = ""


def reconstruction_report(generated, reference, image_extractor, video_extractor, task="reconstruction"):
    """Six-metric block for paired clips (lists of ``(T, H, W)`` arrays)."""
    if len(generated) != len(reference):
        raise ShapeMismatch(f"paired metrics need equal clip counts ({len(generated)} vs {len(reference)})")
    gen_frames = np.concatenate([np.asarray(getattr(c, "frames", c)) for c in generated])
    ref_frames = np.concatenate([np.asarray(getattr(c, "frames", c)) for c in reference])
    if gen_frames.shape != ref_frames.shape:
        raise ShapeMismatch(f"frame stacks differ: {gen_frames.shape} vs {ref_frames.shape}")
    n = len(gen_frames)
    rows = animation_report(generated, reference, image_extractor, video_extractor, task)
    rows.append(MetricRow("LPIPS", task, float(np.mean([lpips(g, r, image_extractor) for g, r in zip(gen_frames, ref_frames)])), n, image_extractor.provenance))
    rows.append(MetricRow("L1", task, float(np.mean([l1_metric(g, r) for g, r in zip(gen_frames, ref_frames)])), n))
    rows.append(MetricRow("PSNR", task, float(np.mean([psnr(g, r) for g, r in zip(gen_frames, ref_frames)])), n))
    rows.append(MetricRow("SSIM", task, float(np.mean([ssim(g, r) for g, r in zip(gen_frames, ref_frames)])), n))
    return rows


def animation_report(generated, reference, image_extractor, video_extractor, task="animation"):
    """FVD and FID; clip counts on the two sides may differ."""
    gen_frames = np.concatenate([np.asarray(getattr(c, "frames", c)) for c in generated])
    ref_frames = np.concatenate([np.asarray(getattr(c, "frames", c)) for c in reference])
    return [
        MetricRow("FVD", task, fvd(generated, reference, video_extractor), len(generated), video_extractor.provenance),
        MetricRow("FID", task, fid(gen_frames, ref_frames, image_extractor), len(gen_frames), image_extractor.provenance),
    ]


def report_to_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow([r.metric, r.task, repr(float(r.value)), r.n_samples, r.extractor_provenance])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_report_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report columns in {path}: {reader.fieldnames}")
        return [MetricRow(r["metric"], r["task"], float(r["value"]), int(r["n_samples"]), r["extractor_provenance"]) for r in reader]


def format_table(rows):
    lines = [f"{'metric':<8}{'task':<16}{'value':>14}{'n':>8}  extractor"]
    for r in rows:
        lines.append(f"{r.metric:<8}{r.task:<16}{r.value:>14.6g}{r.n_samples:>8}  {r.extractor_provenance}")
    if any(r.metric in ("FID", "FVD") and "random-seed" in r.extractor_provenance for r in rows):
        lines.append(f"NOTE: FID/FVD from a {SURROGATE_NOTE}")
    return "\n".join(lines)
