import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motionsynth.exceptions import DimensionMismatch, ExtractorUnavailable, ShapeMismatch, WindowLargerThanImage
from motionsynth.extractors import IdentityExtractor, ImageFeatureExtractor, VideoFeatureExtractor, fit_clip_length
from motionsynth.metrics import (
    ANIMATION_METRICS,
    RECONSTRUCTION_METRICS,
    FeatureStats,
    MetricRow,
    animation_report,
    clip_fvd,
    fid,
    format_table,
    frechet_distance,
    frechet_distance_sqrtm,
    fvd,
    image_features,
    l1_metric,
    lpips,
    psnr,
    read_report_csv,
    reconstruction_report,
    report_to_csv,
    ssim,
)
from oracles import frechet_scalar, ssim_loop

images = arrays(np.float64, (16, 16), elements=st.floats(0, 1))


# ---------------------------------------------------------------- L1 / PSNR

def test_l1_cases(rng):
    a = rng.random((8, 8))
    assert l1_metric(a, a) == 0.0
    assert l1_metric(np.zeros((4, 4)), np.full((4, 4), 0.25)) == 0.25
    b = rng.random((8, 8))
    assert abs(l1_metric(a, b) - sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / 64) < 1e-9
    with pytest.raises(ShapeMismatch):
        l1_metric(a, a[:4])


def test_psnr_cases():
    a = np.zeros((10, 10))
    assert psnr(a, a) == 100.0
    assert abs(psnr(a, np.full((10, 10), 0.1)) - 20.0) < 1e-9  # MSE 0.01
    assert abs(psnr(a, np.ones((10, 10)))) < 1e-12  # MSE 1
    with pytest.raises(ShapeMismatch):
        psnr(a, a[:2])


def test_psnr_decreasing_in_mse():
    a = np.zeros((4, 4))
    values = [psnr(a, np.full((4, 4), d)) for d in (0.01, 0.05, 0.2, 0.7)]
    assert all(x > y for x, y in zip(values, values[1:]))


# ---------------------------------------------------------------- SSIM

def test_ssim_identical(rng):
    x = rng.random((32, 32))
    assert abs(ssim(x, x) - 1.0) < 1e-6


def test_ssim_constant_images():
    c1 = 0.01 ** 2
    got = ssim(np.zeros((16, 16)), np.ones((16, 16)))
    assert abs(got - c1 / (1 + c1)) < 1e-8


def test_ssim_matches_three_factor_loop(rng):
    a, b = rng.random((2, 14, 15))
    assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) < 1e-9
    assert -1 - 1e-9 <= s <= 1 + 1e-9


def test_ssim_window_too_large():
    with pytest.raises(WindowLargerThanImage):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ---------------------------------------------------------------- LPIPS

def test_lpips_identical_is_zero(rng):
    x = rng.random((32, 32))
    assert lpips(x, x, ImageFeatureExtractor()) == 0.0


def test_lpips_single_channel_normalizes_away_intensity():
    # with one channel every nonzero feature normalizes to +1
    a, b = np.full((1, 1), 0.2), np.full((1, 1), 1.0)
    assert lpips(a, b, IdentityExtractor()) == pytest.approx(0.0, abs=1e-12)


def test_lpips_zero_feature_stays_zero():
    # a zero feature cannot be normalized to a unit vector
    assert lpips(np.zeros((1, 1)), np.ones((1, 1)), IdentityExtractor()) == pytest.approx(1.0, abs=1e-6)


def test_lpips_matches_independent_recomputation(rng):
    ext = ImageFeatureExtractor(channels=(4, 8), seed=5)
    a, b = rng.random((2, 16, 16)).astype(np.float32)
    expected = 0.0
    with torch.no_grad():
        for fa, fb in zip(ext(torch.tensor(a)[None, None]), ext(torch.tensor(b)[None, None])):
            fa, fb = fa[0].double().numpy(), fb[0].double().numpy()
            na = fa / (np.sqrt((fa ** 2).sum(0)) + 1e-10)
            nb = fb / (np.sqrt((fb ** 2).sum(0)) + 1e-10)
            expected += ((na - nb) ** 2).sum(0).mean()
    assert lpips(a, b, ext) == pytest.approx(expected, abs=1e-6)


def test_lpips_symmetric(rng):
    a, b = rng.random((2, 16, 16))
    ext = ImageFeatureExtractor()
    assert lpips(a, b, ext) == pytest.approx(lpips(b, a, ext), abs=1e-9)


def test_lpips_rejects_video_extractor(rng):
    with pytest.raises(ExtractorUnavailable):
        lpips(rng.random((8, 8)), rng.random((8, 8)), VideoFeatureExtractor())


# ---------------------------------------------------------------- Frechet

def _stats(mean, cov):
    return FeatureStats(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)), 10)


def test_frechet_identity(rng):
    f = rng.normal(size=(50, 6))
    s = FeatureStats.from_features(f)
    assert frechet_distance(s, s) < 1e-6


def test_frechet_scalar_closed_form():
    got = frechet_distance(_stats([0.0], [[1.7]]), _stats([2.0], [[1.7]]))
    assert abs(got - frechet_scalar(0.0, 1.7, 2.0, 1.7)) < 1e-9
    assert abs(got - 4.0) < 1e-9


def test_frechet_diagonal_closed_form():
    got = frechet_distance(_stats([0, 0], np.diag([1.0, 4.0])), _stats([0, 0], np.diag([4.0, 1.0])))
    assert abs(got - 2.0) < 1e-8


def test_frechet_symmetric_and_matches_sqrtm_route(rng):
    p = FeatureStats.from_features(rng.normal(size=(40, 5)))
    q = FeatureStats.from_features(rng.normal(1.0, 2.0, size=(30, 5)))
    assert abs(frechet_distance(p, q) - frechet_distance(q, p)) < 1e-8
    assert frechet_distance(p, q) == pytest.approx(frechet_distance_sqrtm(p, q), rel=1e-8)


def test_frechet_rank_deficient_is_non_negative(rng):
    p = FeatureStats.from_features(rng.normal(size=(3, 20)))
    q = FeatureStats.from_features(rng.normal(size=(3, 20)))
    assert frechet_distance(p, q) >= 0


def test_frechet_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        frechet_distance(_stats([0, 0], np.eye(2)), _stats([0, 0, 0], np.eye(3)))


def test_feature_stats_oracle(rng):
    f = rng.normal(size=(25, 4))
    s = FeatureStats.from_features(f)
    centered = f - f.mean(0)
    np.testing.assert_allclose(s.covariance, centered.T @ centered / 24, atol=1e-12)
    np.testing.assert_allclose(s.covariance, s.covariance.T, atol=1e-8)
    assert s.count == 25


# ---------------------------------------------------------------- FID / FVD

def test_fid_identical_and_order_invariant(rng):
    ext = ImageFeatureExtractor()
    a = rng.random((12, 16, 16))
    b = rng.random((10, 16, 16)) ** 2
    assert fid(a, a, ext) <= 1e-5
    assert fid(a, b, ext) >= 0
    # 10 samples in 64 dims: sqrt of near-zero eigenvalues amplifies rounding
    assert fid(a[::-1], b[rng.permutation(10)], ext) == pytest.approx(fid(a, b, ext), rel=1e-8)


def test_fid_matches_independent_stats(rng):
    ext = ImageFeatureExtractor()
    a, b = rng.random((8, 16, 16)), rng.random((9, 16, 16)) * 0.5
    fa, fb = image_features(a, ext), image_features(b, ext)
    mu = fa.mean(0) - fb.mean(0)
    ca, cb = np.cov(fa, rowvar=False), np.cov(fb, rowvar=False)
    root = scipy.linalg.sqrtm(ca @ cb).real
    expected = mu @ mu + np.trace(ca + cb - 2 * root)
    assert fid(a, b, ext) == pytest.approx(expected, abs=1e-6)


def test_fvd_identical_and_order_invariant(rng):
    ext = VideoFeatureExtractor()
    clips = [rng.random((8, 16, 16)) for _ in range(5)]
    other = [c[::-1] ** 2 for c in clips]
    assert fvd(clips, clips, ext) <= 1e-5
    assert abs(fvd(clips, other, ext) - fvd(clips[::-1], other[::-1], ext)) < 1e-9


class TemporalMean:
    """Video extractor stub that ignores time: averages frames, then embeds."""

    kind = "video"
    provenance = "stub"

    def __init__(self):
        self.image = ImageFeatureExtractor()

    def embed(self, clip):
        return self.image.embed(clip.mean(dim=2))


def test_fvd_repeated_frames_follow_fid_ordering(rng):
    stub = TemporalMean()
    ref = rng.random((6, 16, 16))
    near = np.clip(ref + 0.02 * rng.normal(size=ref.shape), 0, 1)
    far = rng.random((6, 16, 16)) ** 3
    rep = lambda frames: [np.repeat(f[None], 4, axis=0) for f in frames]
    for stats in (fvd(rep(near), rep(ref), stub), fvd(rep(far), rep(ref), stub)):
        assert stats >= 0
    assert (fvd(rep(near), rep(ref), stub) < fvd(rep(far), rep(ref), stub)) == (
        fid(near, ref, stub.image) < fid(far, ref, stub.image))
    assert fvd(rep(near), rep(ref), stub) == pytest.approx(fid(near, ref, stub.image), abs=1e-6)


def test_fvd_requires_video_extractor(rng):
    with pytest.raises(ExtractorUnavailable):
        fvd([rng.random((4, 8, 8))] * 2, [rng.random((4, 8, 8))] * 2, ImageFeatureExtractor())


def test_fit_clip_length():
    clip = torch.arange(5.0).reshape(1, 1, 5, 1, 1)
    assert fit_clip_length(clip, 3).flatten().tolist() == [0.0, 2.0, 4.0]
    assert fit_clip_length(clip, 7).flatten().tolist() == [0, 1, 2, 3, 4, 4, 4]
    assert fit_clip_length(clip, 5) is clip


def test_clip_fvd_identity_and_short_clips(rng):
    ext = VideoFeatureExtractor()
    c = rng.random((8, 16, 16)).astype(np.float32)
    assert clip_fvd(c, c, ext) <= 1e-5
    assert clip_fvd(c[:3], c[:3] * 0.5, ext) >= 0
    with pytest.raises(ShapeMismatch):
        clip_fvd(c[:1], c, ext)


# ---------------------------------------------------------------- reports

def test_reconstruction_report_identity_corpus(rng, tmp_path):
    clips = [rng.random((6, 16, 16)).astype(np.float32) for _ in range(3)]
    rows = reconstruction_report(clips, clips, ImageFeatureExtractor(), VideoFeatureExtractor())
    assert tuple(r.metric for r in rows) == RECONSTRUCTION_METRICS
    vals = {r.metric: r.value for r in rows}
    assert vals["L1"] == 0 and vals["SSIM"] == pytest.approx(1.0, abs=1e-6)
    assert vals["FID"] <= 1e-4 and vals["FVD"] <= 1e-4 and vals["LPIPS"] == 0 and vals["PSNR"] == 100.0
    path = tmp_path / "m.csv"
    report_to_csv(rows, path)
    assert path.read_text().splitlines()[0] == "metric,task,value,n_samples,extractor_provenance"
    assert read_report_csv(path) == rows
    assert "NOTE" in format_table(rows) and "surrogate" in format_table(rows)


def test_paired_metrics_reject_unequal_counts(rng):
    a = [rng.random((4, 16, 16)) for _ in range(3)]
    with pytest.raises(ShapeMismatch):
        reconstruction_report(a, a[:2], ImageFeatureExtractor(), VideoFeatureExtractor())
    rows = animation_report(a, a[:2], ImageFeatureExtractor(), VideoFeatureExtractor())
    assert tuple(r.metric for r in rows) == ANIMATION_METRICS


def test_extractors_deterministic(rng):
    x = torch.tensor(rng.random((2, 1, 16, 16)), dtype=torch.float32)
    a, b = ImageFeatureExtractor(), ImageFeatureExtractor()
    assert torch.equal(a.embed(x), b.embed(x))
    assert a.provenance == "random-seed-initialized(seed=1234)"
    assert not any(p.requires_grad for p in a.parameters())


def test_extractor_weights_from_file(tmp_path):
    ext = ImageFeatureExtractor(seed=7)
    path = tmp_path / "w.pt"
    torch.save(ext.state_dict(), path)
    loaded = ImageFeatureExtractor(seed=1, path=path)
    assert loaded.provenance.startswith("loaded-from-file")
    x = torch.rand(1, 1, 16, 16)
    assert torch.equal(loaded.embed(x), ext.embed(x))
    with pytest.raises(ExtractorUnavailable):
        ImageFeatureExtractor(path=tmp_path / "missing.pt")


def test_metric_row_fields():
    assert MetricRow("L1", "reconstruction", 0.5, 3).extractor_provenance == ""
