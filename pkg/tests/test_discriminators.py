import pytest
import torch

from motionsynth.discriminators import (
    CriticReport,
    MultiScaleDiscriminator,
    PatchDiscriminator,
    ViTDiscriminator,
    discriminate,
    feature_matching_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
)
from motionsynth.exceptions import FeatureShapeMismatch, ResolutionMismatch


def _const_report(value, shapes=((1, 1, 4, 4), (1, 1, 2, 2)), global_score=True):
    scores = [torch.full(s, value, dtype=torch.float64) for s in shapes]
    g = torch.full((1, 1), value, dtype=torch.float64) if global_score else None
    return CriticReport(scores, g, [])


@pytest.mark.parametrize("value, expected", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)])
def test_lsgan_generator_constant_scores(value, expected):
    assert abs(lsgan_generator_loss(_const_report(value)).item() - expected) < 1e-7


@pytest.mark.parametrize("real, fake, expected", [(1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.0, 1.0, 2.0)])
def test_lsgan_discriminator_constant_scores(real, fake, expected):
    assert abs(lsgan_discriminator_loss(_const_report(real), _const_report(fake)).item() - expected) < 1e-7


def test_lsgan_losses_non_negative():
    r = CriticReport([torch.randn(2, 1, 4, 4)], torch.randn(2, 1), [])
    f = CriticReport([torch.randn(2, 1, 4, 4)], torch.randn(2, 1), [])
    assert lsgan_generator_loss(f) >= 0
    assert lsgan_discriminator_loss(r, f) >= 0


def _feat_report(layers):
    return CriticReport([torch.zeros(1, 1, 2, 2)], None, [layers])


def test_feature_matching_identical_is_zero():
    layers = [torch.randn(2, 3, 4, 4), torch.randn(2, 5, 2, 2)]
    assert feature_matching_loss(_feat_report(layers), _feat_report([t.clone() for t in layers])).item() == 0.0


def test_feature_matching_single_layer_constant_difference():
    x = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    assert abs(feature_matching_loss(_feat_report([x]), _feat_report([x + 0.3])).item() - 0.3) < 1e-7


def test_feature_matching_layers_add():
    x, y = torch.randn(2, 3, 4, 4, dtype=torch.float64), torch.randn(1, 2, 3, dtype=torch.float64)
    a, b = 0.2, 0.7
    got = feature_matching_loss(_feat_report([x, y]), _feat_report([x - a, y + b])).item()
    assert abs(got - (a + b)) < 1e-7


def test_feature_matching_averages_critics():
    x = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
    real = CriticReport([], None, [[x], [x]])
    fake = CriticReport([], None, [[x + 1.0], [x + 3.0]])
    assert feature_matching_loss(real, fake).item() == pytest.approx(2.0)


def test_feature_matching_shape_errors():
    with pytest.raises(FeatureShapeMismatch):
        feature_matching_loss(_feat_report([torch.zeros(1, 2)]), _feat_report([torch.zeros(1, 3)]))
    with pytest.raises(FeatureShapeMismatch):
        feature_matching_loss(_feat_report([torch.zeros(1, 2)]), _feat_report([torch.zeros(1, 2)] * 2))


def test_patch_critic_score_map_shape():
    score, feats = PatchDiscriminator(1, (8, 8, 8))(torch.rand(2, 1, 64, 64))
    # four stride-2 convolutions: 64 -> 32 -> 16 -> 8 -> 4
    size = 64
    for _ in range(4):
        size = (size + 2 * 1 - 4) // 2 + 1
    assert score.shape == (2, 1, size, size) == (2, 1, 4, 4)
    assert len(feats) == 4


def test_vit_critic_scalar_and_block_features():
    vit = ViTDiscriminator(64, 8, 1, dim=16, depth=3, heads=2, mlp_dim=32)
    score, feats = vit(torch.rand(2, 1, 64, 64))
    assert score.shape == (2,)
    assert len(feats) == 3


def test_multiscale_report_structure():
    torch.manual_seed(0)
    d = MultiScaleDiscriminator((64, 64), patch_channels=(8, 8, 8), vit_dim=16, vit_depth=1).eval()
    rep = discriminate(torch.rand(2, 1, 64, 64), d)
    assert [tuple(s.shape) for s in rep.patch_scores] == [(2, 1, 4, 4), (2, 1, 2, 2)]
    assert rep.global_score.shape == (2,)
    assert len(rep.features) == 3
    assert all(torch.all(torch.isfinite(f)) for fl in rep.features for f in fl)
    x = torch.rand(1, 1, 64, 64)
    a, b = d(x), d(x)
    assert all(torch.equal(p, q) for p, q in zip(a.score_tensors(), b.score_tensors()))


def test_multiscale_resolution_mismatch():
    d = MultiScaleDiscriminator((64, 64), patch_channels=(8, 8, 8), vit_dim=16, vit_depth=1)
    with pytest.raises(ResolutionMismatch):
        d(torch.rand(1, 1, 32, 32))


def test_vit_patch_defaults():
    assert MultiScaleDiscriminator((64, 64), vit_dim=16, vit_depth=1).vit.patch_size == 8
