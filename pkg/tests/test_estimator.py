import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from motionsynth import MotionSynthesizer
from motionsynth.config import PRESETS
from motionsynth.estimator import check_clip, check_frame
from motionsynth.exceptions import InvalidConfig, ShapeMismatch, VideoTooShort
from motionsynth.phantom import make_phantom_dataset


@pytest.fixture(scope="module")
def data():
    return make_phantom_dataset(5, frames=4, resolution=32, seed=11)


@pytest.fixture(scope="module")
def fitted(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    return MotionSynthesizer(preset="tiny", seed=2).fit(data["train"], out_dir=out), out


def test_params_round_trip():
    est = MotionSynthesizer(preset="tiny", epochs=3, learning_rate=1e-3)
    params = est.get_params()
    assert params["epochs"] == 3 and params["preset"] == "tiny"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(batch_size=1)
    cfg = est.build_config()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.resolution) == (3, 1, 1e-3, 32)


def test_config_overrides_are_validated():
    with pytest.raises(InvalidConfig):
        MotionSynthesizer(preset="tiny", num_keypoints=1, supervised_count=2).build_config()


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        MotionSynthesizer().predict(np.zeros((64, 64)), np.zeros((3, 64, 64)))


def test_fit_predict_transform_score(fitted, data):
    est, out = fitted
    assert est.n_clips_ == 4 and len(est.history_) == est.trainer_.step
    assert (out / "checkpoint_0001.bin").is_file()
    test = data["test"][0]
    frames = est.predict(test.frames[0], test)
    assert frames.shape == test.frames.shape
    assert frames.min() >= 0 and frames.max() <= 1
    recon = est.transform(data["test"])
    assert len(recon) == 1 and np.array_equal(recon[0], frames)
    assert np.isfinite(est.score(data["test"]))


def test_predict_accepts_arrays_and_checks_shapes(fitted, data):
    est, _ = fitted
    test = data["test"][0]
    assert np.array_equal(est.predict(test.frames[0], test.frames), est.predict(test.frames[0], test))
    with pytest.raises(ShapeMismatch):
        est.predict(np.zeros((16, 16)), test)
    with pytest.raises(ShapeMismatch):
        est.predict(test.frames[0], np.zeros((3, 16, 16)))


def test_from_checkpoint_matches(fitted, data):
    est, out = fitted
    back = MotionSynthesizer.from_checkpoint(out / "checkpoint_0001.bin")
    test = data["test"][0]
    assert back.config_ == est.config_
    assert np.array_equal(back.predict(test.frames[0], test), est.predict(test.frames[0], test))


def test_predict_with_adaptation_reports(fitted, data):
    est, out = fitted
    adapted = MotionSynthesizer.from_checkpoint(out / "checkpoint_0001.bin", adapt_iterations=2)
    test = data["test"][0]
    frames = adapted.predict(test.frames[0], test)
    assert frames.shape == test.frames.shape
    assert len(adapted.adaptation_report_) == 3


def test_fit_deterministic(data):
    a = MotionSynthesizer(preset=PRESETS["tiny"], seed=4).fit(data["train"])
    b = MotionSynthesizer(preset=PRESETS["tiny"], seed=4).fit(data["train"])
    clip = data["test"][0]
    assert np.array_equal(a.predict(clip.frames[0], clip), b.predict(clip.frames[0], clip))


def test_input_checks():
    with pytest.raises(ShapeMismatch):
        check_frame(np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        check_frame(np.full((4, 4), np.nan))
    assert check_frame(np.full((2, 2), 3.0)).max() == 1.0
    with pytest.raises(VideoTooShort):
        check_clip(np.zeros((1, 4, 4)))
    with pytest.raises(ShapeMismatch):
        check_clip(np.zeros((4, 4)))
