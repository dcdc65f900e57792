import pytest

from motionsynth.config import PRESETS, TrainConfig, format_config, load_config, parse_config_text
from motionsynth.exceptions import InvalidConfig


def test_parse_overrides_and_weights():
    cfg = parse_config_text("""
        # comment line
        preset = tiny
        epochs = 4   # trailing comment
        learning_rate = 1e-3
        w_key = 50
        gen_down_channels = [8, 8]
    """)
    assert cfg.epochs == 4 and cfg.learning_rate == 1e-3 and cfg.resolution == 32
    assert cfg.loss_weights.w_key == 50.0 and cfg.loss_weights.w_eq == 10.0
    assert cfg.gen_down_channels == (8, 8)


def test_default_preset_is_desk():
    assert parse_config_text("") == PRESETS["desk"] == TrainConfig()


def test_format_round_trip():
    for name, cfg in PRESETS.items():
        assert parse_config_text(f"preset = {name}\n" + format_config(cfg)) == cfg
    tweaked = PRESETS["tiny"].with_weights(w_feat=0.0)
    assert parse_config_text(format_config(tweaked)) == tweaked


@pytest.mark.parametrize("text", ["bogus = 1", "preset = huge", "epochs", "w_G = -1", "resolution = 30"])
def test_invalid_config_text(text):
    with pytest.raises(InvalidConfig):
        parse_config_text(text)


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("preset = tiny\nseed = 7\n")
    assert load_config(path).seed == 7
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.cfg")


def test_dict_round_trip():
    for cfg in PRESETS.values():
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_paper_preset_scale():
    p = PRESETS["paper"]
    assert (p.resolution, p.num_keypoints, p.batch_size, p.epochs) == (256, 15, 8, 100)
