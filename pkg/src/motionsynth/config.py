"""Training configuration, presets and the ``key = value`` config file format.

Example file::

    # desk-scale run
    preset = desk
    epochs = 30
    resolution = 64
    w_key = 100
"""
import ast
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .exceptions import InvalidConfig


@dataclass(frozen=True)
class LossWeights:
    w_eq: float = 10.0
    w_key: float = 100.0
    w_recL1: float = 10.0
    w_recVGG: float = 10.0
    w_G: float = 1.0
    w_Dis: float = 1.0
    w_feat: float = 10.0
    w_hsd: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 2e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    num_keypoints: int = 5
    supervised_count: int = 2
    resolution: int = 64
    seed: int = 0
    # pair samples per epoch = num_repeats * number of training videos
    num_repeats: int = 5
    pyramid_levels: int = 3
    tps_strength: float = 0.05
    # architecture
    kp_block_expansion: int = 32
    kp_num_blocks: int = 2
    dm_block_expansion: int = 32
    dm_num_blocks: int = 3
    dm_scale: float = 0.5
    gen_first_features: int = 32
    gen_down_channels: tuple = (64, 128)
    gen_bottleneck_blocks: int = 3
    bg_channels: tuple = (16, 32, 64)
    disc_channels: tuple = (32, 64, 128)
    vit_dim: int = 64
    vit_depth: int = 2
    use_vit: bool = True
    # outputs
    checkpoint_every: int = 1
    sample_every: int = 5
    max_steps: int = 0  # 0 = no cap

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.num_repeats < 1:
            raise InvalidConfig("epochs >= 0, batch_size >= 1 and num_repeats >= 1 required")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if any(v < 0 for v in asdict(self.loss_weights).values()):
            raise InvalidConfig("loss weights must be non-negative")
        if not 0 <= self.supervised_count <= self.num_keypoints:
            raise InvalidConfig("need 0 <= supervised_count <= num_keypoints")
        if self.resolution % 4 or self.resolution < 16:
            raise InvalidConfig("resolution must be >= 16 and divisible by 4")
        return self

    def with_weights(self, **weights):
        return replace(self, loss_weights=replace(self.loss_weights, **weights))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        weights = d.pop("loss_weights", {})
        if isinstance(weights, dict):
            weights = LossWeights(**weights)
        for name in ("gen_down_channels", "bg_channels", "disc_channels"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(loss_weights=weights, **d)


PRESETS = {
    "desk": TrainConfig(),
    "tiny": TrainConfig(
        resolution=32, num_keypoints=3, supervised_count=1, batch_size=2, epochs=1, num_repeats=1,
        kp_block_expansion=8, kp_num_blocks=1, dm_block_expansion=8, dm_num_blocks=2,
        gen_first_features=8, gen_down_channels=(8, 16), gen_bottleneck_blocks=1,
        bg_channels=(8, 8, 16), disc_channels=(8, 8, 8), vit_dim=16, vit_depth=1,
    ),
    "paper": TrainConfig(
        epochs=100, batch_size=8, num_keypoints=15, supervised_count=3, resolution=256,
        num_repeats=1, kp_num_blocks=5, dm_num_blocks=5, dm_scale=0.25, gen_bottleneck_blocks=6,
        gen_down_channels=(128, 256), gen_first_features=64, bg_channels=(64, 128, 256, 512),
        disc_channels=(64, 128, 256), vit_dim=768, vit_depth=12,
    ),
}


def parse_config_text(text):
    """Parse ``key = value`` lines into a TrainConfig.

    ``preset = <name>`` selects the starting point; ``w_*`` keys set loss
    weights; values are Python literals or bare strings.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            raw[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            raw[key] = value
    base = PRESETS.get(raw.pop("preset", "desk"))
    if base is None:
        raise InvalidConfig(f"unknown preset; choose from {sorted(PRESETS)}")
    weight_names = {f.name for f in fields(LossWeights)}
    cfg_names = {f.name for f in fields(TrainConfig)} - {"loss_weights"}
    weights = {k: float(raw.pop(k)) for k in list(raw) if k in weight_names}
    unknown = set(raw) - cfg_names
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    for name in ("gen_down_channels", "bg_channels", "disc_channels"):
        if name in raw:
            raw[name] = tuple(raw[name])
    return replace(base, **raw).with_weights(**weights).validate()


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def format_config(cfg):
    lines = []
    for f in fields(TrainConfig):
        if f.name == "loss_weights":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)!r}")
    for k, v in asdict(cfg.loss_weights).items():
        lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"
