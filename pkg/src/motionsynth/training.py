"""Training orchestration: pair sampling, weighted loss aggregation,
alternating generator/discriminator updates, checkpoints."""
import copy
import csv
import logging
import math
import pickle
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .data import pixel_to_normalized, write_png
from .discriminators import (
    MultiScaleDiscriminator,
    feature_matching_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
)
from .exceptions import InvalidConfig, MissingCheckpoint, NonFiniteLoss, VideoTooShort
from .extractors import ImageFeatureExtractor
from .generator import Generator, perceptual_loss, reconstruction_l1
from .geometry import random_tps
from .motion_nets import (
    BackgroundPredictor,
    DenseMotionNetwork,
    KeypointDetector,
    equivariance_loss,
    supervised_keypoint_loss,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MSYNCKPT"
CHECKPOINT_VERSION = 1
LOSS_COLUMNS = (
    "epoch", "step", "l_eq", "l_eq1", "l_eq2", "l_key", "l_recL1", "l_recVGG", "l_G", "l_feat",
    "l_Dis", "total", "grad_norm_G", "grad_norm_D",
)


class MotionTransferModel(nn.Module):
    """Keypoint detector, background predictor, dense motion and generator."""

    def __init__(self, cfg):
        super().__init__()
        res = (cfg.resolution, cfg.resolution)
        self.kp_detector = KeypointDetector(
            cfg.num_keypoints, cfg.supervised_count, res,
            block_expansion=cfg.kp_block_expansion, num_blocks=cfg.kp_num_blocks,
        )
        self.bg_predictor = BackgroundPredictor(res, channels=cfg.bg_channels)
        self.dense_motion = DenseMotionNetwork(
            cfg.num_keypoints, res, block_expansion=cfg.dm_block_expansion,
            num_blocks=cfg.dm_num_blocks, scale_factor=cfg.dm_scale,
        )
        self.generator = Generator(
            res, first_features=cfg.gen_first_features, down_channels=cfg.gen_down_channels,
            num_bottleneck_blocks=cfg.gen_bottleneck_blocks,
        )

    def forward(self, source, driving, kp_source=None, kp_driving=None):
        kp_source = self.kp_detector(source) if kp_source is None else kp_source
        kp_driving = self.kp_detector(driving) if kp_driving is None else kp_driving
        bg = self.bg_predictor(source, driving)
        motion = self.dense_motion(source, kp_source, kp_driving, bg)
        out = self.generator(source, motion)
        return {"kp_source": kp_source, "kp_driving": kp_driving, "bg": bg, "motion": motion, "output": out}


def build_discriminator(cfg):
    return MultiScaleDiscriminator(
        (cfg.resolution, cfg.resolution), patch_channels=cfg.disc_channels,
        vit_dim=cfg.vit_dim, vit_depth=cfg.vit_depth, use_vit=cfg.use_vit,
    )


# ---------------------------------------------------------------- sampling

def sample_pair(videos, rng):
    """Pick a video uniformly, then two distinct frames (source, driving).

    Returns ``(source (H, W), driving (H, W), driving annotations (S, 2) in
    normalized coordinates or None)``.
    """
    clip = videos[int(rng.integers(len(videos)))]
    if len(clip) < 2:
        raise VideoTooShort(f"video {clip.video_id!r} has fewer than 2 frames")
    i, j = rng.choice(len(clip), size=2, replace=False)
    ann = None
    if clip.keypoints is not None:
        ann = pixel_to_normalized(clip.keypoints[j], clip.size)
    return clip.frames[i], clip.frames[j], ann


def sample_batch(videos, rng, batch_size, supervised_count, dtype=torch.float32):
    src, drv, ann = [], [], []
    for _ in range(batch_size):
        s, d, a = sample_pair(videos, rng)
        src.append(s)
        drv.append(d)
        row = np.full((supervised_count, 2), np.nan)
        if a is not None:
            m = min(supervised_count, len(a))
            row[:m] = a[:m]
        ann.append(row)
    return {
        "source": torch.as_tensor(np.stack(src)[:, None], dtype=dtype),
        "driving": torch.as_tensor(np.stack(drv)[:, None], dtype=dtype),
        "annotations": torch.as_tensor(np.stack(ann), dtype=dtype),
        "tps_seeds": [int(s) for s in rng.integers(0, 2 ** 31 - 1, batch_size)],
    }


# ---------------------------------------------------------------- losses

GENERATOR_PARTS = ("l_eq", "l_key", "l_recL1", "l_recVGG", "l_G", "l_feat")
_PART_WEIGHT = {"l_eq": "w_eq", "l_key": "w_key", "l_recL1": "w_recL1", "l_recVGG": "w_recVGG",
                "l_G": "w_G", "l_feat": "w_feat"}


def generator_total_loss(parts, weights):
    """Weighted sum of the generator-side loss components.

    Components with zero weight are skipped entirely, so they contribute no
    gradient even if non-finite.
    """
    total = 0.0
    for name in GENERATOR_PARTS:
        w = getattr(weights, _PART_WEIGHT[name])
        if w != 0 and name in parts:
            total = total + w * parts[name]
    return total


def _grad_norm(params):
    sq = [p.grad.detach().pow(2).sum() for p in params if p.grad is not None]
    return float(torch.sqrt(sum(sq))) if sq else 0.0


def _check_finite(parts):
    for name, v in parts.items():
        value = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(value):
            raise NonFiniteLoss(name, value)


# ---------------------------------------------------------------- trainer

class Trainer:
    """Owns the models, optimizers and sampling RNG for one training run."""

    def __init__(self, cfg=None, extractor=None, dtype=torch.float32):
        self.cfg = (cfg or TrainConfig()).validate()
        torch.manual_seed(self.cfg.seed)
        self.dtype = dtype
        self.model = MotionTransferModel(self.cfg).to(dtype)
        self.discriminator = build_discriminator(self.cfg).to(dtype)
        self.extractor = (extractor or ImageFeatureExtractor()).to(dtype)
        betas = (0.5, 0.999)
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=self.cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=self.cfg.learning_rate, betas=betas)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.epoch = 0
        self.step = 0

    # -- single steps -------------------------------------------------

    def generator_step(self, batch):
        """One update of detector, background predictor, dense motion and generator."""
        cfg, w = self.cfg, self.cfg.loss_weights
        self.model.train()
        for p in self.discriminator.parameters():
            p.requires_grad_(False)
        source, driving = batch["source"].to(self.dtype), batch["driving"].to(self.dtype)
        out = self.model(source, driving)
        gen = out["output"]
        parts = {}
        if w.w_eq:
            transforms = [random_tps(s, cfg.tps_strength) for s in batch["tps_seeds"]]
            l1, l2 = equivariance_loss(self.model.kp_detector, driving, transforms, kp_frame=out["kp_driving"])
            parts.update(l_eq1=l1, l_eq2=l2, l_eq=l1 + l2)
        if w.w_key and cfg.supervised_count:
            parts["l_key"], _ = supervised_keypoint_loss(
                out["kp_driving"].heatmap, batch["annotations"], cfg.supervised_count)
        if w.w_recL1:
            parts["l_recL1"] = reconstruction_l1(driving, gen.content, cfg.pyramid_levels)
        if w.w_recVGG:
            parts["l_recVGG"] = perceptual_loss(driving, gen.final, self.extractor, cfg.pyramid_levels)
        if w.w_G or w.w_feat:
            fake = self.discriminator(gen.final)
            with torch.no_grad():
                real = self.discriminator(driving)
            if w.w_G:
                parts["l_G"] = lsgan_generator_loss(fake)
            if w.w_feat:
                parts["l_feat"] = feature_matching_loss(real, fake)
        total = generator_total_loss(parts, w)
        parts["total"] = total
        _check_finite(parts)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        grad_norm = _grad_norm(self.model.parameters())
        self.opt_g.step()
        self.opt_g.zero_grad(set_to_none=True)
        for p in self.discriminator.parameters():
            p.requires_grad_(True)
        metrics = {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in parts.items()}
        metrics["grad_norm_G"] = grad_norm
        return metrics, out

    def discriminator_step(self, driving, fake):
        """One update of the critics; ``fake`` is detached first."""
        w = self.cfg.loss_weights
        if not w.w_Dis:
            return {"l_Dis": 0.0, "grad_norm_D": 0.0}
        self.discriminator.train()
        real = self.discriminator(driving.to(self.dtype))
        fake_rep = self.discriminator(fake.detach())
        loss = lsgan_discriminator_loss(real, fake_rep)
        _check_finite({"l_Dis": loss})
        self.opt_d.zero_grad(set_to_none=True)
        (w.w_Dis * loss).backward()
        grad_norm = _grad_norm(self.discriminator.parameters())
        self.opt_d.step()
        self.opt_d.zero_grad(set_to_none=True)
        return {"l_Dis": float(loss.detach()), "grad_norm_D": grad_norm}

    def train_step(self, batch):
        metrics, out = self.generator_step(batch)
        metrics.update(self.discriminator_step(batch["driving"], out["output"].final))
        self.step += 1
        metrics["step"] = self.step
        metrics["epoch"] = self.epoch
        return metrics

    # -- loops ----------------------------------------------------------

    def steps_per_epoch(self, n_videos):
        return max(1, math.ceil(self.cfg.num_repeats * n_videos / self.cfg.batch_size))

    def fit(self, videos, out_dir=None, epochs=None):
        """Train until ``epochs`` (default ``cfg.epochs``) epochs are complete."""
        if not videos:
            raise InvalidConfig("no training videos")
        target = self.cfg.epochs if epochs is None else epochs
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        history = []
        while self.epoch < target:
            for _ in range(self.steps_per_epoch(len(videos))):
                if self.cfg.max_steps and self.step >= self.cfg.max_steps:
                    break
                batch = sample_batch(videos, self.rng, self.cfg.batch_size, self.cfg.supervised_count, self.dtype)
                m = self.train_step(batch)
                history.append(m)
                if out_dir is not None:
                    _append_loss_row(out_dir / "losses.csv", m)
            self.epoch += 1
            log.info("epoch %d done (step %d, total %.4f)", self.epoch, self.step, history[-1]["total"] if history else float("nan"))
            if out_dir is not None:
                if self.epoch % self.cfg.checkpoint_every == 0 or self.epoch == target:
                    self.save_checkpoint(out_dir / f"checkpoint_{self.epoch:04d}.bin")
                if self.cfg.sample_every and (self.epoch % self.cfg.sample_every == 0 or self.epoch == target):
                    self.save_sample_strip(videos, out_dir / f"sample_epoch_{self.epoch:04d}.png")
            if self.cfg.max_steps and self.step >= self.cfg.max_steps:
                break
        return history

    def save_sample_strip(self, videos, path):
        clip = videos[0]
        src = torch.as_tensor(clip.frames[:1, None], dtype=self.dtype)
        drv = torch.as_tensor(clip.frames[len(clip) // 2][None, None], dtype=self.dtype)
        self.model.eval()
        with torch.no_grad():
            out = self.model(src, drv)["output"]
        tiles = [src, drv, out.content, out.texture + 0.5, out.final]
        write_png(path, np.concatenate([t[0, 0].double().numpy() for t in tiles], axis=1))

    # -- checkpoints ------------------------------------------------------

    def state_dict(self):
        return {
            "format_version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "models": {
                "kp_detector": self.model.kp_detector.state_dict(),
                "bg_predictor": self.model.bg_predictor.state_dict(),
                "dense_motion": self.model.dense_motion.state_dict(),
                "generator": self.model.generator.state_dict(),
                "discriminator": self.discriminator.state_dict(),
            },
            "optimizers": {"generator": self.opt_g.state_dict(), "discriminator": self.opt_d.state_dict()},
            "epoch": self.epoch,
            "step": self.step,
            "rng": {"numpy": self.rng.bit_generator.state, "torch": torch.get_rng_state()},
            "dtype": str(self.dtype),
        }

    def load_state_dict(self, state):
        m = state["models"]
        self.model.kp_detector.load_state_dict(m["kp_detector"])
        self.model.bg_predictor.load_state_dict(m["bg_predictor"])
        self.model.dense_motion.load_state_dict(m["dense_motion"])
        self.model.generator.load_state_dict(m["generator"])
        self.discriminator.load_state_dict(m["discriminator"])
        self.opt_g.load_state_dict(state["optimizers"]["generator"])
        self.opt_d.load_state_dict(state["optimizers"]["discriminator"])
        self.epoch = state["epoch"]
        self.step = state["step"]
        self.rng.bit_generator.state = state["rng"]["numpy"]
        torch.set_rng_state(state["rng"]["torch"])

    def save_checkpoint(self, path):
        write_checkpoint(self.state_dict(), path)

    @classmethod
    def from_checkpoint(cls, path, extractor=None):
        state = read_checkpoint(path)
        dtype = torch.float64 if state.get("dtype") == "torch.float64" else torch.float32
        trainer = cls(TrainConfig.from_dict(state["config"]), extractor=extractor, dtype=dtype)
        trainer.load_state_dict(state)
        return trainer


@dataclass
class Checkpoint:
    path: Path
    epoch: int
    step: int


def _to_numpy(obj):
    # strings are interned so pickle memoization, and hence the bytes,
    # does not depend on where equal strings came from
    if isinstance(obj, torch.Tensor):
        return {"__tensor__": obj.detach().cpu().numpy(), "dtype": sys.intern(str(obj.dtype))}
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_to_numpy(k): _to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_numpy(v) for v in obj)
    return obj


def _from_numpy(obj):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            return torch.from_numpy(np.array(obj["__tensor__"]))
        return {k: _from_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_from_numpy(v) for v in obj)
    return obj


def write_checkpoint(state, path):
    """Versioned container: magic, u32 version, pickle of numpy-converted state.

    Byte output depends only on the state, so identical runs produce
    identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = pickle.dumps(_to_numpy(state), protocol=4)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + payload)
    tmp.replace(path)


def read_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise InvalidConfig(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<I", blob[len(CHECKPOINT_MAGIC):len(CHECKPOINT_MAGIC) + 4])
    if version > CHECKPOINT_VERSION:
        raise InvalidConfig(f"{path}: checkpoint format {version} is newer than supported {CHECKPOINT_VERSION}")
    return _from_numpy(pickle.loads(blob[len(CHECKPOINT_MAGIC) + 4:]))


def _append_loss_row(path, metrics):
    new = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(LOSS_COLUMNS)
        writer.writerow([metrics.get(c, "") if c in ("epoch", "step") else repr(float(metrics.get(c, 0.0))) for c in LOSS_COLUMNS])


def train(config, videos, out_dir=None, extractor=None):
    """Train from scratch and return the final Trainer (its checkpoint is on disk if ``out_dir``)."""
    trainer = Trainer(config, extractor)
    trainer.fit(videos, out_dir)
    return trainer


def clone_models(model):
    return copy.deepcopy(model)
