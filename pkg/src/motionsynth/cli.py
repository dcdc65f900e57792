"""Command-line entry point.

Every command writes ``run_manifest.json`` into its output directory before
doing any work. Failures print one line ``error: <Category>: <message>`` on
stderr and exit nonzero.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import torch

from .adaptation import ADAPT_LR, MAX_ADAPT_FRAMES, adapt_and_synthesize, synthesize_clip
from .config import PRESETS, load_config
from .data import (
    ANNOTATIONS_FILE,
    DatasetIndex,
    VideoClip,
    load_dataset,
    preprocess,
    read_png,
    save_dataset,
    split_into_subclips,
    write_png,
)
from .exceptions import EmptyDirectory, InvalidConfig, MissingCheckpoint, MotionSynthError
from .extractors import ImageFeatureExtractor, VideoFeatureExtractor
from .metrics import animation_report, format_table, reconstruction_report, report_to_csv
from .phantom import make_phantom_dataset
from .training import Trainer

DATA_ENV = "MOTIONSYNTH_DATA"
MANIFEST_FILE = "run_manifest.json"
ADAPT_REPORT_COLUMNS = ("iteration", "hsd_loss", "fvd", "subclip")

log = logging.getLogger("motionsynth")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


# ---------------------------------------------------------------- manifest

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(root):
    """Hash of every file under ``root`` (relative paths and contents)."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file() and q.name != MANIFEST_FILE):
        h.update(str(p.relative_to(root)).encode())
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def write_manifest(out_dir, args, config=None, checkpoint=None, dataset=None, seed=None):
    if checkpoint is not None and not Path(checkpoint).is_file():
        raise MissingCheckpoint(f"checkpoint not found: {checkpoint}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else list(args.argv),
        "arguments": {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items()
                      if k not in ("func", "argv")},
        "config": config,
        "checkpoint_sha256": sha256_file(checkpoint) if checkpoint else None,
        "dataset_sha256": sha256_tree(dataset) if dataset else None,
        "seed": seed,
        "tool_version": _version(),
        "torch_version": torch.__version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    tmp = out_dir / (MANIFEST_FILE + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(out_dir / MANIFEST_FILE)
    return doc


# ---------------------------------------------------------------- clip I/O

def write_clip_dir(clip, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_png(directory / f"frame_{i:05d}.png", frame)
    return directory


def read_frame_dir(directory, resolution=None):
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise EmptyDirectory(f"no PNG frames in {directory}")
    frames = [read_png(p) for p in paths]
    if resolution is not None:
        frames = [preprocess(f, resolution)[0] for f in frames]
    return VideoClip(np.stack(frames), directory.name)


def read_clip_collection(root):
    """Clips under ``root``: a dataset root (test split), a directory of
    frame directories, or a single frame directory."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyDirectory(f"not a directory: {root}")
    if (root / ANNOTATIONS_FILE).is_file():
        clips = load_dataset(root).clips("test")
    else:
        subdirs = sorted(d for d in root.iterdir() if d.is_dir() and any(d.glob("*.png")))
        if subdirs:
            clips = [read_frame_dir(d) for d in subdirs]
        elif any(root.glob("*.png")):
            clips = [read_frame_dir(root)]
        else:
            clips = []
    if not clips:
        raise EmptyDirectory(f"no clips found in {root}")
    return clips


def _fit_resolution(clip, resolution):
    if tuple(clip.size) == (resolution, resolution):
        return clip
    frames, kps = [], []
    for t, f in enumerate(clip.frames):
        kp = None if clip.keypoints is None else clip.keypoints[t]
        g, k = preprocess(f, resolution, kp)
        frames.append(g)
        kps.append(k)
    return VideoClip(np.stack(frames), clip.video_id, None if clip.keypoints is None else np.stack(kps), clip.metadata)


def _data_root(args):
    root = args.data or os.environ.get(DATA_ENV)
    if not root:
        raise InvalidConfig(f"no dataset given: pass --data or set {DATA_ENV}")
    return Path(root)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _extractors():
    return ImageFeatureExtractor(), VideoFeatureExtractor()


def _emit_report(rows, out_dir):
    report_to_csv(rows, Path(out_dir) / "metrics.csv")
    print(format_table(rows))


# ---------------------------------------------------------------- commands

def cmd_make_toy_data(args):
    write_manifest(args.out, args, seed=args.seed)
    split = make_phantom_dataset(args.videos, frames=args.frames, resolution=args.resolution, seed=args.seed)
    index = save_dataset(DatasetIndex.from_clips(split), args.out)
    print(f"wrote {len(index.split('train'))} train + {len(index.split('test'))} test videos to {args.out}")


def _train_config(args):
    cfg = load_config(args.config) if args.config else PRESETS["desk"]
    overrides = {k: getattr(args, k) for k in ("epochs", "seed", "max_steps") if getattr(args, k) is not None}
    return replace(cfg, **overrides).validate()


def cmd_train(args):
    cfg = _train_config(args)
    root = _data_root(args)
    write_manifest(args.out, args, config=asdict(cfg), dataset=root, seed=cfg.seed)
    videos = [_fit_resolution(c, cfg.resolution) for c in load_dataset(root).clips("train")]
    if not videos:
        raise EmptyDirectory(f"no training videos in {root}")
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume)
        trainer.cfg = replace(trainer.cfg, epochs=cfg.epochs, max_steps=cfg.max_steps)
    else:
        trainer = Trainer(cfg)
    trainer.fit(videos, args.out)
    print(f"trained {trainer.epoch} epoch(s), {trainer.step} step(s); outputs in {args.out}")


def _load_model(path):
    trainer = Trainer.from_checkpoint(path)
    trainer.model.eval()
    return trainer.model, trainer.cfg


def cmd_reconstruct(args):
    root = _data_root(args)
    write_manifest(args.out, args, checkpoint=args.checkpoint, dataset=root)
    model, cfg = _load_model(args.checkpoint)
    tests = [_fit_resolution(c, cfg.resolution) for c in load_dataset(root).clips("test")]
    if not tests:
        raise EmptyDirectory(f"no test videos in {root}")
    generated = _map(lambda c: synthesize_clip(c.frames[0], c, model), tests, args.workers)
    for c, g in zip(tests, generated):
        write_clip_dir(g, Path(args.out) / "generated" / c.video_id)
    img_ext, vid_ext = _extractors()
    _emit_report(reconstruction_report(generated, tests, img_ext, vid_ext), args.out)


def animation_pairs(train_clips, test_clips, seed):
    """One pair per test video: driving = random training video, source =
    frame drawn uniformly from ``[1, f - 2]`` of the test video."""
    rng = np.random.default_rng(seed)
    pairs = []
    for clip in test_clips:
        if len(clip) < 3:
            raise InvalidConfig(f"video {clip.video_id!r} has no interior frame")
        drv = train_clips[int(rng.integers(len(train_clips)))]
        idx = int(rng.integers(1, len(clip) - 1))
        pairs.append((clip, idx, drv))
    return pairs


def cmd_animate(args):
    root = _data_root(args)
    write_manifest(args.out, args, checkpoint=args.checkpoint, dataset=root, seed=args.seed)
    model, cfg = _load_model(args.checkpoint)
    index = load_dataset(root)
    train_clips = [_fit_resolution(c, cfg.resolution) for c in index.clips("train")]
    test_clips = [_fit_resolution(c, cfg.resolution) for c in index.clips("test")]
    if not train_clips or not test_clips:
        raise EmptyDirectory(f"animation needs both train and test videos in {root}")
    pairs = animation_pairs(train_clips, test_clips, args.seed)
    generated = _map(lambda p: synthesize_clip(p[0].frames[p[1]], p[2], model), pairs, args.workers)
    with open(Path(args.out) / "pairs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("output", "source_video", "source_frame", "driving_video"))
        for i, ((src, idx, drv), g) in enumerate(zip(pairs, generated)):
            name = f"pair_{i:04d}"
            write_clip_dir(g, Path(args.out) / "generated" / name)
            w.writerow((name, src.video_id, idx, drv.video_id))
    img_ext, vid_ext = _extractors()
    _emit_report(animation_report(generated, test_clips, img_ext, vid_ext), args.out)


def cmd_evaluate(args):
    write_manifest(args.out, args)
    generated = read_clip_collection(args.generated)
    reference = read_clip_collection(args.reference)
    img_ext, vid_ext = _extractors()
    if args.task == "reconstruction":
        rows = reconstruction_report(generated, reference, img_ext, vid_ext)
    else:
        rows = animation_report(generated, reference, img_ext, vid_ext)
    _emit_report(rows, args.out)


def cmd_adapt(args):
    write_manifest(args.out, args, checkpoint=args.checkpoint, seed=args.seed)
    torch.manual_seed(args.seed)
    model, cfg = _load_model(args.checkpoint)
    source = preprocess(read_png(args.source), cfg.resolution)[0]
    driving = read_frame_dir(args.driving, cfg.resolution)
    subclips = split_into_subclips(driving, MAX_ADAPT_FRAMES)
    vid_ext = VideoFeatureExtractor()

    def job(clip):
        return adapt_and_synthesize(source, clip, model, iterations=args.iters, lr=args.lr,
                                    hsd_weight=cfg.loss_weights.w_hsd, video_extractor=vid_ext,
                                    return_candidates=True)

    results = _map(job, subclips, args.workers)
    out = Path(args.out)
    rows, selected = [], []
    for clip, (best, records, candidates) in zip(subclips, results):
        for cand in candidates:
            write_clip_dir(cand, out / "candidates" / clip.video_id / cand.video_id)
        rows.extend((r.iteration, repr(r.hsd_loss), repr(r.fvd), clip.video_id) for r in records)
        selected.append(best.frames)
        print(f"{clip.video_id}: selected iteration {best.metadata['selected_iteration']} "
              f"(fvd {records[best.metadata['selected_iteration']].fvd:.6g})")
    write_clip_dir(VideoClip(np.concatenate(selected), "selected"), out / "selected")
    with open(out / "adaptation_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADAPT_REPORT_COLUMNS)
        w.writerows(rows)


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="motionsynth", description="Keypoint-driven ultrasound video synthesis.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("make-toy-data", cmd_make_toy_data, "Generate a phantom dataset (80/20 train/test split by video).")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--videos", type=int, default=10)
    sp.add_argument("--frames", type=int, default=32)
    sp.add_argument("--resolution", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)

    data_help = f"dataset root (default: ${DATA_ENV})"
    sp = add("train", cmd_train, "Train the motion transfer model.")
    sp.add_argument("--config", type=Path, help="key = value config file (default: desk preset)")
    sp.add_argument("--data", type=Path, help=data_help)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--epochs", type=int, help="override the config's epoch count")
    sp.add_argument("--seed", type=int, help="override the config's seed")
    sp.add_argument("--max-steps", type=int, dest="max_steps", help="stop after this many steps")
    sp.add_argument("--resume", type=Path, help="continue from a checkpoint")

    for name, func, help_ in (
        ("reconstruct", cmd_reconstruct, "Reconstruct each test video from its first frame."),
        ("animate", cmd_animate, "Animate interior test frames with training videos."),
    ):
        sp = add(name, func, help_)
        sp.add_argument("--checkpoint", type=Path, required=True)
        sp.add_argument("--data", type=Path, help=data_help)
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)

    sp = add("evaluate", cmd_evaluate, "Compute a metric block over directories of clips.")
    sp.add_argument("--generated", type=Path, required=True)
    sp.add_argument("--reference", type=Path, required=True)
    sp.add_argument("--task", choices=("reconstruction", "animation"), default="reconstruction")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("adapt", cmd_adapt, "Synthesize with per-clip online adaptation.")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--source", type=Path, required=True, help="source frame (PNG)")
    sp.add_argument("--driving", type=Path, required=True, help="directory of driving PNG frames")
    sp.add_argument("--iters", type=int, default=10)
    sp.add_argument("--lr", type=float, default=ADAPT_LR)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", type=Path, required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except MotionSynthError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
