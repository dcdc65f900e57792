"""Video clips, on-disk dataset layout, preprocessing and sub-clip splitting.

Layout::

    root/
      annotations.json          # keyed by video id
      train/<video_id>/frame_00000.png ...
      test/<video_id>/frame_00000.png ...

``annotations.json`` maps each video id to ``{"split", "size": [H, W],
"frames": n, "keypoints": [[[x, y] | null, ...] per frame]}`` with keypoints
in pixel coordinates (``x`` = column, ``y`` = row, pixel centers at integers).
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .exceptions import MalformedAnnotation, MissingFrames, VideoTooShort

ANNOTATIONS_FILE = "annotations.json"
SPLITS = ("train", "test")


@dataclass
class VideoClip:
    """Grayscale frames ``(T, H, W)`` in ``[0, 1]`` with optional keypoints
    ``(T, S, 2)`` in pixel coordinates (NaN rows mark absent landmarks)."""

    frames: np.ndarray
    video_id: str = ""
    keypoints: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got {self.frames.shape}")
        if self.keypoints is not None:
            self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
            if self.keypoints.shape[0] != len(self.frames):
                raise ValueError("keypoints must have one row per frame")

    def __len__(self):
        return len(self.frames)

    @property
    def size(self):
        return self.frames.shape[1:]

    def normalized_keypoints(self):
        """Keypoints mapped to ``[-1, 1]`` coordinates, or None."""
        if self.keypoints is None:
            return None
        return pixel_to_normalized(self.keypoints, self.size)

    def subclip(self, start, stop):
        kp = None if self.keypoints is None else self.keypoints[start:stop]
        meta = dict(self.metadata, parent=self.video_id, start=start)
        return VideoClip(self.frames[start:stop], f"{self.video_id}_{start:05d}", kp, meta)


def pixel_to_normalized(points, size):
    h, w = size
    p = np.asarray(points, dtype=np.float64)
    scale = np.array([2.0 / max(w - 1, 1), 2.0 / max(h - 1, 1)])
    return p * scale - 1.0


def normalized_to_pixel(points, size):
    h, w = size
    p = np.asarray(points, dtype=np.float64)
    return (p + 1.0) * 0.5 * np.array([w - 1, h - 1])


# ---------------------------------------------------------------- index

@dataclass
class VideoEntry:
    video_id: str
    split: str
    size: tuple
    frame_paths: tuple
    keypoints: tuple  # per frame: tuple of (x, y) or None per landmark


@dataclass
class DatasetIndex:
    entries: list
    root: Path = field(default=None, compare=False)
    _clips: dict = field(default_factory=dict, compare=False, repr=False)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def entry(self, video_id):
        for e in self.entries:
            if e.video_id == video_id:
                return e
        raise KeyError(video_id)

    def load_clip(self, entry):
        if isinstance(entry, str):
            entry = self.entry(entry)
        if entry.video_id in self._clips:
            return self._clips[entry.video_id]
        frames = np.stack([read_png(self.root / p) for p in entry.frame_paths])
        return VideoClip(frames, entry.video_id, _keypoints_array(entry.keypoints), {"split": entry.split})

    def clips(self, split):
        return [self.load_clip(e) for e in self.split(split)]

    @classmethod
    def from_clips(cls, clips_by_split):
        entries, cache = [], {}
        for split, clips in clips_by_split.items():
            for clip in clips:
                paths = tuple(f"{split}/{clip.video_id}/frame_{i:05d}.png" for i in range(len(clip)))
                entries.append(VideoEntry(clip.video_id, split, tuple(int(s) for s in clip.size), paths,
                                          _keypoints_tuple(clip.keypoints, len(clip))))
                cache[clip.video_id] = clip
        entries.sort(key=lambda e: e.video_id)
        return cls(entries, None, cache)


def _keypoints_tuple(kp, n):
    if kp is None:
        return tuple(() for _ in range(n))
    out = []
    for frame in np.asarray(kp, dtype=np.float64):
        out.append(tuple(None if not np.all(np.isfinite(p)) else (float(p[0]), float(p[1])) for p in frame))
    return tuple(out)


def _keypoints_array(kp):
    if not kp or all(len(f) == 0 for f in kp):
        return None
    s = max(len(f) for f in kp)
    arr = np.full((len(kp), s, 2), np.nan)
    for t, frame in enumerate(kp):
        for j, p in enumerate(frame):
            if p is not None:
                arr[t, j] = p
    return arr


def read_png(path):
    if not Path(path).is_file():
        raise MissingFrames(f"missing frame file: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def write_png(path, frame):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def save_dataset(index, root_path):
    """Write frames and ``annotations.json`` under ``root_path``; returns the on-disk index."""
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    doc = {}
    for e in index.entries:
        clip = index.load_clip(e)
        for p, frame in zip(e.frame_paths, clip.frames):
            write_png(root / p, frame)
        doc[e.video_id] = {
            "split": e.split,
            "size": list(e.size),
            "frames": len(e.frame_paths),
            "keypoints": [[None if p is None else list(p) for p in f] for f in e.keypoints],
        }
    tmp = root / (ANNOTATIONS_FILE + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    tmp.replace(root / ANNOTATIONS_FILE)
    return load_dataset(root)


def load_dataset(root_path):
    root = Path(root_path)
    ann_path = root / ANNOTATIONS_FILE
    if not ann_path.is_file():
        raise MissingFrames(f"missing annotation file: {ann_path}")
    try:
        doc = json.loads(ann_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedAnnotation(f"{ann_path}: invalid JSON ({exc})") from exc
    entries = []
    for vid in sorted(doc):
        rec = doc[vid]
        ctx = f"{ann_path} [{vid}]"
        try:
            split, (h, w), n = rec["split"], rec["size"], int(rec["frames"])
            raw_kp = rec["keypoints"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedAnnotation(f"{ctx}: missing or invalid field ({exc})") from exc
        if split not in SPLITS:
            raise MalformedAnnotation(f"{ctx}: unknown split {split!r}")
        if len(raw_kp) != n:
            raise MalformedAnnotation(f"{ctx}: {len(raw_kp)} keypoint rows for {n} frames")
        paths = tuple(f"{split}/{vid}/frame_{i:05d}.png" for i in range(n))
        for p in paths:
            if not (root / p).is_file():
                raise MissingFrames(f"missing frame file: {root / p}")
        kps = []
        for t, frame in enumerate(raw_kp):
            row = []
            for j, p in enumerate(frame):
                if p is None:
                    row.append(None)
                    continue
                if len(p) != 2:
                    raise MalformedAnnotation(f"{ctx}: frame {t} keypoint {j} is not an (x, y) pair")
                x, y = float(p[0]), float(p[1])
                if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                    raise MalformedAnnotation(f"{ctx}: frame {t} keypoint {j} ({x}, {y}) outside {w}x{h} image")
                row.append((x, y))
            kps.append(tuple(row))
        entries.append(VideoEntry(vid, split, (int(h), int(w)), paths, tuple(kps)))
    return DatasetIndex(entries, root)


# ---------------------------------------------------------------- preprocessing

def _to_unit(frame):
    f = np.asarray(frame)
    if np.issubdtype(f.dtype, np.integer):
        return f.astype(np.float64) / np.iinfo(f.dtype).max
    return np.clip(f.astype(np.float64), 0.0, 1.0)


def similarity_map(size, target):
    """``(scale, left, top)`` of the aspect-preserving fit of ``size`` into a square ``target``."""
    h, w = size
    scale = target / max(h, w)
    new_h, new_w = int(round(h * scale)), int(round(w * scale))
    return scale, (target - new_w) // 2, (target - new_h) // 2


def preprocess(frame_raw, target=256, keypoints=None):
    """Resize the longer side to ``target``, zero-pad the shorter one
    centrally and scale values to ``[0, 1]``.

    Keypoints ``(..., 2)`` in pixel ``(x, y)`` go through the same map
    ``x' = s x + left``, ``y' = s y + top``. Returns ``(frame, keypoints)``.
    """
    f = _to_unit(frame_raw)
    if f.ndim == 3:
        f = f.mean(axis=-1)
    h, w = f.shape
    scale, left, top = similarity_map((h, w), target)
    kp = None
    if keypoints is not None:
        kp = np.asarray(keypoints, dtype=np.float64) * scale + np.array([left, top])
    if (h, w) == (target, target):
        return f.astype(np.float32), kp
    if scale < 1:
        f = ndimage.gaussian_filter(f, sigma=0.5 / scale - 0.5)
    new_h, new_w = int(round(h * scale)), int(round(w * scale))
    yy, xx = np.mgrid[0:new_h, 0:new_w].astype(np.float64)
    content = ndimage.map_coordinates(f, [yy / scale, xx / scale], order=1, mode="nearest")
    out = np.zeros((target, target), dtype=np.float64)
    out[top:top + new_h, left:left + new_w] = content
    return np.clip(out, 0.0, 1.0).astype(np.float32), kp


def split_into_subclips(video, length=16):
    """Consecutive non-overlapping windows; a trailing remainder of >= 2 frames
    is kept as a shorter clip, a single leftover frame is dropped."""
    if length < 2:
        raise ValueError("sub-clip length must be at least 2")
    n = len(video)
    if n < 2:
        raise VideoTooShort(f"video {video.video_id!r} has {n} frame(s)")
    clips = []
    for start in range(0, n, length):
        stop = min(start + length, n)
        if stop - start >= 2:
            clips.append(video.subclip(start, stop))
    return clips
