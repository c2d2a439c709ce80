"""On-disk dataset layout.

One directory per split. Each video is a flat binary tensor file::

    bytes 0-7    magic b"ADSMVID1"
    bytes 8-11   dtype code (u32 LE): 1 = float32, 2 = float64, 3 = uint8
    bytes 12-15  number of dimensions (u32 LE, at most 4)
    bytes 16-31  extents, four u32 LE (unused trailing extents are 0)
    payload      little-endian row-major data

Sidecars ``labels.csv`` (video_id, frame_index, label) and ``scenes.csv``
(video_id, scene_label) sit next to the video files. Test splits also carry
``anomalies.csv``, the injector log.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .synthetic import AnomalyEvent, SyntheticDatasetSpec, generate_synthetic_dataset
from .video import VideoSequence

MAGIC = b"ADSMVID1"
HEADER = struct.Struct("<8sII4I")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
CODES = {v: k for k, v in DTYPES.items()}
VIDEO_SUFFIX = ".adsv"


class DataFormatError(Exception):
    """Raised for missing, truncated or malformed dataset files."""


def write_tensor(path: Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
    if dt not in CODES:
        raise DataFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 4:
        raise DataFormatError("at most 4 dimensions are supported")
    extents = list(arr.shape) + [0] * (4 - arr.ndim)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, CODES[dt], arr.ndim, *extents))
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensor(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, code, ndim, *extents = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if code not in DTYPES or not 0 < ndim <= 4:
        raise DataFormatError(f"{path}: bad dtype code {code} or rank {ndim}")
    shape = tuple(extents[:ndim])
    dt = DTYPES[code]
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) - HEADER.size != expected:
        raise DataFormatError(f"{path}: payload has {len(raw) - HEADER.size} bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=dt, offset=HEADER.size).reshape(shape).astype(dt.newbyteorder("="))


def write_split(directory: Path, videos: list[VideoSequence], events: list[AnomalyEvent] | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "labels.csv", "w", newline="") as lf, open(directory / "scenes.csv", "w", newline="") as sf:
        lw, sw = csv.writer(lf), csv.writer(sf)
        lw.writerow(["video_id", "frame_index", "label"])
        sw.writerow(["video_id", "scene_label"])
        for v in videos:
            write_tensor(directory / f"{v.video_id}{VIDEO_SUFFIX}", v.frames.astype(np.float32))
            sw.writerow([v.video_id, v.scene])
            labels = v.frame_labels if v.frame_labels is not None else np.zeros(v.n, dtype=np.int64)
            for k, lab in enumerate(labels):
                lw.writerow([v.video_id, k, int(lab)])
    if events is not None:
        with open(directory / "anomalies.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["video_id", "injector", "start", "end"])
            for ev in events:
                w.writerow([ev.video_id, ev.injector, ev.start, ev.end])


def read_labels(path: Path) -> dict[str, np.ndarray]:
    rows: dict[str, dict[int, int]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.setdefault(row["video_id"], {})[int(row["frame_index"])] = int(row["label"])
    except (OSError, KeyError, ValueError) as exc:
        raise DataFormatError(f"cannot parse labels {path}: {exc}") from exc
    out = {}
    for vid, m in rows.items():
        arr = np.zeros(max(m) + 1, dtype=np.int64)
        for k, lab in m.items():
            if lab not in (0, 1):
                raise DataFormatError(f"{path}: label {lab} for {vid}:{k} is not 0/1")
            arr[k] = lab
        out[vid] = arr
    return out


def read_scenes(path: Path) -> dict[str, int]:
    try:
        with open(path, newline="") as fh:
            return {row["video_id"]: int(row["scene_label"]) for row in csv.DictReader(fh)}
    except (OSError, KeyError, ValueError) as exc:
        raise DataFormatError(f"cannot parse scenes {path}: {exc}") from exc


def read_events(path: Path) -> list[AnomalyEvent]:
    with open(path, newline="") as fh:
        return [AnomalyEvent(r["video_id"], r["injector"], int(r["start"]), int(r["end"])) for r in csv.DictReader(fh)]


def resolve_split(path: Path, split: str) -> Path:
    """Accept either a dataset root or a split directory."""
    path = Path(path)
    if (path / split / "scenes.csv").exists():
        return path / split
    if (path / "scenes.csv").exists():
        return path
    raise DataFormatError(f"no {split} split found under {path}")


def load_split(directory: Path) -> list[VideoSequence]:
    directory = Path(directory)
    scenes = read_scenes(directory / "scenes.csv")
    labels = read_labels(directory / "labels.csv") if (directory / "labels.csv").exists() else {}
    videos = []
    for vid in sorted(scenes):
        frames = read_tensor(directory / f"{vid}{VIDEO_SUFFIX}").astype(np.float32)
        if frames.ndim != 4:
            raise DataFormatError(f"{vid}: expected a 4-d (n, H, W, c) tensor, got {frames.shape}")
        lab = labels.get(vid)
        if lab is not None and len(lab) != len(frames):
            raise DataFormatError(f"{vid}: {len(lab)} labels for {len(frames)} frames")
        videos.append(VideoSequence(frames, scenes[vid], lab, vid))
    return videos


def write_dataset(root: Path, spec: SyntheticDatasetSpec) -> dict:
    """Generate and write both splits; returns a summary."""
    root = Path(root)
    train, test, events = generate_synthetic_dataset(spec)
    write_split(root / "train", train)
    write_split(root / "test", test, events)
    (root / "dataset.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return {
        "train_videos": len(train),
        "test_videos": len(test),
        "anomalous_test_frames": int(sum(int(v.frame_labels.sum()) for v in test)),
        "events": len(events),
    }


def tree_checksum(root: Path) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    files = [root] if root.is_file() else sorted(p for p in root.rglob("*") if p.is_file())
    for p in files:
        rel = p.name if root.is_file() else p.relative_to(root).as_posix()
        h.update(rel.encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()
