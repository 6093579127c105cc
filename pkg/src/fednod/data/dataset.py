"""Columnar frame/clip datasets and the class-per-folder loader."""

from __future__ import annotations

import csv
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DatasetLayoutError
from .pnm import PNMError, encode_pgm, read_pnm
from .preprocess import grayscale, resize, to_tensor

log = logging.getLogger(__name__)

CLASS_NAMES = ("normal", "talking", "yawning")
NORMAL, TALKING, YAWNING = 0, 1, 2
MANIFEST_NAME = "manifest.csv"
_FRAME_NAME = re.compile(r"^(?P<video>.+)_(?P<frame>\d+)\.(?:pgm|ppm)$")


@dataclass
class FrameSample:
    pixels: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: int
    video_id: str
    frame_index: int


@dataclass
class SequenceSample:
    clip: np.ndarray  # (1, L, H, W) float32 in [0, 1]
    label: int
    video_id: str
    start_frame: int
    frame_skip: int = 1

    @property
    def frame_indices(self) -> list[int]:
        return [self.start_frame + i * self.frame_skip for i in range(self.clip.shape[1])]


@dataclass
class Dataset:
    """Samples stored column-wise.

    ``images`` is uint8 ``(N, H, W)`` for frames or ``(N, L, H, W)`` for clips.
    For clips ``frame_index`` holds the start frame and ``frame_skip`` the
    stride between members.
    """

    images: np.ndarray
    labels: np.ndarray
    video_ids: np.ndarray
    frame_index: np.ndarray
    frame_skip: int = 1
    errors: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.video_ids = np.asarray(self.video_ids, dtype=object)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        n = len(self.images)
        if not (len(self.labels) == len(self.video_ids) == len(self.frame_index) == n):
            raise ValueError("dataset columns differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_sequence(self) -> bool:
        return self.images.ndim == 4

    @property
    def sample_shape(self) -> tuple:
        """Per-sample model input shape, channel axis included."""
        return (1,) + self.images.shape[1:]

    def __getitem__(self, i):
        pixels = self.images[i][None].astype(np.float32) / np.float32(255.0)
        if self.is_sequence:
            return SequenceSample(pixels, int(self.labels[i]), str(self.video_ids[i]),
                                  int(self.frame_index[i]), self.frame_skip)
        return FrameSample(pixels, int(self.labels[i]), str(self.video_ids[i]), int(self.frame_index[i]))

    def subset(self, indices, cls=None, **extra):
        indices = np.asarray(indices, dtype=np.int64)
        cls = cls or type(self)
        return cls(
            self.images[indices],
            self.labels[indices],
            self.video_ids[indices],
            self.frame_index[indices],
            self.frame_skip,
            **extra,
        )

    def class_counts(self, num_classes: int = 3) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)

    def tensors(self, indices=None) -> np.ndarray:
        """Standardised float32 model input ``(n, 1, ...)``."""
        images = self.images if indices is None else self.images[indices]
        return to_tensor(images)[:, None]

    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.video_ids.tolist(), self.frame_index.tolist()))


@dataclass
class DatasetShard(Dataset):
    shard_id: int = 0


def empty_dataset(shape=(0, 1, 1)) -> Dataset:
    return Dataset(np.zeros(shape, np.uint8), [], [], [])


def concat(parts: list[Dataset]) -> Dataset:
    return Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.video_ids for p in parts]),
        np.concatenate([p.frame_index for p in parts]),
        parts[0].frame_skip if parts else 1,
    )


def parse_frame_name(name: str) -> tuple[str, int]:
    """``M042_000017.pgm`` -> ``("M042", 17)``."""
    m = _FRAME_NAME.match(name)
    if not m:
        raise ValueError(f"file name {name!r} does not match <video_id>_<frame_index>.pgm")
    return m.group("video"), int(m.group("frame"))


def frame_file_name(video_id: str, frame_index: int) -> str:
    return f"{video_id}_{frame_index:06d}.pgm"


def _read_frame(path, resolution):
    image = read_pnm(path)
    if image.ndim == 3:
        image = grayscale(image)
    if resolution is not None:
        image = resize(image, resolution, resolution)
    return image


def _label_of(value: str) -> int:
    value = value.strip()
    if value.isdigit():
        label = int(value)
    elif value.lower() in CLASS_NAMES:
        label = CLASS_NAMES.index(value.lower())
    else:
        raise ValueError(f"unknown label {value!r}")
    if label not in (NORMAL, TALKING, YAWNING):
        raise ValueError(f"label {label} out of range")
    return label


def _entries_from_manifest(root):
    entries = []
    with open(os.path.join(root, MANIFEST_NAME), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "label", "video_id", "frame_index"} - set(reader.fieldnames or ())
        if missing:
            raise DatasetLayoutError(f"manifest lacks columns {sorted(missing)}")
        for row in reader:
            entries.append((os.path.join(root, row["path"]), row["label"], row["video_id"], row["frame_index"]))
    return entries


def _entries_from_folders(root):
    missing = [c for c in CLASS_NAMES if not os.path.isdir(os.path.join(root, c))]
    if missing:
        raise DatasetLayoutError(f"{root} lacks class folder(s) {missing}; expected {list(CLASS_NAMES)}")
    entries = []
    for label, name in enumerate(CLASS_NAMES):
        folder = os.path.join(root, name)
        for fname in sorted(os.listdir(folder)):
            if fname.lower().endswith((".pgm", ".ppm")):
                entries.append((os.path.join(folder, fname), label, fname, None))
    return entries


def load_folder_dataset(root, resolution: int | None = None, workers: int | None = None) -> Dataset:
    """Load ``root/{normal,talking,yawning}/<video_id>_<frame>.pgm`` as a frame dataset.

    A ``manifest.csv`` (``path,label,video_id,frame_index``) in ``root``
    replaces folder inference. Unreadable files are recorded in
    ``dataset.errors`` and skipped. Frames are resized to
    ``resolution x resolution`` when given. Files are read on a thread pool;
    the result keeps sorted file order regardless of scheduling.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise DatasetLayoutError(f"dataset root {root} is not a directory")
    if os.path.exists(os.path.join(root, MANIFEST_NAME)):
        entries = _entries_from_manifest(root)
    else:
        entries = _entries_from_folders(root)

    def load(entry):
        path, label, video, frame = entry
        try:
            if frame is None:
                video, frame = parse_frame_name(os.path.basename(path))
            return path, _label_of(str(label)), str(video), int(frame), _read_frame(path, resolution)
        except (OSError, PNMError, ValueError) as exc:
            return path, None, None, None, exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        loaded = list(pool.map(load, entries))

    images, labels, videos, frames, errors = [], [], [], [], []
    shape = None
    for path, label, video, frame, result in loaded:
        if isinstance(result, Exception):
            errors.append((path, str(result)))
            continue
        if shape is None:
            shape = result.shape
        elif result.shape != shape:
            errors.append((path, f"image shape {result.shape} differs from {shape}"))
            continue
        images.append(result)
        labels.append(label)
        videos.append(video)
        frames.append(frame)
    if errors:
        log.warning("skipped %d unreadable file(s) under %s", len(errors), root)
    if not images:
        raise DatasetLayoutError(f"no readable frames under {root}")
    log.info("loaded %d frames from %s", len(images), root)
    return Dataset(np.stack(images), labels, videos, frames, errors=errors)


def write_folder_dataset(dataset: Dataset, root) -> int:
    """Write a frame dataset in the class-folder layout; returns the file count."""
    if dataset.is_sequence:
        raise ValueError("only frame datasets can be written as PGM folders")
    root = os.fspath(root)
    for name in CLASS_NAMES:
        os.makedirs(os.path.join(root, name), exist_ok=True)
    for i in range(len(dataset)):
        path = os.path.join(root, CLASS_NAMES[dataset.labels[i]],
                            frame_file_name(dataset.video_ids[i], int(dataset.frame_index[i])))
        with open(path, "wb") as fh:
            fh.write(encode_pgm(dataset.images[i]))
    return len(dataset)
