"""Cut per-video frame runs into fixed-length clips for the 3D model."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset


def window_starts(n_frames: int, length: int, skip: int) -> list[int]:
    """Start positions of non-overlapping windows spanning ``(length - 1) * skip + 1`` frames."""
    if length < 1 or skip < 1:
        raise ValueError(f"sequence length and frame skip must be >= 1, got {length}, {skip}")
    span = (length - 1) * skip + 1
    return list(range(0, n_frames - span + 1, span))


def sequence_label(labels) -> int:
    """Majority label; a tie goes to the label of member ``L // 2``."""
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    winners = np.flatnonzero(counts == counts.max())
    if len(winners) == 1:
        return int(winners[0])
    return int(labels[len(labels) // 2])


def assemble_sequences(video: Dataset, length: int, skip: int) -> Dataset:
    """Clips from the frames of a single video.

    Frames are ordered by ``frame_index``; member ``i`` of a clip starting at
    position ``p`` is the frame at position ``p + i * skip``.
    """
    if len(set(video.video_ids.tolist())) > 1:
        raise ValueError("assemble_sequences expects frames of a single video")
    order = np.argsort(video.frame_index, kind="stable")
    starts = window_starts(len(order), length, skip)
    shape = (len(starts), length) + video.images.shape[1:]
    clips = np.empty(shape, dtype=np.uint8)
    labels, start_frames = [], []
    for j, start in enumerate(starts):
        members = order[start : start + (length - 1) * skip + 1 : skip]
        clips[j] = video.images[members]
        labels.append(sequence_label(video.labels[members]))
        start_frames.append(int(video.frame_index[members[0]]))
    vid = video.video_ids[:1].tolist() * len(starts)
    return Dataset(clips, labels, vid, start_frames, frame_skip=skip)


def build_sequence_dataset(frames: Dataset, length: int, skip: int) -> Dataset:
    """Clips from every video in ``frames``; videos are visited in sorted id order."""
    parts = []
    for vid in sorted(set(frames.video_ids.tolist())):
        part = assemble_sequences(frames.subset(np.flatnonzero(frames.video_ids == vid)), length, skip)
        if len(part):
            parts.append(part)
    if not parts:
        shape = (0, length) + frames.images.shape[1:]
        return Dataset(np.zeros(shape, np.uint8), [], [], [], frame_skip=skip)
    return Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.video_ids for p in parts]),
        np.concatenate([p.frame_index for p in parts]),
        frame_skip=skip,
    )
