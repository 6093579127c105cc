"""Seeded stratified train/test split and IID client partitioning."""

from __future__ import annotations

import math

import numpy as np

from ..errors import PartitionError, StratificationError
from .dataset import Dataset, DatasetShard


def train_count(n: int, train_fraction: float) -> int:
    # rounding guard so that e.g. 0.9 * 30 is not floored to 26
    return math.floor(round(train_fraction * n, 9))


def stratified_split(dataset: Dataset, train_fraction: float = 0.9, seed=0):
    """Split each class separately: shuffle it, send ``floor(f * n_c)`` to train.

    Returns ``(train, test)``; both keep the dataset's original order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise StratificationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) < 2:
            raise StratificationError(f"class {label} has {len(members)} sample(s); need at least 2")
        members = rng.permutation(members)
        k = train_count(len(members), train_fraction)
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


def partition_clients(train: Dataset, num_clients: int, seed=0) -> list[DatasetShard]:
    """Deal each shuffled class round-robin across ``num_clients`` shards.

    Dealing continues where the previous class stopped, so shard totals as
    well as per-class counts differ by at most one.
    """
    if num_clients < 1:
        raise PartitionError(f"need at least one client, got {num_clients}")
    if num_clients > len(train):
        raise PartitionError(f"cannot split {len(train)} samples across {num_clients} clients")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    position = 0
    for label in np.unique(train.labels):
        members = rng.permutation(np.flatnonzero(train.labels == label))
        for i, index in enumerate(members):
            buckets[(position + i) % num_clients].append(int(index))
        position = (position + len(members)) % num_clients
    return [
        train.subset(sorted(bucket), cls=DatasetShard, shard_id=k)
        for k, bucket in enumerate(buckets)
    ]
