"""Independent reference implementations shared by unit tests and the acceptance suite."""

import itertools

import numpy as np

from fednod.data import Dataset, stratified_split
from fednod.nn import conv_forward, conv_layer

CONV_GRID = list(itertools.product([2, 3], [1, 2, 3], [1, 2], [0, 1]))


def conv_oracle(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation over arbitrary spatial rank."""
    n, c = x.shape[:2]
    o, _, *k = w.shape
    rank = len(k)
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * rank)
    out_sp = [(xp.shape[2 + i] - k[i]) // stride + 1 for i in range(rank)]
    y = np.zeros((n, o, *out_sp), dtype=np.float64)
    for bi in range(n):
        for oi in range(o):
            for pos in itertools.product(*[range(m) for m in out_sp]):
                acc = float(b[oi])
                for ci in range(c):
                    for off in itertools.product(*[range(kk) for kk in k]):
                        src = tuple(p * stride + d for p, d in zip(pos, off))
                        acc += float(xp[(bi, ci) + src]) * float(w[(oi, ci) + off])
                y[(bi, oi) + pos] = acc
    return y


def conv_case(rank, kernel, stride, pad):
    """Production output and oracle output for one grid point.

    Small integers keep every partial sum exact in float32, so any
    summation order must agree bit for bit.
    """
    rng = np.random.default_rng([rank, kernel, stride, pad])
    spatial = (5, 6) if rank == 2 else (4, 5, 4)
    layer = conv_layer(2, 3, kernel, stride, pad, rank=rank)
    layer.params["weight"] = rng.integers(-3, 4, layer.params["weight"].shape).astype(np.float32)
    layer.params["bias"] = rng.integers(-3, 4, 3).astype(np.float32)
    x = rng.integers(-4, 5, (2, 2) + spatial).astype(np.float32)
    return conv_forward(x, layer), conv_oracle(x, layer.params["weight"], layer.params["bias"], stride, pad)


def enumerate_windows(n, length, skip):
    """Walk start positions one span apart and list member indices."""
    span = (length - 1) * skip + 1
    out, start = [], 0
    while start + span <= n:
        out.append([start + i * skip for i in range(length)])
        start += span
    return out


def toy_dataset(counts, seed=0):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)]).astype(np.int64)
    labels = np.random.default_rng(seed).permutation(labels)
    n = len(labels)
    # each image stores its sample id in four bytes
    images = np.arange(n, dtype="<u4").view(np.uint8).reshape(n, 1, 4)
    return Dataset(images, labels, [f"v{i // 10}" for i in range(n)], np.arange(n) % 10)


def ids(ds):
    return np.ascontiguousarray(ds.images).reshape(len(ds), 4).view("<u4").ravel().tolist()


def check_split(counts, seed, fraction=0.9):
    """Assert a split is a partition that keeps each class within one sample of its share."""
    ds = toy_dataset(counts, seed)
    train, test = stratified_split(ds, fraction, seed=seed)
    all_ids = ids(ds)
    tr, te = ids(train), ids(test)
    assert sorted(tr + te) == sorted(all_ids) and not set(tr) & set(te)
    for c, n_c in enumerate(counts):
        assert train.class_counts()[c] == int(np.floor(round(fraction * n_c, 9)))
        assert abs(train.class_counts()[c] - fraction * n_c) < 1.0
        assert abs(test.class_counts()[c] - (1 - fraction) * n_c) < 1.0
    again, _ = stratified_split(ds, fraction, seed=seed)
    assert ids(again) == tr
    return train, test
