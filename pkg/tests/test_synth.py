import numpy as np
import pytest
from scipy import ndimage

from fednod.data import synth_generate
from fednod.data.synth import MIN_RENDERED_RATIO, MOUTH_INTENSITY, RATIO_RANGE, mouth_ratios


def measured_mouth_ratio(img):
    """Height/width of the lowest dark blob, recovered from its pixel coverage.

    The face level is the most common bright value. Coverage per pixel is
    the fraction of the way from face to mouth intensity. For an ellipse of
    area A and height h the aspect ratio is pi * h^2 / (4 A).
    """
    img = img.astype(np.float64)
    hist = np.bincount(img.astype(np.int64).ravel(), minlength=256)
    face = float(np.argmax(hist[150:]) + 150)
    labels, n = ndimage.label(img < face - 4)
    best, best_row = None, -1.0
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        touches = rows.min() == 0 or cols.min() == 0 or rows.max() == img.shape[0] - 1 or cols.max() == img.shape[1] - 1
        if not touches and rows.mean() > best_row:
            best, best_row = k, rows.mean()
    rows, cols = np.nonzero(labels == best)
    box = img[rows.min() - 1 : rows.max() + 2, cols.min() - 1 : cols.max() + 2]
    coverage = np.clip((face - box) / (face - MOUTH_INTENSITY * 255), 0, 1)
    height = coverage.sum(axis=0).max()
    return np.pi * height**2 / (4 * coverage.sum())


def test_counts_and_video_grouping():
    ds = synth_generate(500, 64, 0.05, seed=0)
    assert len(ds) == 1500
    assert ds.class_counts().tolist() == [500, 500, 500]
    for vid in set(ds.video_ids.tolist()):
        frames = ds.frame_index[ds.video_ids == vid]
        assert len(frames) == 100 and sorted(frames.tolist()) == list(range(100))
        assert len(set(ds.labels[ds.video_ids == vid].tolist())) == 1


def test_same_seed_bit_identical():
    a = synth_generate(40, 64, 0.05, seed=9)
    b = synth_generate(40, 64, 0.05, seed=9)
    c = synth_generate(40, 64, 0.05, seed=10)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.keys() == b.keys()
    assert a.images.tobytes() != c.images.tobytes()


def test_partial_last_video():
    ds = synth_generate(130, 64, 0.0, seed=1)
    assert sorted(set(ds.video_ids.tolist()))[:2] == ["N0000", "N0001"]
    assert (ds.video_ids == "N0001").sum() == 30


@pytest.mark.parametrize("label", [0, 1, 2])
def test_ratio_schedules_stay_in_class_range(label):
    lo, hi = RATIO_RANGE[label]
    for v in range(20):
        r = mouth_ratios(label, 100, np.random.default_rng(v))
        assert r.min() >= lo - 1e-12 and r.max() <= hi + 1e-12
    talking = mouth_ratios(1, 100, np.random.default_rng(0))
    assert np.ptp(talking) > 0.15  # oscillates
    yawn = mouth_ratios(2, 100, np.random.default_rng(0))
    assert (np.diff(yawn) > 0).all()  # ramps


def test_noiseless_geometric_oracle_classifies_frames():
    ds, ratios = synth_generate(300, 64, 0.0, seed=3, return_ratios=True)
    measured = np.array([measured_mouth_ratio(im) for im in ds.images])
    # measurement tracks the rendered ratio closely
    assert np.abs(measured - np.maximum(ratios, MIN_RENDERED_RATIO)).max() < 0.05
    predicted = np.digitize(measured, [0.125, 0.45])
    assert (predicted == ds.labels).mean() >= 0.99


def test_noise_level_changes_pixels_only_by_noise():
    clean = synth_generate(10, 64, 0.0, seed=4)
    noisy = synth_generate(10, 64, 0.05, seed=4)
    diff = noisy.images.astype(int) - clean.images.astype(int)
    assert 5 < diff.std() < 20
