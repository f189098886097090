import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfselect.feature import Rect, center_error, extract_patch, featurize, iou

rects = st.builds(Rect, st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40))


def bilinear_oracle(img, y, x):
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x0 + 1]
            + fy * (1 - fx) * img[y0 + 1, x0] + fy * fx * img[y0 + 1, x0 + 1])


def test_uniform_frame_gives_constant_patch():
    frame = np.full((120, 160), 128, dtype=np.uint8)
    patch = extract_patch(frame, Rect(60, 40, 30, 20))
    assert patch.shape == (64, 64)
    assert np.all(patch == 128.0)


def test_patch_matches_pointwise_bilinear(rng):
    frame = rng.integers(0, 256, size=(100, 120)).astype(np.uint8)
    r = Rect(40.3, 30.7, 21.0, 17.0)  # window 42 x 34, fully inside
    patch = extract_patch(frame, r)
    img = frame.astype(float)
    for i in (0, 7, 31, 63):
        for j in (0, 12, 40, 63):
            y = r.cy - r.h + (i + 0.5) / 64 * 2 * r.h - 0.5
            x = r.cx - r.w + (j + 0.5) / 64 * 2 * r.w - 0.5
            assert patch[i, j] == pytest.approx(bilinear_oracle(img, y, x), abs=1e-9)


def test_corner_target_replicates_edges(rng):
    frame = rng.integers(0, 256, size=(50, 60)).astype(np.uint8)
    patch = extract_patch(frame, Rect(-10, -10, 20, 20))
    assert np.all(np.isfinite(patch))
    assert patch[0, 0] == frame[0, 0]


def test_featurize_constant_patch_is_zero():
    assert np.all(featurize(np.full((64, 64), 77.0)) == 0)


def test_featurize_ramp():
    ramp = np.tile(np.arange(64.0), (64, 1))
    f = featurize(ramp, window=False)
    np.testing.assert_allclose(f[1][:, 1:-1], 1 / 255.0, rtol=1e-12)
    assert np.all(f[2] == 0)


def test_featurize_border_ring_zero(rng):
    f = featurize(rng.random((64, 64)) * 255)
    for c in f:
        assert np.all(c[0] == 0) and np.all(c[-1] == 0) and np.all(c[:, 0] == 0) and np.all(c[:, -1] == 0)


def test_featurize_rejects_wrong_size():
    with pytest.raises(ValueError):
        featurize(np.zeros((32, 32)))


def test_iou_cases():
    assert iou(Rect(0, 0, 2, 2), Rect(0, 0, 2, 2)) == 1.0
    assert iou(Rect(0, 0, 2, 2), Rect(5, 5, 2, 2)) == 0.0
    assert iou(Rect(0, 0, 2, 2), Rect(1, 0, 2, 2)) == pytest.approx(2 / 6, abs=1e-15)
    assert center_error(Rect(0, 0, 2, 2), Rect(3, 4, 2, 2)) == 5.0


def test_rect_rejects_empty():
    with pytest.raises(ValueError):
        Rect(0, 0, 0, 3)


@given(rects, rects)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    if v == 1.0:
        assert a.as_tuple() == pytest.approx(b.as_tuple())


@given(st.integers(0, 2**32 - 1))
def test_intensity_channel_zero_mean(seed):
    patch = np.random.default_rng(seed).random((64, 64)) * 255
    assert abs(featurize(patch, window=False)[0].mean()) <= 1e-12


def test_patch_and_features_deterministic(rng):
    frame = rng.integers(0, 256, size=(80, 90)).astype(np.uint8)
    r = Rect(20.5, 10.25, 30, 25)
    a = featurize(extract_patch(frame, r, scale=1.025))
    b = featurize(extract_patch(frame, r, scale=1.025))
    assert np.array_equal(a, b)
