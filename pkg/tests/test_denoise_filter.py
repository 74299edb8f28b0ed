import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from humansynth import denoise_filter as dn
from humansynth import services as sv
from humansynth.rasterizer import png_bytes, read_png

from oracles import pixel_iou, square_erosion


def pair_with_iou(inter, union, size=20):
    """Masks whose intersection and union have the given pixel counts."""
    a = np.zeros(size * size, bool)
    b = np.zeros(size * size, bool)
    a[:union] = True
    b[:inter] = True
    return a.reshape(size, size), b.reshape(size, size)


def test_iou_examples():
    full = np.ones((4, 4), bool)
    left = full.copy()
    left[:, 2:] = False
    assert dn.iou(left, full) == 0.5
    assert dn.iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    assert dn.iou(full, ~full) == 0.0
    with pytest.raises(ValueError):
        dn.iou(full, np.ones((4, 5)))


@pytest.mark.parametrize("inter, expect", [(79, False), (80, True), (81, True)])
def test_threshold_boundary(inter, expect):
    a, b = pair_with_iou(inter, 100)
    value = dn.iou(a, b)
    assert value == pixel_iou(a, b) == inter / 100
    assert dn.keep(value) is expect


def test_keep_threshold_custom():
    assert dn.keep(0.5, 0.5) and not dn.keep(0.4999, 0.5)


def test_point_sampling_erosion():
    m = np.zeros((7, 7), bool)
    m[2:5, 2:5] = True
    rng = np.random.default_rng(0)
    # radius 1 leaves only the center of a 3x3 square
    assert {dn.sample_foreground_point(m, rng, 1) for _ in range(20)} == {(3, 3)}
    # radius 2 erodes it away, so any raw pixel may be used
    pts = {dn.sample_foreground_point(m, rng, 2) for _ in range(200)}
    assert pts == {(x, y) for y in range(2, 5) for x in range(2, 5)}
    with pytest.raises(ValueError):
        dn.sample_foreground_point(np.zeros((3, 3)), rng)


@settings(max_examples=30)
@given(arrays(bool, (9, 11)), st.integers(0, 3))
def test_erosion_matches_window_oracle(mask, r):
    from scipy.ndimage import binary_erosion
    size = 2 * r + 1
    ours = binary_erosion(mask, structure=np.ones((size, size), bool), border_value=0)
    np.testing.assert_array_equal(ours, square_erosion(mask, r))
    if mask.any():
        x, y = dn.sample_foreground_point(mask, np.random.default_rng(0), r)
        pool = ours if ours.any() else mask
        assert pool[y, x]


@settings(max_examples=60)
@given(arrays(bool, (6, 7)), arrays(bool, (6, 7)))
def test_iou_properties(a, b):
    v = dn.iou(a, b)
    assert v == dn.iou(b, a)
    assert 0.0 <= v <= 1.0
    assert abs(v - pixel_iou(a, b)) < 1e-15
    # growing b toward a never lowers the overlap with a
    assert dn.iou(a, b | a) >= v or not (a | b).any()


def echo_pair():
    cond = np.zeros((24, 32, 3), np.uint8)
    cond[4:20, 8:14] = (128, 128, 255)
    gt = cond.any(axis=2)
    req = sv.GenerateRequest(png_bytes(cond), "p", "n", width=32, height=24, seed=1)
    image = sv.mock_client().generate(req)
    return gt, image


def test_filter_keeps_echo_and_drops_mirror():
    gt, image = echo_pair()
    v = dn.filter_sample(gt, image, sv.mock_client(), rng=np.random.default_rng(0))
    assert v.kept and v.iou == 1.0 and v.error is None
    assert gt[v.point_used[1], v.point_used[0]]
    mirrored = png_bytes(np.ascontiguousarray(read_png(image)[:, ::-1]))
    v = dn.filter_sample(gt, mirrored, sv.mock_client(), rng=np.random.default_rng(0))
    assert not v.kept and v.iou < 0.8


def test_filter_fails_closed():
    class Down:
        def segment(self, req):
            raise sv.TransportError("transport", "down")

    gt, image = echo_pair()
    v = dn.filter_sample(gt, image, Down(), rng=np.random.default_rng(0))
    assert not v.kept and v.iou == 0.0 and "down" in v.error


def test_filter_rejects_bad_threshold():
    gt, image = echo_pair()
    for thr in (0.0, 1.01):
        with pytest.raises(ValueError):
            dn.filter_sample(gt, image, sv.mock_client(), threshold=thr)


def test_verdict_round_trip():
    v = dn.FilterVerdict(0.8, True, (3, 4), 0.8, None, 1.5)
    assert dn.FilterVerdict.from_dict(v.to_dict()) == v
