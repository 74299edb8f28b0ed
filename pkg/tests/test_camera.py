import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from humansynth import camera as cam


def test_sample_within_ranges_and_deterministic():
    a = cam.sample_camera(np.random.default_rng(7), 768, 768)
    b = cam.sample_camera(np.random.default_rng(7), 768, 768)
    assert a.to_dict() == b.to_dict()
    assert 0.45 <= a.s <= 1.1
    assert abs(a.tx) <= 0.4 / a.s and abs(a.ty) <= 0.4 / a.s
    assert 25.0 <= a.fov_deg <= 120.0


def test_forced_scale_sets_shift_bound():
    s, tx, ty, _, _ = cam.draw_camera_params(np.random.default_rng(0), 20000, s=0.5)
    assert np.all(s == 0.5)
    assert np.abs(tx).max() <= 0.8 and np.abs(ty).max() <= 0.8
    assert np.abs(tx).max() > 0.79  # the full +-0.8 range is used


def test_forced_fov_90_gives_unit_focal():
    c = cam.sample_camera(np.random.default_rng(0), 64, 64, fov_deg=90.0)
    assert c.f_ndc == pytest.approx(1.0, abs=1e-15)


def test_derive_translation_examples():
    c = cam.CameraSample(0.5, 0.1, -0.2, 90.0, 1.0, np.zeros(3), 10, 10)
    np.testing.assert_allclose(cam.derive_translation(c), [0.1, -0.2, 2.0])
    assert cam.focal_from_fov(60.0) / 1.0 == pytest.approx(1.7320508075688772, abs=1e-12)
    assert cam.focal_from_fov(120.0) / 1.1 == pytest.approx(0.5248638810814779, abs=1e-12)


def test_invalid_size():
    with pytest.raises(ValueError):
        cam.sample_camera(np.random.default_rng(0), 0, 10)


def test_look_at_axis_aligned():
    e = cam.look_at_extrinsics((0, 0, -5), (0, 0, 0))
    np.testing.assert_allclose(e.rotation, np.diag([-1.0, -1.0, 1.0]), atol=1e-15)
    np.testing.assert_allclose(e.world_to_camera([[0, 0, 0]]), [[0, 0, 5]], atol=1e-12)


def test_look_at_yaw_oracle():
    # the (5, 0, 0) camera is the (0, 0, -5) camera yawed by -90 degrees about +y
    base = cam.look_at_extrinsics((0, 0, -5), (0, 0, 0)).rotation
    yaw = Rotation.from_euler("y", -90, degrees=True).as_matrix()
    np.testing.assert_allclose(yaw @ [0, 0, -5], [5, 0, 0], atol=1e-12)
    e = cam.look_at_extrinsics((5, 0, 0), (0, 0, 0))
    np.testing.assert_allclose(e.rotation, base @ yaw.T, atol=1e-12)
    np.testing.assert_allclose(e.rotation, [[0, 0, -1], [0, -1, 0], [-1, 0, 0]], atol=1e-12)


def test_look_at_degenerate():
    with pytest.raises(ValueError, match="parallel"):
        cam.look_at_extrinsics((0, 5, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        cam.look_at_extrinsics((1, 1, 1), (1, 1, 1))


def test_project_examples():
    c = cam.CameraSample(1.0, 0.0, 0.0, 90.0, 1.0, np.zeros(3), 768, 768)
    pix, vis = cam.project([[0, 0, 3.0], [0.1, 0, 1.0], [0, 0, 0.0], [1, 1, -2]], c)
    np.testing.assert_allclose(pix[0], [384, 384])
    np.testing.assert_allclose(pix[1], [422.4, 384.0], atol=1e-12)
    assert list(vis) == [True, True, False, False]
    assert np.all(pix[2:] == cam.SENTINEL_PIXEL)
    assert np.all(np.isfinite(pix))


def test_intrinsics_and_serialization():
    c = cam.sample_camera(np.random.default_rng(3), 640, 480)
    K = c.intrinsics()
    assert K[0, 0] == pytest.approx(c.f_ndc * 320) and K[1, 1] == pytest.approx(c.f_ndc * 240)
    back = cam.CameraSample.from_dict(c.to_dict())
    assert back.to_dict() == c.to_dict()
    e = cam.look_at_extrinsics((1, 2, 3), (0, 1, 0))
    e2 = cam.Extrinsics.from_dict(e.to_dict())
    np.testing.assert_array_equal(e.rotation, e2.rotation)


def test_frontal_extrinsics_places_pelvis_at_transl():
    c = cam.sample_camera(np.random.default_rng(11), 768, 768)
    pelvis = np.array([0.3, 0.9, -0.2])
    e = cam.frontal_extrinsics(c, pelvis)
    np.testing.assert_allclose(e.world_to_camera(pelvis[None])[0], c.transl, atol=1e-12)
    # pelvis pixel from transl: W/2 * (1 + s * tx), inside the frame by the shift bound
    pix, _ = cam.project(c.transl[None], c)
    np.testing.assert_allclose(pix[0], [384 * (1 + c.s * c.tx), 384 * (1 + c.s * c.ty)], atol=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_same_seed_bit_identical(seed):
    a = cam.sample_camera(np.random.default_rng(seed), 32, 32)
    b = cam.sample_camera(np.random.default_rng(seed), 32, 32)
    assert (a.s, a.tx, a.ty, a.fov_deg, a.f_ndc) == (b.s, b.tx, b.ty, b.fov_deg, b.f_ndc)
    assert a.transl.tobytes() == b.transl.tobytes()


@given(f1=st.floats(25, 120), f2=st.floats(25, 120))
def test_focal_strictly_decreasing(f1, f2):
    if f1 < f2:
        assert cam.focal_from_fov(f1) > cam.focal_from_fov(f2)


@given(x=st.floats(-5, 5), y=st.floats(-5, 5), z=st.floats(0.01, 50),
       seed=st.integers(0, 1000))
def test_project_unproject_round_trip(x, y, z, seed):
    c = cam.sample_camera(np.random.default_rng(seed), 512, 384)
    p = np.array([[x, y, z]])
    pix, vis = cam.project(p, c)
    assert vis[0]
    back = cam.unproject(pix, [z], c)
    np.testing.assert_allclose(back, p, rtol=1e-9, atol=1e-9 * max(1.0, abs(x), abs(y)))


@given(pos=st.tuples(*[st.floats(-10, 10)] * 3), tgt=st.tuples(*[st.floats(-1, 1)] * 3))
def test_look_at_orthonormal(pos, tgt):
    d = np.subtract(tgt, pos)
    if np.linalg.norm(d) < 1e-3 or np.linalg.norm(np.cross(d / np.linalg.norm(d), [0, 1, 0])) < 1e-6:
        return
    e = cam.look_at_extrinsics(pos, tgt)
    R = e.rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
    fwd = e.world_to_camera(np.array([tgt]))[0]
    assert fwd[2] > 0 and abs(fwd[0]) < 1e-9 and abs(fwd[1]) < 1e-9
