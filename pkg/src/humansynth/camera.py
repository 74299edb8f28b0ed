"""Randomized perspective camera, look-at extrinsics and pinhole projection.

Camera space is right-handed with +z forward and +y pointing down the image.
Intrinsics map NDC to pixels with fx = f*W/2, fy = f*H/2 and the principal
point at the image center.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_NEAR = 1e-4
SENTINEL_PIXEL = -1.0


@dataclass(frozen=True)
class CameraRanges:
    scale: tuple = (0.45, 1.1)
    shift: float = 0.4
    fov_deg: tuple = (25.0, 120.0)


DEFAULT_RANGES = CameraRanges()


@dataclass
class CameraSample:
    s: float
    tx: float
    ty: float
    fov_deg: float
    f_ndc: float
    transl: np.ndarray
    width: int
    height: int

    @property
    def fx(self) -> float:
        return self.f_ndc * self.width / 2.0

    @property
    def fy(self) -> float:
        return self.f_ndc * self.height / 2.0

    def intrinsics(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.width / 2.0],
            [0.0, self.fy, self.height / 2.0],
            [0.0, 0.0, 1.0],
        ])

    def to_dict(self) -> dict:
        return {
            "s": self.s, "tx": self.tx, "ty": self.ty, "fov_deg": self.fov_deg,
            "f_ndc": self.f_ndc, "transl": [float(v) for v in self.transl],
            "width": self.width, "height": self.height,
            "intrinsics": self.intrinsics().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSample":
        return cls(d["s"], d["tx"], d["ty"], d["fov_deg"], d["f_ndc"],
                   np.asarray(d["transl"], dtype=np.float64), int(d["width"]), int(d["height"]))


@dataclass
class Extrinsics:
    rotation: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def world_to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation.T

    def camera_to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation + self.position

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "position": [float(v) for v in self.position]}

    @classmethod
    def from_dict(cls, d: dict) -> "Extrinsics":
        return cls(np.asarray(d["rotation"], dtype=np.float64),
                   np.asarray(d["position"], dtype=np.float64))


def focal_from_fov(fov_deg):
    return 1.0 / np.tan(np.radians(fov_deg) / 2.0)


def draw_camera_params(rng, n, ranges=DEFAULT_RANGES, s=None, fov_deg=None):
    """Vectorized draw of (s, tx, ty, fov_deg, f_ndc) arrays of length n.

    ``s`` and ``fov_deg`` force those values (test hooks); the shift range
    still follows the forced scale.
    """
    if s is None:
        s = rng.uniform(ranges.scale[0], ranges.scale[1], n)
    else:
        s = np.full(n, float(s))
    bound = ranges.shift / s
    tx = rng.uniform(-bound, bound)
    ty = rng.uniform(-bound, bound)
    if fov_deg is None:
        fov_deg = rng.uniform(ranges.fov_deg[0], ranges.fov_deg[1], n)
    else:
        fov_deg = np.full(n, float(fov_deg))
    return s, tx, ty, fov_deg, focal_from_fov(fov_deg)


def sample_camera(rng, width: int, height: int, ranges=DEFAULT_RANGES, s=None, fov_deg=None) -> CameraSample:
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    s, tx, ty, fov, f = (float(a[0]) for a in draw_camera_params(rng, 1, ranges, s, fov_deg))
    return CameraSample(s, tx, ty, fov, f, np.array([tx, ty, f / s]), int(width), int(height))


def sample_cameras(rng, n, ranges=DEFAULT_RANGES):
    """Batch draw: dict of (n,) arrays s, tx, ty, fov_deg, f_ndc and (n, 3) transl."""
    s, tx, ty, fov, f = draw_camera_params(rng, n, ranges)
    return {"s": s, "tx": tx, "ty": ty, "fov_deg": fov, "f_ndc": f,
            "transl": np.stack([tx, ty, f / s], axis=1)}


def derive_translation(sample: CameraSample) -> np.ndarray:
    return np.array([sample.tx, sample.ty, sample.f_ndc / sample.s])


def look_at_extrinsics(camera_pos, target, up_hint=(0.0, 1.0, 0.0)) -> Extrinsics:
    camera_pos = np.asarray(camera_pos, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - camera_pos
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    forward /= norm
    right = np.cross(forward, np.asarray(up_hint, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("up hint is parallel to the viewing direction")
    right /= rn
    down = np.cross(forward, right)
    return Extrinsics(np.stack([right, down, forward]), camera_pos.copy())


# body frame is y-up facing +z; camera frame is y-down looking along +z
BODY_TO_CAMERA = np.diag([1.0, -1.0, -1.0])


def frontal_extrinsics(sample: CameraSample, pelvis) -> Extrinsics:
    """Place the camera so the pelvis lands at ``transl`` in camera space, body facing the lens."""
    position = np.asarray(pelvis, dtype=np.float64) - BODY_TO_CAMERA.T @ sample.transl
    return Extrinsics(BODY_TO_CAMERA.copy(), position)


def project(points, sample: CameraSample, z_near: float = Z_NEAR):
    """Camera-space points (n, 3) to pixels (n, 2) and a visibility flag.

    Points with z <= z_near get the pixel sentinel (-1, -1) and visible=False.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = p[:, 2]
    visible = z > z_near
    safe = np.where(visible, z, 1.0)
    px = sample.width / 2.0 + sample.f_ndc * (sample.width / 2.0) * p[:, 0] / safe
    py = sample.height / 2.0 + sample.f_ndc * (sample.height / 2.0) * p[:, 1] / safe
    pix = np.stack([px, py], axis=1)
    pix[~visible] = SENTINEL_PIXEL
    return pix, visible


def unproject(pixels, depth, sample: CameraSample) -> np.ndarray:
    pix = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    z = np.asarray(depth, dtype=np.float64).reshape(-1)
    x = (pix[:, 0] - sample.width / 2.0) / (sample.f_ndc * sample.width / 2.0) * z
    y = (pix[:, 1] - sample.height / 2.0) / (sample.f_ndc * sample.height / 2.0) * z
    return np.stack([x, y, z], axis=1)
