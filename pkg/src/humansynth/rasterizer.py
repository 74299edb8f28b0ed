"""CPU z-buffer rasterizer for normal maps, depth maps and body masks.

Coverage uses pixel-center sampling with the top-left fill rule on vertex
positions snapped to 1/256 pixel. Depth and normals are interpolated
perspective-correctly. Stored normals use the usual normal-map frame
(x right, y up, z toward the viewer), i.e. camera-space (x, -y, -z), and are
flipped so that they face the camera (z >= 0 in the stored frame).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .camera import Z_NEAR, CameraSample, Extrinsics

SUBPIXEL = 256
GUARD_PX = float(2 ** 20)
DEFAULT_SIZE = 768


@dataclass
class Framebuffer:
    width: int
    height: int
    normal: np.ndarray   # (H, W, 3) float64, zeros on background
    depth: np.ndarray    # (H, W) float64, +inf on background
    mask: np.ndarray     # (H, W) bool, body pixels only

    @property
    def foreground(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass
class NormalImage:
    width: int
    height: int
    rgb8: np.ndarray


def snap(pixels) -> np.ndarray:
    """Continuous pixel coordinates to fixed point (1/256 px), round half up."""
    return np.floor(np.asarray(pixels, dtype=np.float64) * SUBPIXEL + 0.5).astype(np.int64)


def vertex_normals(vertices, faces) -> np.ndarray:
    """Area-weighted vertex normals."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, f[:, k], fn)
    n = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, n, out=np.zeros_like(out), where=n > 0)


def face_normals(vertices, faces) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    n = np.linalg.norm(fn, axis=1, keepdims=True)
    return np.divide(fn, n, out=np.zeros_like(fn), where=n > 0)


def corner_normals(vertices, faces) -> np.ndarray:
    """Per-corner normals (F, 3, 3): smooth when faces are well connected, flat otherwise."""
    f = np.asarray(faces, dtype=np.int64)
    if len(f) == 0:
        return np.zeros((0, 3, 3))
    incidence = 3.0 * len(f) / max(len(vertices), 1)
    if incidence < 3.0:
        fn = face_normals(vertices, f)
        return np.repeat(fn[:, None, :], 3, axis=1)
    return vertex_normals(vertices, f)[f]


def _clip_planes(camera: CameraSample, z_near):
    planes = [np.array([0.0, 0.0, 1.0, -z_near])]
    for axis, size in ((0, camera.width), (1, camera.height)):
        half_px = camera.f_ndc * size / 2.0
        hi = (GUARD_PX - size / 2.0) / half_px
        lo = (-GUARD_PX - size / 2.0) / half_px
        e = np.zeros(4)
        e[axis], e[2] = -1.0, hi       # hi * z - x >= 0
        planes.append(e)
        e = np.zeros(4)
        e[axis], e[2] = 1.0, -lo       # x - lo * z >= 0
        planes.append(e)
    return planes


def _clip_polygon(poly, attrs, planes):
    for plane in planes:
        if not poly:
            break
        out_p, out_a = [], []
        n = len(poly)
        for i in range(n):
            p, q = poly[i], poly[(i + 1) % n]
            a, b = attrs[i], attrs[(i + 1) % n]
            dp = plane[:3] @ p + plane[3]
            dq = plane[:3] @ q + plane[3]
            if dp >= 0:
                out_p.append(p)
                out_a.append(a)
            if (dp >= 0) != (dq >= 0):
                t = dp / (dp - dq)
                out_p.append(p + t * (q - p))
                out_a.append(a + t * (b - a))
        poly, attrs = out_p, out_a
    return poly, attrs


def _prepare(verts_cam, faces, normals, camera, z_near):
    """Split triangles into pass-through and clipped sets.

    Returns per-output-triangle corner positions (T, 3, 3), corner normals
    (T, 3, 3) and source-face indices (T,).
    """
    tri = verts_cam[faces]
    z = tri[:, :, 2]
    half_w = camera.f_ndc * camera.width / 2.0
    half_h = camera.f_ndc * camera.height / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        px = camera.width / 2.0 + half_w * tri[:, :, 0] / z
        py = camera.height / 2.0 + half_h * tri[:, :, 1] / z
    in_front = (z > z_near).all(axis=1)
    inside_guard = in_front & (np.abs(px) < GUARD_PX).all(axis=1) & (np.abs(py) < GUARD_PX).all(axis=1)
    all_behind = (z <= z_near).all(axis=1)
    keep = np.flatnonzero(inside_guard)
    clip = np.flatnonzero(~inside_guard & ~all_behind)

    pos, nrm, src = [tri[keep]], [normals[keep]], [keep]
    if len(clip):
        planes = _clip_planes(camera, z_near)
        extra_p, extra_n, extra_s = [], [], []
        for f in clip:
            poly, attrs = _clip_polygon(list(tri[f]), list(normals[f]), planes)
            for k in range(1, len(poly) - 1):
                extra_p.append([poly[0], poly[k], poly[k + 1]])
                extra_n.append([attrs[0], attrs[k], attrs[k + 1]])
                extra_s.append(f)
        if extra_p:
            pos.append(np.array(extra_p))
            nrm.append(np.array(extra_n))
            src.append(np.array(extra_s, dtype=np.int64))
    return np.concatenate(pos), np.concatenate(nrm), np.concatenate(src)


def rasterize_camera_space(meshes, camera: CameraSample, z_near=Z_NEAR) -> Framebuffer:
    """Rasterize meshes already in camera space.

    ``meshes`` is a sequence of (vertices, faces, corner_normals, is_body).
    Triangles are drawn in order; ties in depth keep the earlier triangle.
    """
    w, h = camera.width, camera.height
    depth = np.full((h, w), np.inf)
    face_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))

    all_pos, all_nrm, all_body, all_flat = [], [], [], []
    for verts, faces, normals, is_body in meshes:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) == 0:
            continue
        verts = np.asarray(verts, dtype=np.float64)
        pos, nrm, src = _prepare(verts, faces, np.asarray(normals, dtype=np.float64), camera, z_near)
        if len(pos) == 0:
            continue
        all_pos.append(pos)
        all_nrm.append(nrm)
        all_body.append(np.full(len(pos), bool(is_body)))
        all_flat.append(face_normals(verts, faces)[src])

    mask = np.zeros((h, w), dtype=bool)
    normal = np.zeros((h, w, 3))
    if not all_pos:
        return Framebuffer(w, h, normal, depth, mask)

    pos = np.concatenate(all_pos)
    nrm = np.concatenate(all_nrm)
    is_body = np.concatenate(all_body)
    flat = np.concatenate(all_flat)

    flat_pos = pos.reshape(-1, 3)
    z = np.ascontiguousarray(flat_pos[:, 2])
    px = w / 2.0 + camera.f_ndc * (w / 2.0) * flat_pos[:, 0] / z
    py = h / 2.0 + camera.f_ndc * (h / 2.0) * flat_pos[:, 1] / z
    fixed = np.ascontiguousarray(snap(np.stack([px, py], axis=1)))
    tri_idx = np.arange(len(flat_pos), dtype=np.int64).reshape(-1, 3)
    kernels.raster_triangles(fixed, z, tri_idx, depth, face_id, bary)

    fg = face_id >= 0
    ids = face_id[fg]
    n = np.einsum("pk,pkc->pc", bary[fg], nrm[ids])
    length = np.linalg.norm(n, axis=1, keepdims=True)
    bad = length[:, 0] < 1e-12
    n = np.divide(n, length, out=np.zeros_like(n), where=~bad[:, None])
    n[bad] = flat[ids[bad]]
    # face the camera: camera-space z must be <= 0
    n[n[:, 2] > 0] *= -1.0
    normal[fg] = n * np.array([1.0, -1.0, -1.0])
    mask[fg] = is_body[ids]
    return Framebuffer(w, h, normal, depth, mask)


def rasterize(body, camera: CameraSample, extr: Extrinsics, scene=None, z_near=Z_NEAR) -> Framebuffer:
    """Render a posed body (and optionally a scene mesh) through a camera.

    ``body`` needs ``vertices`` and ``faces`` attributes; ``scene`` is an
    optional (vertices, faces) pair in world coordinates. Scene triangles
    take part in the depth test but never set the mask.
    """
    meshes = []
    if body is not None and len(body.faces):
        v_cam = extr.world_to_camera(body.vertices)
        meshes.append((v_cam, body.faces, corner_normals(v_cam, body.faces), True))
    if scene is not None:
        s_verts, s_faces = scene
        if len(s_faces):
            v_cam = extr.world_to_camera(s_verts)
            meshes.append((v_cam, s_faces, corner_normals(v_cam, s_faces), False))
    return rasterize_camera_space(meshes, camera, z_near)


def render_mask(body, camera: CameraSample, extr: Extrinsics) -> np.ndarray:
    return rasterize(body, camera, extr).mask


def encode_normal_image(fb: Framebuffer, region=None) -> NormalImage:
    """8-bit normal image; pixels outside ``region`` (default: all rendered
    pixels) stay (0, 0, 0)."""
    fg = fb.foreground if region is None else (np.asarray(region, dtype=bool) & fb.foreground)
    rgb = np.zeros((fb.height, fb.width, 3), dtype=np.uint8)
    vals = np.floor((fb.normal[fg] + 1.0) / 2.0 * 255.0 + 0.5)
    rgb[fg] = np.clip(vals, 0, 255).astype(np.uint8)
    return NormalImage(fb.width, fb.height, rgb)


def decode_normal_image(img: NormalImage):
    """Inverse of the encoding: (normals (H, W, 3), foreground mask)."""
    rgb = img.rgb8.astype(np.float64)
    fg = img.rgb8.any(axis=2)
    n = rgb / 255.0 * 2.0 - 1.0
    n[~fg] = 0.0
    return n, fg


# --- serialization -------------------------------------------------------

def png_bytes(array, compress_level=1) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def normal_png(img: NormalImage) -> bytes:
    return png_bytes(img.rgb8)


def mask_png(mask) -> bytes:
    return png_bytes(np.where(mask, 255, 0).astype(np.uint8))


def read_png(data_or_path) -> np.ndarray:
    src = io.BytesIO(data_or_path) if isinstance(data_or_path, (bytes, bytearray)) else data_or_path
    with Image.open(src) as im:
        return np.array(im)


def read_mask_png(data_or_path) -> np.ndarray:
    arr = read_png(data_or_path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr >= 128


def read_normal_png(data_or_path) -> NormalImage:
    arr = read_png(data_or_path)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise ValueError(f"normal image must be RGB, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr[..., :3])
    return NormalImage(arr.shape[1], arr.shape[0], arr)


def depth_bytes(depth) -> bytes:
    """Depth file: width, height as little-endian u32, then float32 LE rows.
    Background pixels hold +inf."""
    d = np.asarray(depth)
    h, w = d.shape
    return struct.pack("<II", w, h) + d.astype("<f4").tobytes()


def read_depth(data) -> np.ndarray:
    if not isinstance(data, (bytes, bytearray)):
        with open(data, "rb") as fh:
            data = fh.read()
    if len(data) < 8:
        raise ValueError("depth file is shorter than its header")
    w, h = struct.unpack("<II", data[:8])
    body = data[8:]
    if len(body) != 4 * w * h:
        raise ValueError(f"depth payload has {len(body)} bytes, expected {4 * w * h}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
