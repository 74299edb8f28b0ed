"""Scene voxelization, ground fitting and collision-free human placement.

Scene meshes are Wavefront OBJ files (``v``/``f`` records, polygons are
fan-triangulated) with two sidecars:

* ``<name>.labels``: one integer class id per vertex, in vertex order;
* ``<name>.names``: ``<id> <name>`` per line; the class named ``floor``
  anchors the ground plane.

Lines starting with ``#`` are comments in both sidecars.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .camera import CameraSample, Extrinsics, look_at_extrinsics, sample_camera, DEFAULT_RANGES

log = logging.getLogger(__name__)

COLLISION_MARGIN = 0.02
LEAF_SIZE = 0.25
MAX_ITERS = 100
MAX_ATTEMPTS = 20
MAX_GROUND_TILT_DEG = 30.0


class PlacementError(RuntimeError):
    pass


@dataclass
class LabeledSceneMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_labels: np.ndarray
    label_names: dict = field(default_factory=lambda: {0: "floor"})

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.vertex_labels = np.asarray(self.vertex_labels, dtype=np.int64).reshape(-1)
        if len(self.vertex_labels) != len(self.vertices):
            raise ValueError(
                f"{len(self.vertex_labels)} labels for {len(self.vertices)} vertices"
            )

    @property
    def floor_ids(self) -> list:
        return [k for k, v in self.label_names.items() if v == "floor"]

    def floor_vertex_mask(self) -> np.ndarray:
        return np.isin(self.vertex_labels, self.floor_ids)

    def obstacle_face_mask(self) -> np.ndarray:
        """Faces with at least one non-floor vertex."""
        floor = self.floor_vertex_mask()
        return ~floor[self.faces].all(axis=1)


# --- file formats --------------------------------------------------------

def read_obj(path):
    verts, faces = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(path, vertices, faces):
    with open(path, "w", encoding="utf-8") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def load_scene(obj_path, labels_path=None, names_path=None) -> LabeledSceneMesh:
    obj_path = Path(obj_path)
    labels_path = Path(labels_path) if labels_path else obj_path.with_suffix(".labels")
    names_path = Path(names_path) if names_path else obj_path.with_suffix(".names")
    verts, faces = read_obj(obj_path)
    labels = np.array([int(x) for x in _data_lines(labels_path)], dtype=np.int64)
    names = {}
    if names_path.exists():
        for line in _data_lines(names_path):
            k, name = line.split(maxsplit=1)
            names[int(k)] = name.strip()
    else:
        names = {0: "floor"}
    return LabeledSceneMesh(verts, faces, labels, names)


def save_scene(scene: LabeledSceneMesh, obj_path) -> None:
    obj_path = Path(obj_path)
    write_obj(obj_path, scene.vertices, scene.faces)
    obj_path.with_suffix(".labels").write_text(
        "".join(f"{int(x)}\n" for x in scene.vertex_labels), encoding="utf-8")
    obj_path.with_suffix(".names").write_text(
        "".join(f"{k} {v}\n" for k, v in sorted(scene.label_names.items())), encoding="utf-8")


# --- octree ---------------------------------------------------------------

@dataclass
class Octree:
    """Occupancy octree over a cube of side leaf_size * 2**depth.

    ``levels[k]`` holds the integer coordinates of occupied nodes at level k
    (level 0 is the root, level ``depth`` the leaves).
    """
    origin: np.ndarray
    leaf_size: float
    depth: int
    levels: list

    @property
    def leaves(self) -> set:
        return self.levels[self.depth]

    def node_box(self, level, coord):
        size = self.leaf_size * 2 ** (self.depth - level)
        lo = self.origin + np.asarray(coord, dtype=np.float64) * size
        return lo, lo + size

    def query_box(self, lo, hi) -> bool:
        """True when an occupied leaf overlaps the open box (lo, hi)."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)

        def visit(level, coord):
            if coord not in self.levels[level]:
                return False
            nlo, nhi = self.node_box(level, coord)
            if np.any(nhi <= lo) or np.any(nlo >= hi):
                return False
            if level == self.depth:
                return True
            x, y, z = coord
            return any(
                visit(level + 1, (2 * x + dx, 2 * y + dy, 2 * z + dz))
                for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)
            )

        return visit(0, (0, 0, 0)) if self.levels[0] else False


def build_octree(triangles, leaf_size, origin=None, depth=None) -> Octree:
    """Voxelize triangles (M, 3, 3); a leaf is occupied iff a triangle overlaps its closed box."""
    tris = np.ascontiguousarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    if leaf_size <= 0:
        raise ValueError("leaf_size must be positive")
    pts = tris.reshape(-1, 3)
    if origin is None:
        origin = pts.min(axis=0) if len(pts) else np.zeros(3)
    origin = np.asarray(origin, dtype=np.float64)
    if len(pts) and np.any(pts < origin):
        raise ValueError("octree origin must lie at or below the mesh bounding box")
    if depth is None:
        extent = float((pts.max(axis=0) - origin).max()) if len(pts) else leaf_size
        depth = max(0, math.ceil(math.log2(max(extent / leaf_size, 1.0))))
    elif len(pts) and float((pts.max(axis=0) - origin).max()) > leaf_size * 2 ** depth:
        raise ValueError("mesh extends beyond the octree root cube")
    levels = [set() for _ in range(depth + 1)]
    tree = Octree(origin, float(leaf_size), depth, levels)
    if len(tris) == 0:
        return tree

    def recurse(level, coord, candidates):
        lo, hi = tree.node_box(level, coord)
        center = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        hit = kernels.tri_box_overlap(tris[candidates], center, half)
        candidates = candidates[hit]
        if len(candidates) == 0:
            return
        levels[level].add(coord)
        if level == depth:
            return
        x, y, z = coord
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    recurse(level + 1, (2 * x + dx, 2 * y + dy, 2 * z + dz), candidates)

    recurse(0, (0, 0, 0), np.arange(len(tris)))
    return tree


@dataclass
class VoxelizedScene:
    mesh: LabeledSceneMesh
    octree: Octree
    obstacles: Octree
    ground_normal: np.ndarray
    ground_offset: float
    _kdtree: cKDTree | None = field(default=None, repr=False)

    @property
    def leaf_size(self) -> float:
        return self.octree.leaf_size

    @property
    def occupied_leaves(self) -> set:
        return self.octree.leaves

    @property
    def ground_plane(self):
        return self.ground_normal, self.ground_offset

    @property
    def obstacle_points(self) -> np.ndarray:
        ids = np.unique(self.mesh.faces[self.mesh.obstacle_face_mask()])
        ids = ids[~self.mesh.floor_vertex_mask()[ids]]
        return self.mesh.vertices[ids]

    @property
    def kdtree(self):
        if self._kdtree is None:
            pts = self.obstacle_points
            self._kdtree = cKDTree(pts) if len(pts) else None
        return self._kdtree


def voxelize(scene: LabeledSceneMesh, leaf_size=LEAF_SIZE, origin=None, depth=None) -> VoxelizedScene:
    if len(scene.faces) == 0:
        raise ValueError("cannot voxelize an empty mesh")
    if not np.all(np.isfinite(scene.vertices)):
        raise ValueError("scene bounding box is not finite")
    tris = scene.vertices[scene.faces]
    tree = build_octree(tris, leaf_size, origin, depth)
    obstacle_tris = tris[scene.obstacle_face_mask()]
    obstacles = build_octree(obstacle_tris, leaf_size, tree.origin, tree.depth)
    normal, offset = fit_ground(scene)
    return VoxelizedScene(scene, tree, obstacles, normal, offset)


def fit_ground(scene: LabeledSceneMesh):
    """Least-squares plane through floor vertices as (unit normal, offset), n.p = offset."""
    pts = scene.vertices[scene.floor_vertex_mask()]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 floor vertices, found {len(pts)}")
    centroid = pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise ValueError("floor vertices are collinear")
    normal = vt[2]
    if normal[1] < 0:
        normal = -normal
    tilt = np.degrees(np.arccos(np.clip(normal[1], -1.0, 1.0)))
    if tilt > MAX_GROUND_TILT_DEG:
        raise ValueError(f"fitted floor is tilted {tilt:.1f} deg from +y")
    return normal, float(normal @ centroid)


def chamfer_one_sided(points_a, points_b, tree=None) -> float:
    """Mean distance from each point of a to its nearest point of b."""
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    if tree is None:
        tree = cKDTree(b)
    d, _ = tree.query(a)
    return float(np.mean(d))


@dataclass
class Placement:
    translation: np.ndarray
    chamfer: float
    collision_free: bool
    min_clearance: float = math.inf
    attempts: int = 1
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "translation": [float(v) for v in self.translation],
            "chamfer": None if math.isinf(self.chamfer) else self.chamfer,
            "collision_free": self.collision_free,
            "min_clearance": None if math.isinf(self.min_clearance) else self.min_clearance,
            "attempts": self.attempts,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d) -> "Placement":
        inf = lambda v: math.inf if v is None else float(v)
        return cls(np.asarray(d["translation"], dtype=np.float64), inf(d["chamfer"]),
                   bool(d["collision_free"]), inf(d.get("min_clearance")),
                   int(d.get("attempts", 1)), int(d.get("iterations", 0)))


def _tangent_basis(n):
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = helper - (helper @ n) * n
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _ground_snap(vertices, normal, offset):
    return (offset - float((vertices @ normal).min())) * normal


def place_human(body, scene: VoxelizedScene, rng, margin=COLLISION_MARGIN,
                max_iters=MAX_ITERS, max_attempts=MAX_ATTEMPTS, initial_translation=None) -> Placement:
    """Ground the body, pick a free spot and push it clear of obstacles.

    The translation moves only within the ground plane after grounding, so
    the lowest body vertex stays on the fitted plane.
    """
    n, h = scene.ground_plane
    u, w = _tangent_basis(n)
    verts = np.asarray(body.vertices, dtype=np.float64)
    snap = _ground_snap(verts, n, h)
    tree = scene.kdtree

    floor = scene.mesh.vertices[scene.mesh.floor_vertex_mask()]
    fu, fw = floor @ u, floor @ w
    center = verts.mean(axis=0)
    cu, cw = center @ u, center @ w

    def candidates():
        if initial_translation is not None:
            t = np.asarray(initial_translation, dtype=np.float64)
            yield (t @ u) * u + (t @ w) * w + snap, False
        for _ in range(max_attempts):
            a = rng.uniform(fu.min(), fu.max())
            b = rng.uniform(fw.min(), fw.max())
            yield (a - cu) * u + (b - cw) * w + snap, True

    best, found = None, 0
    for attempt, (t, check_free) in enumerate(candidates(), start=1):
        if check_free:
            moved = verts + t
            if scene.obstacles.query_box(moved.min(axis=0), moved.max(axis=0)):
                continue
        found += 1
        placement = _refine(verts, t, tree, u, w, margin, max_iters, rng)
        placement.attempts = attempt
        if best is None or placement.min_clearance > best.min_clearance:
            best = placement
        if placement.min_clearance >= margin:
            return placement
    if best is None:
        raise PlacementError(f"no free space for the body after {max_attempts} attempts")
    return best


def _refine(verts, t, tree, u, w, margin, max_iters, rng) -> Placement:
    if tree is None:
        return Placement(t, math.inf, True, math.inf, iterations=0)

    def evaluate(tt):
        d, idx = tree.query(verts + tt)
        return d, idx, float(np.maximum(margin - d, 0.0).sum())

    d, idx, penalty = evaluate(t)
    step = 5.0 * margin
    it = 0
    while it < max_iters and penalty > 0.0 and step > 1e-5:
        it += 1
        close = d < margin
        pts = verts[close] + t
        away = pts - tree.data[idx[close]]
        norms = np.linalg.norm(away, axis=1, keepdims=True)
        away = np.divide(away, norms, out=np.zeros_like(away), where=norms > 0)
        direction = away.mean(axis=0)
        direction = (direction @ u) * u + (direction @ w) * w
        dn = np.linalg.norm(direction)
        if dn < 1e-12:
            a = rng.uniform(0.0, 2.0 * np.pi)
            direction = np.cos(a) * u + np.sin(a) * w
        else:
            direction /= dn
        while step > 1e-5:
            cand = t + step * direction
            d2, idx2, p2 = evaluate(cand)
            if p2 < penalty:
                t, d, idx, penalty = cand, d2, idx2, p2
                step *= 1.5
                break
            step /= 2.0
    chamfer = float(np.mean(d))
    return Placement(t, chamfer, chamfer >= margin, float(d.min()), iterations=it)


def sample_scene_camera(body, rng, width, height, ranges=DEFAULT_RANGES, fill=(0.3, 0.9),
                        azimuth=None, radius=None, scene: VoxelizedScene | None = None,
                        max_tries=20):
    """Camera at pelvis height +-1 m on a random azimuth, looking at a torso joint.

    The horizontal distance makes the body's bounding sphere fill the given
    fraction of the image height, but never less than 1.2 sphere radii.
    With ``scene`` given, positions whose sight line to the target crosses
    an obstacle leaf are re-drawn.
    """
    names = tuple(body.joint_names)
    if "pelvis" not in names:
        raise ValueError("body has no pelvis joint")
    from .body_model import TORSO_JOINTS
    torso = [i for i, nm in enumerate(names) if nm in TORSO_JOINTS]
    if not torso:
        raise ValueError("body has no torso joints")
    pelvis = body.joints[names.index("pelvis")]
    verts = np.asarray(body.vertices)
    center = (verts.min(axis=0) + verts.max(axis=0)) / 2.0
    rb = float(np.linalg.norm(verts - center, axis=1).max())

    cam = sample_camera(rng, width, height, ranges)
    target = body.joints[torso[int(rng.integers(0, len(torso)))]]
    for _ in range(max_tries):
        dh = rng.uniform(-1.0, 1.0)
        az = rng.uniform(0.0, 2.0 * np.pi) if azimuth is None else float(azimuth)
        if radius is None:
            frac = rng.uniform(*fill)
            r = max(rb * cam.f_ndc / frac, 1.2 * rb)
        else:
            r = float(radius)
        pos = np.array([target[0] + r * np.sin(az), pelvis[1] + dh, target[2] + r * np.cos(az)])
        if scene is None or _line_of_sight(scene, pos, target):
            break
    return cam, look_at_extrinsics(pos, target)


def _line_of_sight(scene: VoxelizedScene, a, b) -> bool:
    leaf = scene.leaf_size
    length = np.linalg.norm(b - a)
    n = max(2, int(length / (leaf / 2.0)) + 1)
    eps = leaf * 0.05
    for t in np.linspace(0.0, 1.0, n)[:-1]:
        p = a + t * (b - a)
        if scene.obstacles.query_box(p - eps, p + eps):
            return False
    return True
