"""Procedural fixtures: a capsule-limb toy body, pose sets and a furnished room.

Nothing here depends on licensed assets. The toy body has five joints
(pelvis, spine, head, left_arm, right_arm), about 190 vertices and stands
on y = 0 facing +z.
"""
import numpy as np

from .body_model import BodyModel, make_model

JOINT_NAMES = ("pelvis", "spine", "head", "left_arm", "right_arm")
PARENTS = (-1, 0, 1, 1, 1)
SEGMENTS = 8

FLOOR, WALL, FURNITURE = 0, 1, 2
LABEL_NAMES = {FLOOR: "floor", WALL: "wall", FURNITURE: "furniture"}


def _basis(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return axis, u, np.cross(axis, u)


class _MeshBuilder:
    def __init__(self, n_joints):
        self.verts, self.faces, self.weights, self.groups = [], [], [], {}
        self.radial = []
        self.n_joints = n_joints

    def _weight(self, spec):
        w = np.zeros(self.n_joints)
        for j, val in spec.items():
            w[j] = val
        return w

    def capsule(self, name, start, axis, rings, radii, pole_lo, pole_hi, ring_weights, lo_w, hi_w):
        """Rings at distances ``rings`` along ``axis`` from ``start`` plus two pole vertices."""
        start = np.asarray(start, float)
        axis, u, v = _basis(np.asarray(axis, float))
        base = len(self.verts)
        idx = []
        self.verts.append(start + pole_lo * axis)
        self.weights.append(self._weight(lo_w))
        self.radial.append(np.zeros(3))
        lo = base
        angles = 2 * np.pi * np.arange(SEGMENTS) / SEGMENTS
        for d, r, w in zip(rings, radii, ring_weights):
            ring = []
            for a in angles:
                offset = r * (np.cos(a) * u + np.sin(a) * v)
                ring.append(len(self.verts))
                self.verts.append(start + d * axis + offset)
                self.weights.append(self._weight(w))
                self.radial.append(offset)
            idx.append(ring)
        hi = len(self.verts)
        self.verts.append(start + pole_hi * axis)
        self.weights.append(self._weight(hi_w))
        self.radial.append(np.zeros(3))
        for k in range(SEGMENTS):
            k2 = (k + 1) % SEGMENTS
            self.faces.append((lo, idx[0][k2], idx[0][k]))
            for r in range(len(idx) - 1):
                a, b = idx[r][k], idx[r][k2]
                c, d = idx[r + 1][k], idx[r + 1][k2]
                self.faces.append((a, b, d))
                self.faces.append((a, d, c))
            self.faces.append((hi, idx[-1][k], idx[-1][k2]))
        self.groups[name] = (list(range(base, hi + 1)), idx)


def build_toy_body() -> BodyModel:
    P, S, H, LA, RA = range(5)
    b = _MeshBuilder(5)
    for name, x in (("left_leg", 0.1), ("right_leg", -0.1)):
        b.capsule(name, (x, 0.95, 0.0), (0, -1, 0), [0.05, 0.45, 0.88], [0.08, 0.06, 0.05],
                  0.0, 0.95, [{P: 1.0}] * 3, {P: 1.0}, {P: 1.0})
    b.capsule("torso", (0.0, 0.95, 0.0), (0, 1, 0), [0.0, 0.15, 0.30, 0.45, 0.53],
              [0.16, 0.14, 0.15, 0.17, 0.12], -0.07, 0.57,
              [{P: 1.0}, {P: 0.5, S: 0.5}, {S: 1.0}, {S: 1.0}, {S: 1.0}], {P: 1.0}, {S: 1.0})
    b.capsule("head", (0.0, 1.55, 0.0), (0, 1, 0), [0.0, 0.10, 0.20], [0.06, 0.10, 0.08],
              -0.02, 0.27, [{S: 0.5, H: 0.5}, {H: 1.0}, {H: 1.0}], {S: 1.0}, {H: 1.0})
    for name, j, sign in (("left_arm", LA, 1.0), ("right_arm", RA, -1.0)):
        b.capsule(name, (0.2 * sign, 1.45, 0.0), (sign, 0, 0), [0.0, 0.15, 0.35, 0.52],
                  [0.05, 0.045, 0.04, 0.035], -0.05, 0.58,
                  [{S: 0.5, j: 0.5}, {j: 1.0}, {j: 1.0}, {j: 1.0}], {S: 1.0}, {j: 1.0})

    verts = np.array(b.verts)
    n = len(verts)
    radial = np.array(b.radial)
    regressor = np.zeros((5, n))
    for j, (group, ring) in ((P, ("torso", 0)), (S, ("torso", 2)), (H, ("head", 0)),
                             (LA, ("left_arm", 0)), (RA, ("right_arm", 0))):
        ids = b.groups[group][1][ring]
        regressor[j, ids] = 1.0 / len(ids)

    shape_dirs = np.zeros((4, n, 3))
    shape_dirs[0, :, 1] = 0.1 * verts[:, 1]                      # stature
    shape_dirs[1] = 0.2 * radial                                 # girth
    for name, sign in (("left_arm", 1.0), ("right_arm", -1.0)):
        shape_dirs[2, b.groups[name][0], 0] = 0.03 * sign        # shoulder width
    belly = b.groups["torso"][1][1] + b.groups["torso"][1][2]
    shape_dirs[3, belly] = 0.3 * radial[belly]                   # belly

    expr_dirs = np.zeros((2, n, 3))
    head_ids = b.groups["head"][0]
    lower = [i for i in head_ids if verts[i, 1] < 1.62]
    expr_dirs[0, lower, 1] = -0.02
    expr_dirs[1, head_ids] = 0.1 * radial[head_ids]

    return make_model(verts, np.array(b.faces), shape_dirs, expr_dirs, regressor,
                      PARENTS, np.array(b.weights), JOINT_NAMES)


POSE_CLASSES = ("standing", "reaching", "waving", "leaning")


def random_motion(rng, asymmetric=False):
    """One pose sample with gender/action metadata.

    The asymmetric variant leans the whole body sideways and raises one arm,
    so the silhouette differs strongly from its left-right mirror image.
    """
    thetas = np.zeros((5, 3))
    if asymmetric:
        side = 1.0 if rng.random() < 0.5 else -1.0
        thetas[0] = [0.0, rng.uniform(-0.3, 0.3), side * rng.uniform(0.45, 0.8)]
        thetas[1, 2] = side * rng.uniform(0.1, 0.3)
        thetas[3, 2] = side * rng.uniform(0.9, 1.4)
        thetas[4, 2] = side * rng.uniform(0.9, 1.4)
        pose_class = "leaning"
    else:
        thetas[0] = [rng.uniform(-0.1, 0.1), rng.uniform(-0.6, 0.6), rng.uniform(-0.1, 0.1)]
        thetas[1] = rng.uniform(-0.15, 0.15, 3)
        thetas[2] = rng.uniform(-0.2, 0.2, 3)
        thetas[3, 2] = rng.uniform(-1.2, 0.6)
        thetas[4, 2] = -rng.uniform(-1.2, 0.6)
        thetas[3:, 1] = rng.uniform(-0.4, 0.4, 2)
        pose_class = POSE_CLASSES[int(rng.integers(0, 3))]
    return {
        "gender": "man" if rng.random() < 0.5 else "woman",
        "pose_class": pose_class,
        "thetas": thetas,
        "betas": rng.normal(0.0, 0.5, 4),
        "psi": rng.normal(0.0, 0.5, 2),
    }


def _grid(origin, du, dv, nu, nv):
    origin, du, dv = (np.asarray(a, float) for a in (origin, du, dv))
    ii, jj = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
    verts = origin + ii[..., None] * du + jj[..., None] * dv
    verts = verts.reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * (nv + 1) + j
            b, c, d = a + nv + 1, a + 1, a + nv + 2
            faces += [(a, b, d), (a, d, c)]
    return verts, np.array(faces)


def _box(lo, hi, step):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size = hi - lo
    n = np.maximum(1, np.ceil(size / step).astype(int))
    ex, ey, ez = (np.eye(3)[k] * size[k] / n[k] for k in range(3))
    parts = [
        _grid(lo, ex, ez, n[0], n[2]),
        _grid(lo + [0, size[1], 0], ez, ex, n[2], n[0]),
        _grid(lo, ey, ex, n[1], n[0]),
        _grid(lo + [0, 0, size[2]], ex, ey, n[0], n[1]),
        _grid(lo, ez, ey, n[2], n[1]),
        _grid(lo + [size[0], 0, 0], ey, ez, n[1], n[2]),
    ]
    return parts


def build_room(size=(6.0, 2.6, 6.0), step=0.1, furniture=True):
    """Rectangular room with floor at y = 0, four walls and optional boxes.

    Returns (vertices, faces, labels) with per-vertex labels
    FLOOR / WALL / FURNITURE.
    """
    sx, sy, sz = size
    n = lambda length: max(1, int(round(length / step)))
    parts = [(_grid((0, 0, 0), (0, 0, sz / n(sz)), (sx / n(sx), 0, 0), n(sz), n(sx)), FLOOR)]
    parts.append((_grid((0, 0, 0), (sx / n(sx), 0, 0), (0, sy / n(sy), 0), n(sx), n(sy)), WALL))
    parts.append((_grid((0, 0, sz), (0, sy / n(sy), 0), (sx / n(sx), 0, 0), n(sy), n(sx)), WALL))
    parts.append((_grid((0, 0, 0), (0, sy / n(sy), 0), (0, 0, sz / n(sz)), n(sy), n(sz)), WALL))
    parts.append((_grid((sx, 0, 0), (0, 0, sz / n(sz)), (0, sy / n(sy), 0), n(sz), n(sy)), WALL))
    if furniture:
        for lo, hi in (((0.3, 0.0, 0.3), (1.5, 0.75, 1.1)),      # table
                       ((4.2, 0.0, 4.4), (5.7, 0.9, 5.7)),      # bed
                       ((0.2, 0.0, 4.8), (0.8, 1.9, 5.8))):     # wardrobe
            parts += [(p, FURNITURE) for p in _box(lo, hi, step)]
    verts, faces, labels = [], [], []
    offset = 0
    for (v, f), label in parts:
        verts.append(v)
        faces.append(f + offset)
        labels.append(np.full(len(v), label, dtype=np.int32))
        offset += len(v)
    return np.vstack(verts), np.vstack(faces).astype(np.int64), np.concatenate(labels)
