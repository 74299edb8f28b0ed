"""Parametric triangulated body: blendshapes, forward kinematics, linear blend skinning.

The on-disk format is a single ``.npz`` archive (no pickled objects):

==========================  =========  ===============================================
key                         dtype      shape / meaning
==========================  =========  ===============================================
``format_version``          int64      scalar, currently 1
``template_vertices``       float64    (N, 3) rest vertices in meters
``faces``                   uint32     (F, 3) triangle vertex indices
``shape_dirs``              float64    (K, N, 3) shape blendshapes, channel-major
``expr_dirs``               float64    (E, N, 3) expression blendshapes, channel-major
``joint_regressor_row``     int32      (nnz,) COO row (joint) indices
``joint_regressor_col``     int32      (nnz,) COO column (vertex) indices
``joint_regressor_val``     float64    (nnz,) COO values
``joint_regressor_shape``   int64      (2,) = (J, N)
``parents``                 int32      (J,) parent joint, -1 for the root
``skin_weights``            float64    (N, J) dense row-major, rows sum to 1
``joint_names``             unicode    (J,) joint labels
``pose_dirs``               float64    optional, reserved; ignored by ``forward``
==========================  =========  ===============================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1
TORSO_JOINTS = ("spine", "spine1", "spine2", "spine3", "chest", "torso")

SMPLX_JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "jaw",
    "left_eye_smplhf", "right_eye_smplhf",
] + [
    f"{side}_{finger}{k}"
    for side in ("left", "right")
    for finger in ("index", "middle", "pinky", "ring", "thumb")
    for k in (1, 2, 3)
]


class ModelFormatError(ValueError):
    """Raised when a body-model file or array set violates the format."""


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    expr_dirs: np.ndarray
    joint_regressor: sp.csr_matrix
    kinematic_parents: np.ndarray
    skin_weights: np.ndarray
    joint_names: tuple
    pose_dirs: np.ndarray | None = None
    _order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        validate(self)
        object.__setattr__(self, "_order", _topological_order(self.kinematic_parents))

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return len(self.kinematic_parents)

    @property
    def num_betas(self) -> int:
        return self.shape_dirs.shape[0]

    @property
    def num_expr(self) -> int:
        return self.expr_dirs.shape[0]

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"model has no joint named {name!r}") from None

    def torso_joints(self) -> list[int]:
        return [i for i, n in enumerate(self.joint_names) if n in TORSO_JOINTS]

    def zero_shape(self) -> "ShapeParams":
        return ShapeParams(np.zeros(self.num_betas), np.zeros(self.num_expr))

    def zero_pose(self) -> "PoseParams":
        return PoseParams(np.zeros((self.num_joints, 3)), np.zeros(3))


@dataclass
class ShapeParams:
    betas: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        self.psi = np.asarray(self.psi, dtype=np.float64).reshape(-1)


@dataclass
class PoseParams:
    thetas: np.ndarray
    root_translation: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=np.float64).reshape(-1, 3)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64).reshape(3)


@dataclass
class PosedBody:
    vertices: np.ndarray
    joints: np.ndarray
    faces: np.ndarray
    joint_names: tuple = ()

    def joint(self, name: str) -> np.ndarray:
        return self.joints[self.joint_names.index(name)]


def _topological_order(parents):
    parents = np.asarray(parents)
    order, seen = [], set()
    children = {i: [] for i in range(len(parents))}
    for i, p in enumerate(parents):
        if p >= 0:
            children[int(p)].append(i)
    stack = [i for i, p in enumerate(parents) if p < 0]
    while stack:
        j = stack.pop()
        order.append(j)
        seen.add(j)
        stack.extend(reversed(children[j]))
    return np.array(order, dtype=np.int64)


def validate(model: BodyModel) -> None:
    v = model.template_vertices
    if v.ndim != 2 or v.shape[1] != 3:
        raise ModelFormatError(f"template_vertices must be (N, 3), got {v.shape}")
    n = v.shape[0]
    if not np.all(np.isfinite(v)):
        raise ModelFormatError("template_vertices contain non-finite values")
    f = model.faces
    if f.ndim != 2 or f.shape[1] != 3:
        raise ModelFormatError(f"faces must be (F, 3), got {f.shape}")
    if f.size and (f.min() < 0 or f.max() >= n):
        raise ModelFormatError(f"faces reference vertices outside [0, {n})")
    for name in ("shape_dirs", "expr_dirs"):
        d = getattr(model, name)
        if d.ndim != 3 or d.shape[1:] != (n, 3):
            raise ModelFormatError(f"{name} must be (channels, {n}, 3), got {d.shape}")

    parents = model.kinematic_parents
    j = len(parents)
    roots = np.flatnonzero(parents < 0)
    if len(roots) != 1:
        raise ModelFormatError(f"kinematic tree needs exactly one root, found {len(roots)}")
    if np.any(parents >= j):
        raise ModelFormatError("parent index out of range")
    for i in range(j):
        # walking up must reach the root within j steps, otherwise there is a cycle
        k, steps = i, 0
        while parents[k] >= 0:
            k = parents[k]
            steps += 1
            if steps > j:
                raise ModelFormatError(f"kinematic tree has a cycle through joint {i}")

    if model.joint_regressor.shape != (j, n):
        raise ModelFormatError(f"joint_regressor must be ({j}, {n}), got {model.joint_regressor.shape}")

    w = model.skin_weights
    if w.shape != (n, j):
        raise ModelFormatError(f"skin_weights must be ({n}, {j}), got {w.shape}")
    neg = np.flatnonzero((w < 0).any(axis=1))
    if len(neg):
        raise ModelFormatError(f"negative skin weight at vertex {neg[0]}")
    bad = np.flatnonzero(np.abs(w.sum(axis=1) - 1.0) > 1e-6)
    if len(bad):
        raise ModelFormatError(
            f"skin weights at vertex {bad[0]} sum to {w[bad[0]].sum():.9f}, expected 1"
        )

    if len(model.joint_names) != j:
        raise ModelFormatError(f"expected {j} joint names, got {len(model.joint_names)}")
    if "pelvis" not in model.joint_names:
        raise ModelFormatError("joint_names must include 'pelvis'")
    if not any(name in TORSO_JOINTS for name in model.joint_names):
        raise ModelFormatError(f"joint_names must include a torso joint, one of {TORSO_JOINTS}")


def make_model(template_vertices, faces, shape_dirs, expr_dirs, joint_regressor,
               parents, skin_weights, joint_names, pose_dirs=None) -> BodyModel:
    """Build a BodyModel from loose arrays, coercing dtypes."""
    v = np.ascontiguousarray(template_vertices, dtype=np.float64)
    n = v.shape[0]
    shape_dirs = np.asarray(shape_dirs, dtype=np.float64)
    expr_dirs = np.asarray(expr_dirs, dtype=np.float64)
    if shape_dirs.size == 0:
        shape_dirs = np.zeros((0, n, 3))
    if expr_dirs.size == 0:
        expr_dirs = np.zeros((0, n, 3))
    return BodyModel(
        template_vertices=v,
        faces=np.ascontiguousarray(faces, dtype=np.uint32).reshape(-1, 3),
        shape_dirs=shape_dirs,
        expr_dirs=expr_dirs,
        joint_regressor=sp.csr_matrix(joint_regressor, dtype=np.float64),
        kinematic_parents=np.asarray(parents, dtype=np.int32),
        skin_weights=np.ascontiguousarray(skin_weights, dtype=np.float64),
        joint_names=tuple(str(x) for x in joint_names),
        pose_dirs=None if pose_dirs is None else np.asarray(pose_dirs, dtype=np.float64),
    )


def save_model(model: BodyModel, path) -> None:
    coo = model.joint_regressor.tocoo()
    arrays = dict(
        format_version=np.int64(FORMAT_VERSION),
        template_vertices=model.template_vertices,
        faces=model.faces.astype(np.uint32),
        shape_dirs=model.shape_dirs,
        expr_dirs=model.expr_dirs,
        joint_regressor_row=coo.row.astype(np.int32),
        joint_regressor_col=coo.col.astype(np.int32),
        joint_regressor_val=coo.data.astype(np.float64),
        joint_regressor_shape=np.array(coo.shape, dtype=np.int64),
        parents=model.kinematic_parents.astype(np.int32),
        skin_weights=model.skin_weights,
        joint_names=np.array(model.joint_names, dtype=str),
    )
    if model.pose_dirs is not None:
        arrays["pose_dirs"] = model.pose_dirs
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> BodyModel:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelFormatError(f"cannot parse body model {path}: {exc}") from exc
    with data:
        required = ("template_vertices", "faces", "shape_dirs", "expr_dirs",
                    "joint_regressor_row", "joint_regressor_col", "joint_regressor_val",
                    "joint_regressor_shape", "parents", "skin_weights", "joint_names")
        missing = [k for k in required if k not in data.files]
        if missing:
            raise ModelFormatError(f"{path}: missing arrays {missing}")
        version = int(data["format_version"]) if "format_version" in data.files else FORMAT_VERSION
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        shape = tuple(int(s) for s in data["joint_regressor_shape"])
        regressor = sp.coo_matrix(
            (data["joint_regressor_val"], (data["joint_regressor_row"], data["joint_regressor_col"])),
            shape=shape,
        ).tocsr()
        return make_model(
            data["template_vertices"], data["faces"], data["shape_dirs"], data["expr_dirs"],
            regressor, data["parents"], data["skin_weights"], data["joint_names"].tolist(),
            pose_dirs=data["pose_dirs"] if "pose_dirs" in data.files else None,
        )


def from_smplx_arrays(arrays, num_betas=10, num_expr=10, expr_offset=300,
                      joint_names=None) -> BodyModel:
    """Convert the array set of a SMPL-X release archive into a BodyModel.

    Expects the usual keys ``v_template``, ``f``, ``shapedirs`` (N, 3, C),
    ``J_regressor`` (J, N), ``kintree_table`` (2, J) and ``weights`` (N, J).
    Expression blendshapes are read from ``shapedirs[..., expr_offset:]``.
    Pose correctives (``posedirs``) are carried as the reserved field only.
    """
    shapedirs = np.asarray(arrays["shapedirs"], dtype=np.float64)
    betas_dirs = np.transpose(shapedirs[:, :, :num_betas], (2, 0, 1))
    expr = shapedirs[:, :, expr_offset:expr_offset + num_expr]
    if expr.shape[2] < num_expr:
        raise ModelFormatError(
            f"shapedirs has {shapedirs.shape[2]} channels, cannot take {num_expr} expression "
            f"channels at offset {expr_offset}"
        )
    expr_dirs = np.transpose(expr, (2, 0, 1))
    parents = np.asarray(arrays["kintree_table"])[0].astype(np.int64)
    # SMPL archives mark the root parent with uint32 max
    parents[(parents < 0) | (parents >= len(parents))] = -1
    regressor = arrays["J_regressor"]
    if not sp.issparse(regressor):
        regressor = sp.csr_matrix(np.asarray(regressor, dtype=np.float64))
    j = len(parents)
    if joint_names is None:
        joint_names = SMPLX_JOINT_NAMES[:j] if j <= len(SMPLX_JOINT_NAMES) else None
    if joint_names is None:
        raise ModelFormatError("joint_names required for non-SMPL-X joint counts")
    return make_model(
        arrays["v_template"], arrays["f"], betas_dirs, expr_dirs, regressor, parents,
        arrays["weights"], joint_names,
        pose_dirs=np.asarray(arrays["posedirs"]) if "posedirs" in arrays else None,
    )


def rodrigues(rotvecs) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3)."""
    r = np.asarray(rotvecs, dtype=np.float64)
    shape = r.shape[:-1]
    r = r.reshape(-1, 3)
    theta = np.linalg.norm(r, axis=1)
    k = np.zeros((len(r), 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -r[:, 2], r[:, 1]
    k[:, 1, 0], k[:, 1, 2] = r[:, 2], -r[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -r[:, 1], r[:, 0]
    out = np.broadcast_to(np.eye(3), (len(r), 3, 3)).copy()
    small = theta < 1e-8
    # first-order expansion near zero: R = I + [r]x
    out[small] += k[small]
    big = ~small
    if big.any():
        t = theta[big][:, None, None]
        kn = k[big] / t
        out[big] += np.sin(t) * kn + (1.0 - np.cos(t)) * (kn @ kn)
    return out.reshape(shape + (3, 3))


def _check_shape(model: BodyModel, shape: ShapeParams):
    if shape.betas.shape != (model.num_betas,):
        raise ValueError(f"expected {model.num_betas} betas, got {shape.betas.shape[0]}")
    if shape.psi.shape != (model.num_expr,):
        raise ValueError(f"expected {model.num_expr} expression coefficients, got {shape.psi.shape[0]}")
    if not (np.all(np.isfinite(shape.betas)) and np.all(np.isfinite(shape.psi))):
        raise ValueError("shape parameters must be finite")


def shaped_template(model: BodyModel, shape: ShapeParams) -> np.ndarray:
    _check_shape(model, shape)
    v = model.template_vertices
    if model.num_betas:
        v = v + np.tensordot(shape.betas, model.shape_dirs, axes=1)
    if model.num_expr:
        v = v + np.tensordot(shape.psi, model.expr_dirs, axes=1)
    return v


def rest_joints(model: BodyModel, shape: ShapeParams) -> np.ndarray:
    return model.joint_regressor @ shaped_template(model, shape)


def forward(model: BodyModel, shape: ShapeParams, pose: PoseParams) -> PosedBody:
    if pose.thetas.shape != (model.num_joints, 3):
        raise ValueError(f"expected {model.num_joints} joint rotations, got {pose.thetas.shape[0]}")
    if not (np.all(np.isfinite(pose.thetas)) and np.all(np.isfinite(pose.root_translation))):
        raise ValueError("pose parameters must be finite")
    v_shaped = shaped_template(model, shape)
    joints_rest = model.joint_regressor @ v_shaped
    rots = rodrigues(pose.thetas)
    parents = model.kinematic_parents

    nj = model.num_joints
    world = np.zeros((nj, 4, 4))
    for j in model._order:
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = parents[j]
        if p < 0:
            local[:3, 3] = joints_rest[j]
            world[j] = local
        else:
            local[:3, 3] = joints_rest[j] - joints_rest[p]
            world[j] = world[p] @ local

    posed_joints = world[:, :3, 3].copy()
    # skinning transforms act on rest-space points
    skin = world.copy()
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints_rest)
    blended = np.tensordot(model.skin_weights, skin, axes=1)
    verts = np.einsum("nab,nb->na", blended[:, :3, :3], v_shaped) + blended[:, :3, 3]

    t = pose.root_translation
    return PosedBody(verts + t, posed_joints + t, model.faces, model.joint_names)
