"""Pose/shape and surface-normal evaluation metrics.

Inputs are in meters; joint and vertex errors are reported in millimeters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import BodyModel, ShapeParams, forward

M_TO_MM = 1000.0


@dataclass
class JointSet:
    points: np.ndarray
    pelvis_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("joint positions must be finite")
        if not 0 <= self.pelvis_index < len(self.points):
            raise ValueError(f"pelvis index {self.pelvis_index} out of range")

    def centered(self) -> np.ndarray:
        return self.points - self.points[self.pelvis_index]


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def _pair(pred, gt):
    p = pred.points if isinstance(pred, JointSet) else np.asarray(pred, dtype=np.float64)
    g = gt.points if isinstance(gt, JointSet) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"point counts differ: {p.shape} vs {g.shape}")
    return p, g


def mpjpe(pred: JointSet, gt: JointSet) -> float:
    _pair(pred, gt)
    d = pred.centered() - gt.centered()
    return float(np.linalg.norm(d, axis=1).mean() * M_TO_MM)


def procrustes_align(pred, gt) -> SimilarityTransform:
    """Least-squares s, R, t with gt ~ s * R @ pred + t, reflections excluded."""
    p, g = _pair(pred, gt)
    if len(p) < 3:
        raise ValueError("need at least 3 points for a similarity alignment")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    p0, g0 = p - mu_p, g - mu_g
    var_p = float((p0 ** 2).sum())
    cov = g0.T @ p0
    u, sv, vt = np.linalg.svd(cov)
    if var_p < 1e-24 or sv[1] < 1e-12 * max(sv[0], 1e-300):
        raise ValueError("degenerate point configuration (collinear or coincident)")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    scale = float((sv * d).sum() / var_p)
    return SimilarityTransform(scale, rot, mu_g - scale * rot @ mu_p)


def pa_mpjpe(pred: JointSet, gt: JointSet) -> float:
    p, g = _pair(pred, gt)
    aligned = procrustes_align(p, g).apply(p)
    return float(np.linalg.norm(aligned - g, axis=1).mean() * M_TO_MM)


def pve(pred_vertices, gt_vertices, pred_pelvis, gt_pelvis) -> float:
    p, g = _pair(pred_vertices, gt_vertices)
    d = (p - np.asarray(pred_pelvis)) - (g - np.asarray(gt_pelvis))
    return float(np.linalg.norm(d, axis=1).mean() * M_TO_MM)


def scale_corrected_error(pred_vertices, gt_vertices) -> float:
    """Mean distance after centering both sets and scaling pred by the optimal factor."""
    p, g = _pair(pred_vertices, gt_vertices)
    p0, g0 = p - p.mean(axis=0), g - g.mean(axis=0)
    denom = float((p0 * p0).sum())
    if denom < 1e-24:
        raise ValueError("predicted vertices have zero spread")
    s = float((p0 * g0).sum()) / denom
    return float(np.linalg.norm(s * p0 - g0, axis=1).mean() * M_TO_MM)


def pve_t_sc(pred_shape: ShapeParams, gt_shape: ShapeParams, model: BodyModel) -> float:
    zero = model.zero_pose()
    pv = forward(model, pred_shape, zero).vertices
    gv = forward(model, gt_shape, zero).vertices
    return scale_corrected_error(pv, gv)


def mask_miou(pairs) -> float:
    """Mean IoU over (pred_mask, gt_mask) pairs."""
    from .denoise_filter import iou
    values = [iou(p, g) for p, g in pairs]
    if not values:
        raise ValueError("no mask pairs")
    return float(np.mean(values))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if len(v) == 0:
        raise ValueError("median of an empty set")
    return float(v[(len(v) - 1) // 2])


def normal_angles(pred, gt, valid) -> np.ndarray:
    """Per-pixel angle in degrees between normals over the valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or pred.shape[:-1] != valid.shape:
        raise ValueError("normal maps and valid mask must share a size")
    if not valid.any():
        raise ValueError("valid mask is empty")
    p, g = pred[valid], gt[valid]
    if np.any(np.linalg.norm(p, axis=1) == 0) or np.any(np.linalg.norm(g, axis=1) == 0):
        raise ValueError("zero-length normal inside the valid mask")
    # atan2 stays accurate near 0 and 180 degrees where acos of the dot loses digits
    cross = np.linalg.norm(np.cross(p, g), axis=1)
    dot = (p * g).sum(axis=1)
    return np.degrees(np.arctan2(cross, dot))


def normal_angular_error(pred, gt, valid):
    """(mean, median, rms) angle in degrees between unit normals over valid pixels.

    Even counts take the lower of the two middle values as the median.
    """
    ang = normal_angles(pred, gt, valid)
    return float(ang.mean()), lower_median(ang), float(np.sqrt((ang ** 2).mean()))


def keypoint_error_px(pred_px, gt_px, visible=None) -> float:
    """Mean 2D distance in pixels over visible keypoints."""
    p, g = np.asarray(pred_px, dtype=np.float64), np.asarray(gt_px, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError("keypoint arrays differ in shape")
    vis = np.ones(len(p), dtype=bool) if visible is None else np.asarray(visible, dtype=bool)
    if not vis.any():
        raise ValueError("no visible keypoints")
    return float(np.linalg.norm(p[vis] - g[vis], axis=1).mean())
