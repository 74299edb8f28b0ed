"""Manifest-level evaluation: pair prediction and ground-truth records by
sample id and aggregate the metric suite."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import metrics
from .body_model import BodyModel, forward
from .dataset import iter_records, read_header
from .rasterizer import decode_normal_image, read_mask_png, read_normal_png

# row order of the printed table
ROWS = (
    ("pa_mpjpe", "PA-MPJPE", "mm"),
    ("mpjpe", "MPJPE", "mm"),
    ("pve", "PVE", "mm"),
    ("pve_t_sc", "PVE-T-SC", "mm"),
    ("miou", "mIoU", ""),
    ("normal_mean", "Normal mean", "deg"),
    ("normal_median", "Normal median", "deg"),
    ("normal_rms", "Normal RMS", "deg"),
)


def _camera_vertices(model, rec):
    posed = forward(model, rec.shape, rec.pose)
    pelvis = posed.joints[model.joint_index("pelvis")]
    if rec.extrinsics is None:
        return posed.vertices, pelvis
    return rec.extrinsics.world_to_camera(posed.vertices), rec.extrinsics.world_to_camera(pelvis)


def evaluate_manifests(pred_path, gt_path, model: BodyModel, joint_map=None) -> dict:
    """Mean of each metric over the samples present in both manifests.

    ``joint_map`` lists, for each gt joint, the pred joint index; the default
    is identity when both manifests share joint names.
    """
    pred_root, gt_root = Path(pred_path).parent, Path(gt_path).parent
    gh, ph = read_header(gt_path), read_header(pred_path)
    if joint_map is None:
        if ph.joint_names and gh.joint_names and ph.joint_names != gh.joint_names:
            raise ValueError("joint orders differ; pass a joint map")
    pelvis = gh.joint_names.index("pelvis") if "pelvis" in gh.joint_names else 0

    preds = {r.sample_id: r for r in iter_records(pred_path)}
    sums = {k: [] for k, _, _ in ROWS}
    normal_angles = []
    mask_pairs = 0
    for gt in iter_records(gt_path):
        pr = preds.get(gt.sample_id)
        if pr is None:
            continue
        if gt.joints3d is not None and pr.joints3d is not None:
            pj = pr.joints3d if joint_map is None else pr.joints3d[np.asarray(joint_map)]
            a, b = metrics.JointSet(pj, pelvis), metrics.JointSet(gt.joints3d, pelvis)
            sums["mpjpe"].append(metrics.mpjpe(a, b))
            sums["pa_mpjpe"].append(metrics.pa_mpjpe(a, b))
        if gt.shape is not None and pr.shape is not None and gt.pose is not None and pr.pose is not None:
            pv, pp = _camera_vertices(model, pr)
            gv, gp = _camera_vertices(model, gt)
            sums["pve"].append(metrics.pve(pv, gv, pp, gp))
            sums["pve_t_sc"].append(metrics.pve_t_sc(pr.shape, gt.shape, model))
        if gt.mask_path and pr.mask_path:
            pm = read_mask_png(pred_root / pr.mask_path)
            gm = read_mask_png(gt_root / gt.mask_path)
            sums["miou"].append(metrics.mask_miou([(pm, gm)]))
            mask_pairs += 1
        if gt.normal_path and pr.normal_path:
            pn, pf = decode_normal_image(read_normal_png(pred_root / pr.normal_path))
            gn, gf = decode_normal_image(read_normal_png(gt_root / gt.normal_path))
            valid = pf & gf
            if valid.any():
                normal_angles.append(metrics.normal_angles(pn, gn, valid))
    out = {k: (float(np.mean(v)) if v else None) for k, v in sums.items()}
    if normal_angles:
        # pixel-level aggregation over the whole set
        ang = np.concatenate(normal_angles)
        out["normal_mean"] = float(ang.mean())
        out["normal_median"] = metrics.lower_median(ang)
        out["normal_rms"] = float(np.sqrt((ang ** 2).mean()))
    out["samples"] = len(sums["mpjpe"]) or len(sums["pve"]) or mask_pairs
    return out


def format_table(result: dict) -> str:
    lines = [f"{'metric':<16}{'value':>12}  unit"]
    for key, label, unit in ROWS:
        v = result.get(key)
        if v is None:
            continue
        lines.append(f"{label:<16}{v:>12.4f}  {unit}")
    lines.append(f"{'samples':<16}{result.get('samples', 0):>12d}")
    return "\n".join(lines)
