"""Label denoising: drop generated images whose segmented human disagrees
with the rendered ground-truth silhouette."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion

from .services import SegmentRequest

DEFAULT_THRESHOLD = 0.8
EROSION_RADIUS = 2


@dataclass
class FilterVerdict:
    iou: float
    kept: bool
    point_used: tuple | None
    threshold: float
    error: str | None = None
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iou": self.iou, "kept": self.kept,
            "point_used": None if self.point_used is None else [int(v) for v in self.point_used],
            "threshold": self.threshold, "error": self.error, "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d) -> "FilterVerdict":
        point = d.get("point_used")
        return cls(float(d["iou"]), bool(d["kept"]), None if point is None else tuple(point),
                   float(d["threshold"]), d.get("error"), float(d.get("latency_ms", 0.0)))


def iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def keep(iou_value: float, threshold: float = DEFAULT_THRESHOLD) -> bool:
    # samples are dropped only when strictly below the threshold
    return iou_value >= threshold


def sample_foreground_point(mask, rng, erosion_radius=EROSION_RADIUS):
    """Uniform (x, y) pixel from the eroded mask, or from the raw mask when erosion empties it."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask has no foreground pixels")
    pool = mask
    if erosion_radius > 0:
        size = 2 * erosion_radius + 1
        eroded = binary_erosion(mask, structure=np.ones((size, size), dtype=bool), border_value=0)
        if eroded.any():
            pool = eroded
    flat = np.flatnonzero(pool)
    k = flat[int(rng.integers(0, len(flat)))]
    y, x = divmod(int(k), mask.shape[1])
    return x, y


def filter_sample(gt_mask, image: bytes, seg_client, threshold=DEFAULT_THRESHOLD, rng=None,
                  erosion_radius=EROSION_RADIUS) -> FilterVerdict:
    """Segment the generated image from one foreground point and compare masks.

    Service failures never raise: they yield kept=False with the error text.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    gt_mask = np.asarray(gt_mask, dtype=bool)
    rng = rng if rng is not None else np.random.default_rng()
    point = sample_foreground_point(gt_mask, rng, erosion_radius)
    start = time.perf_counter()
    try:
        pred = seg_client.segment(SegmentRequest(image, point))
        value = iou(gt_mask, pred)
    except Exception as exc:
        latency = (time.perf_counter() - start) * 1e3
        return FilterVerdict(0.0, False, point, threshold, f"{type(exc).__name__}: {exc}", latency)
    latency = (time.perf_counter() - start) * 1e3
    return FilterVerdict(value, keep(value, threshold), point, threshold, None, latency)
