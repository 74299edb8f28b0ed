"""Backend selection for the hot loops.

The Cython extension is used when it was built; otherwise (or when
``HUMANSYNTH_PURE=1`` is set) the numpy fallback is used. Both backends
expose ``raster_triangles`` and ``tri_box_overlap`` with identical results.
"""
import os

from . import _fallback

BACKEND = "python"

if not os.environ.get("HUMANSYNTH_PURE"):
    try:
        from ._kernels import raster_triangles, tri_box_overlap

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    raster_triangles = _fallback.raster_triangles
    tri_box_overlap = _fallback.tri_box_overlap

__all__ = ["BACKEND", "raster_triangles", "tri_box_overlap"]
