# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled inner loops. Semantics mirror humansynth._fallback exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, fabs

cnp.import_array()

DEF SUBPIXEL = 256
DEF HALF = 128


cdef inline bint _top_left(long long dx, long long dy) nogil:
    return dy < 0 or (dy == 0 and dx > 0)


def raster_triangles(
    const long long[:, ::1] fixed,
    const double[::1] z,
    const long long[:, ::1] faces,
    double[:, ::1] depth,
    int[:, ::1] face_id,
    double[:, :, ::1] bary,
):
    """Z-buffered coverage of screen triangles.

    ``fixed`` holds vertex positions in 1/256 pixel units, ``z`` camera depth.
    Writes nearest depth, winning face index and perspective-correct
    barycentrics in place. Returns the number of fragments that passed the
    depth test.
    """
    cdef Py_ssize_t n_faces = faces.shape[0]
    cdef int height = depth.shape[0]
    cdef int width = depth.shape[1]
    cdef Py_ssize_t f
    cdef long long i0, i1, i2, tmp
    cdef long long x0, y0, x1, y1, x2, y2, area
    cdef long long minx, maxx, miny, maxy, px, py
    cdef long long w0, w1, w2
    cdef long long b0_bias, b1_bias, b2_bias
    cdef int ix, iy, ix0, ix1, iy0, iy1
    cdef double fa, q0, q1, q2, s, zz, z0, z1, z2
    cdef long long written = 0
    cdef bint swapped

    with nogil:
        for f in range(n_faces):
            i0 = faces[f, 0]
            i1 = faces[f, 1]
            i2 = faces[f, 2]
            x0 = fixed[i0, 0]; y0 = fixed[i0, 1]
            x1 = fixed[i1, 0]; y1 = fixed[i1, 1]
            x2 = fixed[i2, 0]; y2 = fixed[i2, 1]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area == 0:
                continue
            swapped = area < 0
            if swapped:
                tmp = i1; i1 = i2; i2 = tmp
                x1 = fixed[i1, 0]; y1 = fixed[i1, 1]
                x2 = fixed[i2, 0]; y2 = fixed[i2, 1]
                area = -area
            z0 = z[i0]; z1 = z[i1]; z2 = z[i2]

            minx = min(x0, min(x1, x2)); maxx = max(x0, max(x1, x2))
            miny = min(y0, min(y1, y2)); maxy = max(y0, max(y1, y2))
            ix0 = <int>max(0.0, ceil((minx - HALF) / <double>SUBPIXEL))
            ix1 = <int>min(width - 1.0, floor((maxx - HALF) / <double>SUBPIXEL))
            iy0 = <int>max(0.0, ceil((miny - HALF) / <double>SUBPIXEL))
            iy1 = <int>min(height - 1.0, floor((maxy - HALF) / <double>SUBPIXEL))
            if ix0 > ix1 or iy0 > iy1:
                continue

            # edges opposite each vertex: v1->v2, v2->v0, v0->v1
            b0_bias = 0 if _top_left(x2 - x1, y2 - y1) else 1
            b1_bias = 0 if _top_left(x0 - x2, y0 - y2) else 1
            b2_bias = 0 if _top_left(x1 - x0, y1 - y0) else 1
            fa = <double>area

            for iy in range(iy0, iy1 + 1):
                py = <long long>iy * SUBPIXEL + HALF
                for ix in range(ix0, ix1 + 1):
                    px = <long long>ix * SUBPIXEL + HALF
                    w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                    if w0 < b0_bias:
                        continue
                    w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                    if w1 < b1_bias:
                        continue
                    w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                    if w2 < b2_bias:
                        continue
                    q0 = (<double>w0 / fa) / z0
                    q1 = (<double>w1 / fa) / z1
                    q2 = (<double>w2 / fa) / z2
                    s = q0 + q1 + q2
                    zz = 1.0 / s
                    if zz < depth[iy, ix]:
                        depth[iy, ix] = zz
                        face_id[iy, ix] = <int>f
                        # barycentrics follow the original corner order
                        bary[iy, ix, 0] = q0 / s
                        if not swapped:
                            bary[iy, ix, 1] = q1 / s
                            bary[iy, ix, 2] = q2 / s
                        else:
                            bary[iy, ix, 1] = q2 / s
                            bary[iy, ix, 2] = q1 / s
                        written += 1
    return written


cdef inline bint _axis_sep(double p0, double p1, double rad) nogil:
    cdef double mn = p0 if p0 < p1 else p1
    cdef double mx = p1 if p0 < p1 else p0
    return mn > rad or mx < -rad


cdef bint _tri_box(const double[:, :, ::1] tris, Py_ssize_t k,
                   double cx, double cy, double cz,
                   double hx, double hy, double hz) nogil:
    cdef double v0x = tris[k, 0, 0] - cx, v0y = tris[k, 0, 1] - cy, v0z = tris[k, 0, 2] - cz
    cdef double v1x = tris[k, 1, 0] - cx, v1y = tris[k, 1, 1] - cy, v1z = tris[k, 1, 2] - cz
    cdef double v2x = tris[k, 2, 0] - cx, v2y = tris[k, 2, 1] - cy, v2z = tris[k, 2, 2] - cz
    cdef double e0x = v1x - v0x, e0y = v1y - v0y, e0z = v1z - v0z
    cdef double e1x = v2x - v1x, e1y = v2y - v1y, e1z = v2z - v1z
    cdef double e2x = v0x - v2x, e2y = v0y - v2y, e2z = v0z - v2z
    cdef double fex, fey, fez, p0, p1, rad
    cdef double nx, ny, nz, vminx, vminy, vminz, vmaxx, vmaxy, vmaxz

    # 9 edge cross-product axes
    fex = fabs(e0x); fey = fabs(e0y); fez = fabs(e0z)
    p0 = e0z * v0y - e0y * v0z; p1 = e0z * v2y - e0y * v2z
    if _axis_sep(p0, p1, fez * hy + fey * hz): return False
    p0 = -e0z * v0x + e0x * v0z; p1 = -e0z * v2x + e0x * v2z
    if _axis_sep(p0, p1, fez * hx + fex * hz): return False
    p0 = e0y * v1x - e0x * v1y; p1 = e0y * v2x - e0x * v2y
    if _axis_sep(p0, p1, fey * hx + fex * hy): return False

    fex = fabs(e1x); fey = fabs(e1y); fez = fabs(e1z)
    p0 = e1z * v0y - e1y * v0z; p1 = e1z * v2y - e1y * v2z
    if _axis_sep(p0, p1, fez * hy + fey * hz): return False
    p0 = -e1z * v0x + e1x * v0z; p1 = -e1z * v2x + e1x * v2z
    if _axis_sep(p0, p1, fez * hx + fex * hz): return False
    p0 = e1y * v0x - e1x * v0y; p1 = e1y * v1x - e1x * v1y
    if _axis_sep(p0, p1, fey * hx + fex * hy): return False

    fex = fabs(e2x); fey = fabs(e2y); fez = fabs(e2z)
    p0 = e2z * v0y - e2y * v0z; p1 = e2z * v1y - e2y * v1z
    if _axis_sep(p0, p1, fez * hy + fey * hz): return False
    p0 = -e2z * v0x + e2x * v0z; p1 = -e2z * v1x + e2x * v1z
    if _axis_sep(p0, p1, fez * hx + fex * hz): return False
    p0 = e2y * v1x - e2x * v1y; p1 = e2y * v2x - e2x * v2y
    if _axis_sep(p0, p1, fey * hx + fex * hy): return False

    # box face normals
    if min(v0x, min(v1x, v2x)) > hx or max(v0x, max(v1x, v2x)) < -hx: return False
    if min(v0y, min(v1y, v2y)) > hy or max(v0y, max(v1y, v2y)) < -hy: return False
    if min(v0z, min(v1z, v2z)) > hz or max(v0z, max(v1z, v2z)) < -hz: return False

    # triangle plane
    nx = e0y * e1z - e0z * e1y
    ny = e0z * e1x - e0x * e1z
    nz = e0x * e1y - e0y * e1x
    if nx > 0.0:
        vminx = -hx - v0x; vmaxx = hx - v0x
    else:
        vminx = hx - v0x; vmaxx = -hx - v0x
    if ny > 0.0:
        vminy = -hy - v0y; vmaxy = hy - v0y
    else:
        vminy = hy - v0y; vmaxy = -hy - v0y
    if nz > 0.0:
        vminz = -hz - v0z; vmaxz = hz - v0z
    else:
        vminz = hz - v0z; vmaxz = -hz - v0z
    if nx * vminx + ny * vminy + nz * vminz > 0.0:
        return False
    return nx * vmaxx + ny * vmaxy + nz * vmaxz >= 0.0


def tri_box_overlap(const double[:, :, ::1] tris, center, half):
    """Boolean mask of triangles (M,3,3) intersecting the closed box."""
    cdef Py_ssize_t m = tris.shape[0]
    cdef Py_ssize_t k
    cdef double cx = center[0], cy = center[1], cz = center[2]
    cdef double hx = half[0], hy = half[1], hz = half[2]
    out = np.zeros(m, dtype=np.bool_)
    cdef cnp.npy_bool[::1] res = out
    with nogil:
        for k in range(m):
            res[k] = _tri_box(tris, k, cx, cy, cz, hx, hy, hz)
    return out
