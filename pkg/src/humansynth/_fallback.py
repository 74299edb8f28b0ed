"""Pure numpy versions of the compiled kernels.

Same signatures and arithmetic order as ``_kernels.pyx`` so that both
backends produce bit-identical framebuffers.
"""
import numpy as np

SUBPIXEL = 256
HALF = 128


def _top_left(dx, dy):
    return dy < 0 or (dy == 0 and dx > 0)


def raster_triangles(fixed, z, faces, depth, face_id, bary):
    height, width = depth.shape
    written = 0
    for f in range(faces.shape[0]):
        i0, i1, i2 = (int(v) for v in faces[f])
        x0, y0 = int(fixed[i0, 0]), int(fixed[i0, 1])
        x1, y1 = int(fixed[i1, 0]), int(fixed[i1, 1])
        x2, y2 = int(fixed[i2, 0]), int(fixed[i2, 1])
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0:
            continue
        swapped = area < 0
        if swapped:
            i1, i2 = i2, i1
            x1, y1, x2, y2 = x2, y2, x1, y1
            area = -area
        z0, z1, z2 = float(z[i0]), float(z[i1]), float(z[i2])

        ix0 = int(max(0.0, np.ceil((min(x0, x1, x2) - HALF) / SUBPIXEL)))
        ix1 = int(min(width - 1.0, np.floor((max(x0, x1, x2) - HALF) / SUBPIXEL)))
        iy0 = int(max(0.0, np.ceil((min(y0, y1, y2) - HALF) / SUBPIXEL)))
        iy1 = int(min(height - 1.0, np.floor((max(y0, y1, y2) - HALF) / SUBPIXEL)))
        if ix0 > ix1 or iy0 > iy1:
            continue

        b0 = 0 if _top_left(x2 - x1, y2 - y1) else 1
        b1 = 0 if _top_left(x0 - x2, y0 - y2) else 1
        b2 = 0 if _top_left(x1 - x0, y1 - y0) else 1

        py = (np.arange(iy0, iy1 + 1, dtype=np.int64) * SUBPIXEL + HALF)[:, None]
        px = (np.arange(ix0, ix1 + 1, dtype=np.int64) * SUBPIXEL + HALF)[None, :]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (w0 >= b0) & (w1 >= b1) & (w2 >= b2)
        if not inside.any():
            continue
        rows, cols = np.nonzero(inside)
        w0, w1, w2 = w0[rows, cols], w1[rows, cols], w2[rows, cols]
        fa = float(area)
        q0 = (w0.astype(np.float64) / fa) / z0
        q1 = (w1.astype(np.float64) / fa) / z1
        q2 = (w2.astype(np.float64) / fa) / z2
        s = q0 + q1 + q2
        zz = 1.0 / s
        ry, rx = rows + iy0, cols + ix0
        win = zz < depth[ry, rx]
        if not win.any():
            continue
        ry, rx = ry[win], rx[win]
        s = s[win]
        depth[ry, rx] = zz[win]
        face_id[ry, rx] = f
        bary[ry, rx, 0] = q0[win] / s
        if swapped:
            bary[ry, rx, 1] = q2[win] / s
            bary[ry, rx, 2] = q1[win] / s
        else:
            bary[ry, rx, 1] = q1[win] / s
            bary[ry, rx, 2] = q2[win] / s
        written += int(win.sum())
    return written


def _axis_sep(p0, p1, rad):
    return (np.minimum(p0, p1) > rad) | (np.maximum(p0, p1) < -rad)


def tri_box_overlap(tris, center, half):
    tris = np.asarray(tris, dtype=np.float64)
    if tris.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    cx, cy, cz = (float(c) for c in center)
    hx, hy, hz = (float(h) for h in half)
    v0x, v0y, v0z = tris[:, 0, 0] - cx, tris[:, 0, 1] - cy, tris[:, 0, 2] - cz
    v1x, v1y, v1z = tris[:, 1, 0] - cx, tris[:, 1, 1] - cy, tris[:, 1, 2] - cz
    v2x, v2y, v2z = tris[:, 2, 0] - cx, tris[:, 2, 1] - cy, tris[:, 2, 2] - cz
    e0x, e0y, e0z = v1x - v0x, v1y - v0y, v1z - v0z
    e1x, e1y, e1z = v2x - v1x, v2y - v1y, v2z - v1z
    e2x, e2y, e2z = v0x - v2x, v0y - v2y, v0z - v2z

    sep = np.zeros(tris.shape[0], dtype=bool)

    fex, fey, fez = np.abs(e0x), np.abs(e0y), np.abs(e0z)
    sep |= _axis_sep(e0z * v0y - e0y * v0z, e0z * v2y - e0y * v2z, fez * hy + fey * hz)
    sep |= _axis_sep(-e0z * v0x + e0x * v0z, -e0z * v2x + e0x * v2z, fez * hx + fex * hz)
    sep |= _axis_sep(e0y * v1x - e0x * v1y, e0y * v2x - e0x * v2y, fey * hx + fex * hy)

    fex, fey, fez = np.abs(e1x), np.abs(e1y), np.abs(e1z)
    sep |= _axis_sep(e1z * v0y - e1y * v0z, e1z * v2y - e1y * v2z, fez * hy + fey * hz)
    sep |= _axis_sep(-e1z * v0x + e1x * v0z, -e1z * v2x + e1x * v2z, fez * hx + fex * hz)
    sep |= _axis_sep(e1y * v0x - e1x * v0y, e1y * v1x - e1x * v1y, fey * hx + fex * hy)

    fex, fey, fez = np.abs(e2x), np.abs(e2y), np.abs(e2z)
    sep |= _axis_sep(e2z * v0y - e2y * v0z, e2z * v1y - e2y * v1z, fez * hy + fey * hz)
    sep |= _axis_sep(-e2z * v0x + e2x * v0z, -e2z * v1x + e2x * v1z, fez * hx + fex * hz)
    sep |= _axis_sep(e2y * v1x - e2x * v1y, e2y * v2x - e2x * v2y, fey * hx + fex * hy)

    for a, b, c, h in ((v0x, v1x, v2x, hx), (v0y, v1y, v2y, hy), (v0z, v1z, v2z, hz)):
        sep |= (np.minimum(np.minimum(a, b), c) > h) | (np.maximum(np.maximum(a, b), c) < -h)

    nx = e0y * e1z - e0z * e1y
    ny = e0z * e1x - e0x * e1z
    nz = e0x * e1y - e0y * e1x
    vminx = np.where(nx > 0.0, -hx - v0x, hx - v0x)
    vmaxx = np.where(nx > 0.0, hx - v0x, -hx - v0x)
    vminy = np.where(ny > 0.0, -hy - v0y, hy - v0y)
    vmaxy = np.where(ny > 0.0, hy - v0y, -hy - v0y)
    vminz = np.where(nz > 0.0, -hz - v0z, hz - v0z)
    vmaxz = np.where(nz > 0.0, hz - v0z, -hz - v0z)
    sep |= nx * vminx + ny * vminy + nz * vminz > 0.0
    sep |= ~(nx * vmaxx + ny * vmaxy + nz * vmaxz >= 0.0)
    return ~sep
