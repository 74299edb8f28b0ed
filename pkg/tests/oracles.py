"""Independent reference implementations used by the tests.

These are deliberately slow and written from the geometric definitions,
not from the library code paths they check.
"""
import itertools
import numpy as np

# --- coverage -----------------------------------------------------------------

def triangle_coverage(tris_px, width, height):
    """Yield (triangle index, rows, cols) of the pixel centers each screen
    triangle covers under the top-left tie rule.

    ``tris_px`` are (T, 3, 2) vertex positions that lie exactly on the
    1/256-pixel grid. Work happens in exact integers at 1/512 px so that
    pixel centers are integral. A center exactly on an edge counts when the
    edge is a left edge (interior on its +x side) or a top edge (horizontal
    with the interior below it, y pointing down).
    """
    for k, tri in enumerate(np.asarray(tris_px, dtype=np.float64)):
        v = [(int(round(x * 512)), int(round(y * 512))) for x, y in tri]
        assert all(a / 512 == x for (a, _), x in zip(v, tri[:, 0])), "vertex off the 1/256 grid"
        (ax, ay), (bx, by), (cx, cy) = v
        if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) == 0:
            continue
        x_lo = max(0, (min(ax, bx, cx) - 256) // 512)
        x_hi = min(width - 1, (max(ax, bx, cx) - 256) // 512 + 1)
        y_lo = max(0, (min(ay, by, cy) - 256) // 512)
        y_hi = min(height - 1, (max(ay, by, cy) - 256) // 512 + 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        px = (np.arange(x_lo, x_hi + 1, dtype=np.int64) * 512 + 256)[None, :]
        py = (np.arange(y_lo, y_hi + 1, dtype=np.int64) * 512 + 256)[:, None]
        inside = np.ones((py.shape[0], px.shape[1]), dtype=bool)
        for (p, q, r) in ((v[0], v[1], v[2]), (v[1], v[2], v[0]), (v[2], v[0], v[1])):
            e = (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
            side = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            strict = e * np.sign(side) > 0
            if q[1] == p[1]:
                includes_edge = r[1] > p[1]                  # top edge
            else:
                includes_edge = side * (p[1] - q[1]) > 0     # interior toward +x
            inside &= strict | ((e == 0) & includes_edge)
        rows, cols = np.nonzero(inside)
        yield k, rows + y_lo, cols + x_lo


def coverage_oracle(tris_px, width, height):
    """(union mask, per-pixel cover count) of :func:`triangle_coverage`."""
    count = np.zeros((height, width), dtype=np.int64)
    for _, rows, cols in triangle_coverage(tris_px, width, height):
        count[rows, cols] += 1
    return count > 0, count


# --- triangle / box -----------------------------------------------------------

def sat_overlap(tri, lo, hi):
    """Closed box vs triangle overlap from the separating axis theorem with all
    13 candidate axes (3 box normals, 1 triangle normal, 9 edge cross products)."""
    tri = np.asarray(tri, dtype=np.float64)
    center = (np.asarray(lo) + np.asarray(hi)) / 2.0
    half = (np.asarray(hi) - np.asarray(lo)) / 2.0
    v = tri - center
    edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]]
    axes = [np.eye(3)[k] for k in range(3)]
    axes.append(np.cross(edges[0], edges[1]))
    axes += [np.cross(e, np.eye(3)[k]) for e, k in itertools.product(edges, range(3))]
    for a in axes:
        if not np.any(a):
            continue
        p = v @ a
        r = float(np.abs(a) @ half)
        if p.min() > r or p.max() < -r:
            return False
    return True


def sat_overlap_many(tri, lo, hi):
    """Vectorized ``sat_overlap`` of one triangle against K boxes (K, 3)."""
    tri = np.asarray(tri, dtype=np.float64)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    v = tri[None, :, :] - center[:, None, :]                 # (K, 3, 3)
    e = tri[[1, 2, 0]] - tri                                  # edges, independent of the box
    axes = [np.eye(3)[k] for k in range(3)]
    axes.append(np.cross(e[0], e[1]))
    axes += [np.cross(e[i], np.eye(3)[k]) for i, k in itertools.product(range(3), range(3))]
    hit = np.ones(len(lo), dtype=bool)
    for a in axes:
        if not np.any(a):
            continue
        p = v @ a
        r = half @ np.abs(a)
        hit &= ~((p.min(axis=1) > r) | (p.max(axis=1) < -r))
    return hit


def exhaustive_leaves(tris, origin, leaf, depth):
    """Every leaf cell of a 2^depth grid whose closed box meets a triangle,
    found by testing each triangle against every cell of the grid."""
    n = 2 ** depth
    idx = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    lo = origin + leaf * idx
    hi = lo + leaf
    out = set()
    for t in np.asarray(tris, dtype=np.float64):
        out.update(map(tuple, idx[sat_overlap_many(t, lo, hi)].tolist()))
    return out


# --- distances ----------------------------------------------------------------

def brute_chamfer(a, b):
    """Mean over a of the distance to the nearest point of b, O(n*m)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    best = np.empty(len(a))
    for start in range(0, len(a), 256):
        d = np.sqrt(((a[start:start + 256, None, :] - b[None, :, :]) ** 2).sum(axis=2))
        best[start:start + 256] = d.min(axis=1)
    return float(best.mean())


def brute_min_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    best = np.inf
    for start in range(0, len(a), 256):
        d = np.sqrt(((a[start:start + 256, None, :] - b[None, :, :]) ** 2).sum(axis=2))
        best = min(best, float(d.min()))
    return best


# --- masks --------------------------------------------------------------------

def pixel_iou(a, b):
    inter = union = 0
    for x, y in zip(np.asarray(a, dtype=bool).ravel().tolist(), np.asarray(b, dtype=bool).ravel().tolist()):
        inter += x and y
        union += x or y
    return 1.0 if union == 0 else inter / union


def square_erosion(mask, r):
    """Pixel p survives iff the (2r+1)^2 window around it lies inside the mask
    (outside the image counts as background)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if y - r < 0 or x - r < 0 or y + r >= h or x + r >= w:
                continue
            out[y, x] = mask[y - r:y + r + 1, x - r:x + r + 1].all()
    return out


# --- alignment ----------------------------------------------------------------

def similarity_via_quaternion(p, g):
    """Least-squares similarity (s, R, t) with g ~ s R p + t using Horn's
    quaternion method, an eigen-decomposition route independent of the
    cross-covariance SVD."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    mp, mg = p.mean(axis=0), g.mean(axis=0)
    a, b = p - mp, g - mg
    S = a.T @ b
    sxx, sxy, sxz = S[0]
    syx, syy, syz = S[1]
    szx, szy, szz = S[2]
    N = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    vals, vecs = np.linalg.eigh(N)
    q0, qx, qy, qz = vecs[:, np.argmax(vals)]
    R = np.array([
        [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
    ])
    s = float(np.sum(b * (a @ R.T)) / np.sum(a * a))
    return s, R, mg - s * R @ mp
