"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--size 768] [--triangles 2000] [--repeat 3]

Both backends get identical inputs; the script also checks that their
outputs are bit-identical before reporting timings.
"""
import argparse
import time

import numpy as np

from humansynth import _fallback

try:
    from humansynth import _kernels
except ImportError:
    _kernels = None


def raster_inputs(rng, size, n):
    center = rng.uniform(0, size, size=(n, 1, 2))
    spread = rng.choice([4.0, 16.0, 64.0], size=(n, 1, 1))
    px = (center + rng.uniform(-1, 1, size=(n, 3, 2)) * spread).reshape(-1, 2)
    fixed = np.floor(px * 256 + 0.5).astype(np.int64)
    z = rng.uniform(1.0, 5.0, size=3 * n)
    faces = np.arange(3 * n, dtype=np.int64).reshape(-1, 3)
    return fixed, z, faces


def run_raster(fn, size, fixed, z, faces):
    depth = np.full((size, size), np.inf)
    fid = np.full((size, size), -1, dtype=np.int32)
    bary = np.zeros((size, size, 3))
    fn(fixed, z, faces, depth, fid, bary)
    return depth, fid, bary


def run_boxes(fn, tris, boxes):
    return [np.asarray(fn(tris, c, h)) for c, h in boxes]


def best_of(repeat, fn, *args):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=768)
    ap.add_argument("--triangles", type=int, default=2000)
    ap.add_argument("--boxes", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _kernels is None:
        print("compiled kernels are not built; only the fallback can run")
    rng = np.random.default_rng(args.seed)
    fixed, z, faces = raster_inputs(rng, args.size, args.triangles)
    tris = np.ascontiguousarray(rng.uniform(-1, 1, size=(args.triangles, 3, 3)))
    boxes = [(rng.uniform(-1, 1, 3), rng.uniform(0.02, 0.3, 3)) for _ in range(args.boxes)]

    backends = [("python", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in backends:
        t_r, out_r = best_of(args.repeat, run_raster, mod.raster_triangles, args.size, fixed, z, faces)
        t_b, out_b = best_of(args.repeat, run_boxes, mod.tri_box_overlap, tris, boxes)
        results[name] = (t_r, t_b, out_r, out_b)

    print(f"{'backend':8s} {'raster (s)':>11s} {'tri/box (s)':>12s}")
    for name, (t_r, t_b, _, _) in results.items():
        print(f"{name:8s} {t_r:11.4f} {t_b:12.4f}")
    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        same = all(np.array_equal(a, b) for a, b in zip(py[2], cy[2]))
        same = same and all(np.array_equal(a, b) for a, b in zip(py[3], cy[3]))
        print(f"speedup  {py[0] / cy[0]:10.1f}x {py[1] / cy[1]:11.1f}x")
        print("outputs identical" if same else "OUTPUTS DIFFER")
        return 0 if same else 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
