"""Compiled ray-march kernel vs the numpy fallback on one cone-beam view.

    python3 benchmarks/bench_projector.py [--size 128] [--repeats 5]
"""

import argparse
import time

import numpy as np

from mr2xray import geometry, phantom, projector


def time_backend(vol, geom, pose, backend, repeats):
    projector.project_view(vol, geom, pose, backend=backend)  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        img = projector.project_view(vol, geom, pose, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, img


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=128, help="detector rows/cols")
    ap.add_argument("--volume", type=int, default=64, help="phantom voxels per axis")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    spacing = 192.0 / args.volume
    ct, _ = phantom.generate_head_phantom(
        phantom.HeadPhantomParams(dims=(args.volume,) * 3, spacing_mm=(spacing,) * 3)
    )
    geom = geometry.ConeBeamGeometry(det_rows=args.size, det_cols=args.size, det_spacing_mm=307.2 / args.size)
    pose = geometry.ViewPose(30.0, 10.0)

    results = {}
    for backend in projector.available_backends():
        results[backend] = time_backend(ct, geom, pose, backend, args.repeats)
        print(f"{backend:>9}: {results[backend][0] * 1e3:8.1f} ms/view  ({1.0 / results[backend][0]:.2f} views/s)")
    if "compiled" in results:
        a, b = results["compiled"][1].data, results["python"][1].data
        print(f"speedup: {results['python'][0] / results['compiled'][0]:.1f}x, "
              f"max |diff| = {np.abs(a - b).max():.3g}")
    else:
        print("compiled kernel not built; only the numpy fallback is available")


if __name__ == "__main__":
    main()
