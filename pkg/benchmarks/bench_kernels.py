"""Timing comparison of the jit and plain-numpy kernel backends.

The backend is fixed at import time by SCENE_CLUSTER_NUMBA, so this script
re-launches itself once per backend and prints a side-by-side table.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads():
    rng = np.random.default_rng(0)

    gray = rng.uniform(0.0, 255.0, (512, 512))
    # checkerboard-ish structure so the segment test takes both branches
    tile = np.kron(
        rng.choice([20.0, 90.0, 170.0, 240.0], (64, 64)), np.ones((8, 8))
    )
    gray = 0.5 * gray + 0.5 * tile

    mask = np.zeros((512, 512), bool)
    for _ in range(40):
        y, x = rng.integers(20, 490, 2)
        r = int(rng.integers(4, 18))
        yy, xx = np.ogrid[-r : r + 1, -r : r + 1]
        disc = yy * yy + xx * xx <= r * r
        mask[y - r : y + r + 1, x - r : x + r + 1] |= disc

    def sim(n):
        pts = rng.normal(size=(n, 8))
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        s = -d
        med = np.median(s[~np.eye(n, dtype=bool)])
        np.fill_diagonal(s, med)
        return s

    return gray, mask, sim(60), sim(200)


def run_worker(repeats: int) -> dict:
    from scene_cluster import kernels
    from scene_cluster._accel import USE_NUMBA

    gray, mask, s60, s200 = _workloads()

    cases = {
        "corner_scores 512x512": lambda: kernels.corner_scores(gray, 20.0),
        "fast9 512x512": lambda: kernels.fast9(gray, 20.0),
        "label8 512x512": lambda: kernels.label8(mask),
        "ap_messages n=60": lambda: kernels.ap_messages(s60, 0.5, 200, 50),
        "ap_messages n=200": lambda: kernels.ap_messages(s200, 0.5, 200, 50),
    }

    out = {"backend": "numba" if USE_NUMBA else "numpy", "times": {}}
    for name, fn in cases.items():
        fn()  # warm (jit compile / page in)
        best = min(_timed(fn) for _ in range(repeats))
        out["times"][name] = best
    return out


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(run_worker(args.repeats)))
        return 0

    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, SCENE_CLUSTER_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeats", str(args.repeats)],
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            return proc.returncode
        payload = json.loads(proc.stdout.strip().splitlines()[-1])
        results[payload["backend"]] = payload["times"]

    if "numba" not in results:
        print("numba backend unavailable; numpy timings only")
        for name, t in results["numpy"].items():
            print(f"{name:24s} {t * 1e3:9.2f} ms")
        return 0

    width = max(len(k) for k in results["numpy"])
    print(f"{'kernel':{width}s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name in results["numpy"]:
        tn = results["numpy"][name]
        tj = results["numba"][name]
        print(
            f"{name:{width}s} {tn * 1e3:8.2f}ms {tj * 1e3:8.2f}ms"
            f" {tn / tj:7.1f}x"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
