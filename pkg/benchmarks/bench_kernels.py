"""Time the compiled and numpy kernels on identical inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Kernel timings run in process against both modules; the end-to-end solve of
a synthetic scene runs once per backend in a subprocess so that the backend
is selected at import exactly as in normal use.
"""

from __future__ import annotations

import argparse
import math
import os
import subprocess
import sys
import timeit

import numpy as np

from votri import geometry
from votri._backend import available_backends
from votri.geometry import CameraIntrinsics, CameraTable, Pose
from votri.voting import SolveConfig

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)

END_TO_END = """
import time
from votri import synth, pipeline
from votri.clustering import ClusterConfig
from votri.voting import SolveConfig
from votri._backend import BACKEND
scene = synth.SceneSpec(n_objects=35, area=(140.0, 140.0), rng_seed=1)
det = synth.DetectorSpec(recall=0.85, pixel_sigma=2.5, fp_per_image=0.3, fp_cluster_prob=0.3)
corpus, _ = synth.generate(scene, det)
t0 = time.perf_counter()
report = pipeline.run(corpus, SolveConfig(), ClusterConfig())
print(BACKEND, time.perf_counter() - t0, len(report.objects))
"""


def _table(rng, n):
    poses = []
    for _ in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        c = d * rng.uniform(8, 25)
        fwd = -c / np.linalg.norm(c)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        poses.append((Pose.from_matrix(np.column_stack([right, np.cross(fwd, right), fwd]), c), INTR))
    return CameraTable(poses)


def _inputs(seed=0, n_cams=8, n=2000):
    rng = np.random.default_rng(seed)
    table = _table(rng, n_cams)
    pts = rng.normal(scale=2.0, size=(n, 3))
    ia = rng.integers(0, n_cams, size=n).astype(np.int64)
    ib = ((ia + rng.integers(1, n_cams, size=n)) % n_cams).astype(np.int64)
    py = available_backends()["python"]
    uv_a = np.nan_to_num(py.project_points(pts, ia, *table.arrays)[0]) + rng.normal(size=(n, 2))
    uv_b = np.nan_to_num(py.project_points(pts, ib, *table.arrays)[0]) + rng.normal(size=(n, 2))
    return rng, table, pts, ia, ib, uv_a, uv_b


def bench(repeat: int) -> list:
    rng, table, pts, ia, ib, uv_a, uv_b = _inputs()
    cfg = SolveConfig()
    rows = []
    for name, k in available_backends().items():
        pos, status = k.triangulate_pairs(uv_a, ia, uv_b, ib, *table.arrays, geometry.MAX_ITER)
        ok = status == 0
        via = (pos[ok], uv_a[ok], ia[ok], uv_b[ok], ib[ok], *table.arrays, cfg.depth_min, cfg.depth_max,
               cfg.d_max, math.cos(cfg.theta_min), cfg.r_max, False)
        cams = np.arange(len(table), dtype=np.int64)
        obs, _ = k.project_points(np.tile(pts[0], (len(cams), 1)), cams, *table.arrays)
        obs = np.nan_to_num(obs) + rng.normal(size=obs.shape)
        hist = np.zeros(geometry.MAX_ITER + 1)
        cases = {
            "project_points (2000)": lambda: k.project_points(pts, ia, *table.arrays),
            "triangulate_pairs (2000)": lambda: k.triangulate_pairs(uv_a, ia, uv_b, ib, *table.arrays,
                                                                    geometry.MAX_ITER),
            "viability (2000)": lambda: k.viability(*via),
            "refine_point (8 views)": lambda: k.refine_point(pts[0] + 0.3, obs, cams, *table.arrays,
                                                             geometry.MAX_ITER, hist),
        }
        for case, fn in cases.items():
            best = min(timeit.repeat(fn, number=1, repeat=repeat))
            rows.append((case, name, best))
    return rows


def end_to_end() -> list:
    out = []
    for pure in ("1", "0"):
        env = dict(os.environ, VOTRI_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True,
                             check=True)
        backend, seconds, n = res.stdout.split()
        out.append((backend, float(seconds), int(n)))
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rows = bench(args.repeat)
    print(f"{'kernel':28s} {'backend':8s} {'best ms':>10s}")
    for case, name, t in rows:
        print(f"{case:28s} {name:8s} {t * 1e3:10.3f}")
    by_case: dict = {}
    for case, name, t in rows:
        by_case.setdefault(case, {})[name] = t
    for case, t in by_case.items():
        if "cython" in t:
            print(f"speedup {case}: {t['python'] / t['cython']:.1f}x")
    print("end-to-end pipeline (35 objects, 5 passes):")
    for backend, seconds, n in end_to_end():
        print(f"  {backend:8s} {seconds:7.2f} s  {n} objects")


if __name__ == "__main__":
    main()
