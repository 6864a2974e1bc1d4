"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np

from votri import geometry
from votri.geometry import CameraIntrinsics, CameraView, GeometryError, Pose
from votri.voting import Detection

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``center`` looking at ``target`` (x right, y down, z forward)."""
    c = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - c
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose.from_matrix(np.column_stack([right, down, fwd]), c)


def random_pose(rng, target=(0.0, 0.0, 0.0), radius=(5.0, 30.0)) -> Pose:
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    c = np.asarray(target) + d * rng.uniform(*radius)
    return look_at(c, np.asarray(target) + rng.normal(scale=0.5, size=3))


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(tuple(q), (0.0, 0.0, 0.0)).matrix


def matrix_projection(l, pose: Pose, q: CameraIntrinsics) -> tuple:
    """3x4 homogeneous projection ``K [R^T | -R^T c]``."""
    K = np.array([[q.fx, 0.0, q.cx], [0.0, q.fy, q.cy], [0.0, 0.0, 1.0]])
    R = np.asarray(pose.matrix)
    c = np.asarray(pose.center)
    P = K @ np.hstack([R.T, (-R.T @ c)[:, None]])
    h = P @ np.append(np.asarray(l, dtype=float), 1.0)
    return h[0] / h[2], h[1] / h[2]


def objective(l, obs) -> float:
    total = 0.0
    for z, p, q in obs:
        u, v = matrix_projection(l, p, q)
        total += (u - z[0]) ** 2 + (v - z[1]) ** 2
    return total


def ring_views(point, n, radius=15.0, height=1.5, prefix="v", arc=math.pi / 2) -> list:
    """``n`` cameras on an arc around ``point`` all looking at it."""
    p = np.asarray(point, dtype=float)
    views = []
    for i in range(n):
        a = -arc / 2 + arc * i / max(1, n - 1)
        c = p + np.array([radius * math.cos(a), radius * math.sin(a), height - p[2]])
        views.append(CameraView(f"{prefix}{i:03d}", look_at(c, p), INTR))
    return views


def exact_detections(point, views, prefix="d") -> list:
    dets = []
    for v in views:
        u, w = geometry.project(point, v.pose, v.intrinsics)
        dets.append(Detection(f"{prefix}-{v.id}", v.id, (u, w)))
    return dets


# --------------------------------------------------------------------------
# Naive voting oracle: rebuilds every hypothesis and inlier set from scratch


def viable_oracle(point, a: Detection, b: Detection, vmap, cfg) -> bool:
    """Constraint-by-constraint viability written directly from the definition."""
    pts = np.asarray(point, dtype=float)
    for d in (a, b):
        view = vmap[d.image_id]
        R = view.pose.matrix
        c = np.asarray(view.pose.center)
        z = float(R[:, 2] @ (pts - c))
        if not cfg.depth_min <= z <= cfg.depth_max:
            return False
        u, v = matrix_projection(pts, view.pose, view.intrinsics)
        if not math.hypot(u - d.center[0], v - d.center[1]) < cfg.d_max:
            return False
        if not np.linalg.norm(pts - c) < cfg.r_max:
            return False
    pa, pb = vmap[a.image_id].pose, vmap[b.image_id].pose
    if cfg.angle_mode == "rays":
        ang = geometry.ray_angle(pts, pa, pb)
    else:
        ang = geometry.optical_axis_angle(pa, pb)
    return ang > cfg.theta_min


def inliers_oracle(point, active: list, vmap, cfg, fixed=()) -> dict:
    """image id -> (detection id, error) by sorting each image's detections by distance."""
    out = {}
    pts = np.asarray(point, dtype=float)
    by_image: dict = {}
    for d in active:
        by_image.setdefault(d.image_id, []).append(d)
    for image_id, dets in by_image.items():
        view = vmap[image_id]
        forced = [d for d in fixed if d.image_id == image_id]
        if forced:
            u, v = matrix_projection(pts, view.pose, view.intrinsics)
            out[image_id] = (forced[0].id, math.hypot(u - forced[0].center[0], v - forced[0].center[1]))
            continue
        R = view.pose.matrix
        c = np.asarray(view.pose.center)
        z = float(R[:, 2] @ (pts - c))
        if not (cfg.depth_min <= z <= cfg.depth_max and np.linalg.norm(pts - c) < cfg.r_max):
            continue
        u, v = matrix_projection(pts, view.pose, view.intrinsics)
        q = view.intrinsics
        if not (0 <= u <= q.width and 0 <= v <= q.height):
            continue
        ranked = sorted((math.hypot(u - d.center[0], v - d.center[1]), d.id) for d in dets)
        err, did = ranked[0]
        if err < cfg.d_max:
            out[image_id] = (did, err)
    return out


def naive_solve(views, detections, cfg) -> list:
    """The voting loop with every hypothesis and inlier set rebuilt on every round.

    Returns ``(position, support tuple, votes)`` per accepted object.
    """
    vmap = {v.id: v for v in views}
    active = sorted(detections, key=lambda d: d.id)
    accepted = []
    while True:
        hyps = []
        for a, b in itertools.combinations(active, 2):
            if a.image_id == b.image_id:
                continue
            try:
                pt = geometry.triangulate_two_view(a.center, vmap[a.image_id].camera,
                                                   b.center, vmap[b.image_id].camera)
            except GeometryError:
                continue
            if not viable_oracle(pt, a, b, vmap, cfg):
                continue
            inl = inliers_oracle(pt, active, vmap, cfg, fixed=(a, b))
            err = math.fsum(e for _, e in inl.values()) / len(inl)
            lo, hi = sorted((a.id, b.id))
            hyps.append((len(inl), err, lo, hi, pt, inl))
        if not hyps:
            return accepted
        mean = sum(h[0] for h in hyps) / len(hyps)
        best = min(hyps, key=lambda h: (-h[0], h[1], h[2], h[3]))
        votes = best[0]
        if votes < cfg.alpha * mean or votes < cfg.min_votes:
            return accepted
        support_ids = {did for did, _ in best[5].values()}
        support = sorted((d for d in active if d.id in support_ids),
                         key=lambda d: (d.image_id, d.id))
        obs = [(d.center, vmap[d.image_id].pose, vmap[d.image_id].intrinsics) for d in support]
        try:
            pos, _ = geometry.refine_multiview(best[4], obs)
        except GeometryError:
            pos = best[4]
        accepted.append((tuple(pos), tuple(d.id for d in support), votes))
        active = [d for d in active if d.id not in support_ids]


def random_instance(rng, max_images=5, max_dets=10):
    """Small cluster: 1-2 objects seen by up to ``max_images`` cameras plus clutter."""
    n_img = int(rng.integers(2, max_images + 1))
    objs = [rng.uniform([-3, -3, 8], [3, 3, 20]) for _ in range(int(rng.integers(1, 3)))]
    views = []
    for i in range(n_img):
        c = rng.uniform([-12, -4, -1], [12, 4, 1])
        views.append(CameraView(f"im{i}", look_at(c, (0.0, 0.0, 14.0)), INTR))
    dets = []
    for v in views:
        for k, o in enumerate(objs):
            if len(dets) >= max_dets or rng.random() < 0.2:
                continue
            try:
                u, w = geometry.project(o, v.pose, v.intrinsics)
            except GeometryError:
                continue
            noise = rng.normal(scale=1.0, size=2)
            dets.append(Detection(f"{v.id}-o{k}", v.id, (u + noise[0], w + noise[1])))
    n_fp = int(rng.integers(0, 3))
    for k in range(n_fp):
        if len(dets) >= max_dets:
            break
        v = views[int(rng.integers(0, n_img))]
        dets.append(Detection(f"{v.id}-fp{k}", v.id, tuple(rng.uniform([0, 0], [640, 480]))))
    return views, dets
