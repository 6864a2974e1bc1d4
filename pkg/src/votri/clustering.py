"""Spatial clustering of views and merging of duplicate objects across clusters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

from . import geometry
from .geometry import CameraTable, CameraView, GeometryError, WorldPoint
from .voting import Detection, ObjectEstimate, SolveConfig

log = logging.getLogger(__name__)


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    """Cluster radius ``n_max``, seed consumption radius and duplicate merge distance (meters)."""

    n_max: float = 50.0
    assign_radius: float | None = None
    merge_dist: float = 1.0

    def __post_init__(self):
        if self.assign_radius is None:
            object.__setattr__(self, "assign_radius", self.n_max / 2.0)
        if not 0 < self.assign_radius <= self.n_max:
            raise ValueError("need 0 < assign_radius <= n_max")
        if not self.merge_dist > 0:
            raise ValueError("merge_dist must be positive")


@dataclass(frozen=True)
class Cluster:
    id: str
    seed_center: WorldPoint
    image_ids: frozenset


def cluster_images(views: Sequence[CameraView], cfg: ClusterConfig) -> list:
    """Greedy overlapping ball cover of the camera centers.

    The first unconsumed view in id order seeds a cluster holding every view
    within ``n_max`` of it; views within ``assign_radius`` of the seed are
    consumed. Clusters overlap, so any two views closer than
    ``assign_radius`` share at least one cluster.
    """
    if not views:
        raise EmptyInput("no views to cluster")
    ordered = sorted(views, key=lambda v: v.id)
    centers = np.array([v.pose.center for v in ordered])
    tree = cKDTree(centers)
    consumed = np.zeros(len(ordered), dtype=bool)
    clusters = []
    for i in range(len(ordered)):
        if consumed[i]:
            continue
        seed = centers[i]
        members = tree.query_ball_point(seed, cfg.n_max)
        near = tree.query_ball_point(seed, cfg.assign_radius)
        consumed[near] = True
        consumed[i] = True
        clusters.append(
            Cluster(
                id=f"c{len(clusters):05d}",
                seed_center=WorldPoint(*seed.tolist()),
                image_ids=frozenset(ordered[j].id for j in members),
            )
        )
    return clusters


def _components(points: np.ndarray, dist: float, extra_edges=()) -> list:
    """Connected components of the graph with edges between points closer than
    ``dist`` plus any ``extra_edges``."""
    n = len(points)
    ds = DisjointSet(range(n))
    if n > 1:
        for i, j in cKDTree(points).query_pairs(dist):
            if math.dist(points[i], points[j]) < dist:
                ds.merge(i, j)
    for i, j in extra_edges:
        ds.merge(i, j)
    return sorted(sorted(s) for s in ds.subsets())


def _position_key(o: ObjectEstimate) -> tuple:
    return (tuple(o.position), o.support)


MAX_MERGE_ROUNDS = 10


def merge_objects(objects: Sequence[ObjectEstimate], all_detections, views,
                  cfg: ClusterConfig, diagnostics: dict | None = None,
                  solve_cfg: SolveConfig | None = None) -> list:
    """Merge objects closer than ``merge_dist`` (transitively) into one.

    A merged object is re-refined over the union of its members' support,
    starting from the support-weighted centroid. Afterwards any detection
    still supporting several objects is kept only by the object that
    reprojects closest to it; objects left with support from fewer than two
    images are dropped. Merging and resolution repeat until no close pair
    remains. Output is sorted by position and renumbered.

    With ``solve_cfg`` two more rules apply. Objects sharing a detection are
    also merged when every detection of one reprojects within ``d_max`` of
    the other's position. Objects trimmed by conflict resolution must still
    carry ``min_votes`` detections whose viewing rays span more than
    ``theta_min``.
    """
    dets = all_detections if isinstance(all_detections, Mapping) else {d.id: d for d in all_detections}
    vmap = views if isinstance(views, Mapping) else {v.id: v for v in views}
    diag = diagnostics if diagnostics is not None else {}
    diag.update(merges=0, conflicts=0, dropped=0, close_pairs=0, rounds=0)
    merged = list(objects)
    if not merged:
        return []

    for rnd in range(MAX_MERGE_ROUNDS):
        diag["rounds"] = rnd + 1
        merged, n_merges, centroids = _merge_round(merged, dets, vmap, cfg.merge_dist, solve_cfg)
        diag["merges"] += n_merges
        if rnd == 0:
            diag["centroid_close_pairs"] = len(cKDTree(centroids).query_pairs(cfg.merge_dist * (1 - 1e-12)))
        merged, conflicts, dropped = _resolve_shared_support(merged, dets, vmap, solve_cfg)
        diag["conflicts"] += conflicts
        diag["dropped"] += dropped
        close = _close_pairs(merged, cfg.merge_dist)
        if not close or (n_merges == 0 and conflicts == 0 and rnd > 0):
            break

    merged.sort(key=_position_key)
    out = [replace(o, id=f"obj-{i:05d}") for i, o in enumerate(merged)]
    diag["close_pairs"] = len(_close_pairs(out, cfg.merge_dist))
    if diag["close_pairs"]:
        log.info("%d object pairs closer than merge_dist after refinement", diag["close_pairs"])
    return out


def _close_pairs(objects, dist: float) -> set:
    if len(objects) < 2:
        return set()
    pos = np.array([o.position for o in objects])
    return {(i, j) for i, j in cKDTree(pos).query_pairs(dist) if math.dist(pos[i], pos[j]) < dist}


def _consistent(a: ObjectEstimate, b: ObjectEstimate, dets, vmap, d_max: float) -> bool:
    """Whether the smaller support reprojects within ``d_max`` of the larger object."""
    ref, other = (a, b) if (len(a.support), _position_key(b)) >= (len(b.support), _position_key(a)) else (b, a)
    return all(_reproj_error(ref, dets[d], vmap) < d_max for d in other.support)


def _shared_support_pairs(objects: list, dets, vmap, d_max: float) -> list:
    owners: dict = {}
    for k, o in enumerate(objects):
        for d in o.support:
            owners.setdefault(d, []).append(k)
    pairs = sorted({(i, j) for ks in owners.values() for i in ks for j in ks if i < j})
    return [(i, j) for i, j in pairs if _consistent(objects[i], objects[j], dets, vmap, d_max)]


def _merge_round(objects: list, dets, vmap, merge_dist: float, solve_cfg=None) -> tuple:
    objects = sorted(objects, key=_position_key)
    pos = np.array([o.position for o in objects])
    extra = [] if solve_cfg is None else _shared_support_pairs(objects, dets, vmap, solve_cfg.d_max)
    merged, centroids = [], []
    n_merges = 0
    for comp in _components(pos, merge_dist, extra):
        if len(comp) == 1:
            merged.append(objects[comp[0]])
            centroids.append(pos[comp[0]])
            continue
        n_merges += len(comp) - 1
        members = [objects[i] for i in comp]
        weights = np.array([len(o.support) for o in members], dtype=np.float64)
        centroid = (weights[:, None] * pos[comp]).sum(axis=0) / weights.sum()
        centroids.append(centroid)
        support = sorted({d for o in members for d in o.support}, key=lambda d: (dets[d].image_id, d))
        position, rms = _refine(centroid, support, dets, vmap)
        merged.append(
            ObjectEstimate(
                id="",
                position=position,
                support=tuple(support),
                rms_px=rms,
                cluster_ids=tuple(sorted({c for o in members for c in o.cluster_ids})),
                votes=max(o.votes for o in members),
            )
        )
    return merged, n_merges, np.array(centroids)


def max_ray_angle(position, support, dets, vmap) -> float:
    """Largest angle (radians) between viewing rays from the support cameras to ``position``."""
    centers = np.array([vmap[i].pose.center for i in sorted({dets[d].image_id for d in support})])
    rays = centers - np.asarray(position, dtype=np.float64)
    norms = np.linalg.norm(rays, axis=1)
    if len(rays) < 2 or not np.all(norms > 0):
        return 0.0
    rays /= norms[:, None]
    return float(np.arccos(np.clip(np.min(rays @ rays.T), -1.0, 1.0)))


def _observations(support, dets, vmap) -> tuple:
    image_ids = sorted({dets[d].image_id for d in support})
    index = {i: k for k, i in enumerate(image_ids)}
    table = CameraTable([vmap[i].camera for i in image_ids])
    uv = np.array([[float(dets[d].center[0]), float(dets[d].center[1])] for d in support])
    cams = np.array([index[dets[d].image_id] for d in support], dtype=np.int64)
    return uv, cams, table


def _refine(start, support, dets, vmap) -> tuple:
    uv, cams, table = _observations(support, dets, vmap)
    try:
        return geometry.refine_arrays(np.asarray(start, dtype=np.float64), uv, cams, table)
    except GeometryError as exc:
        log.debug("merge refinement failed: %s", exc)
        return WorldPoint(*(float(t) for t in start)), _rms(start, uv, cams, table)


def _rms(point, uv, cams, table) -> float:
    proj, z = geometry.kernels.project_points(np.tile(point, (len(cams), 1)), cams, *table.arrays)
    ok = z > geometry.DEPTH_EPS
    if not ok.any():
        return float("nan")
    r = proj[ok] - uv[ok]
    return math.sqrt(float(np.mean(np.sum(r * r, axis=1))))


def _reproj_error(o: ObjectEstimate, det: Detection, vmap) -> float:
    view = vmap[det.image_id]
    try:
        u, v = geometry.project(o.position, view.pose, view.intrinsics)
    except GeometryError:
        return math.inf
    return math.hypot(u - det.center[0], v - det.center[1])


def _resolve_shared_support(objects: list, dets, vmap, solve_cfg=None) -> tuple:
    owners: dict = {}
    for k, o in enumerate(objects):
        for d in o.support:
            owners.setdefault(d, []).append(k)
    shared = {d: ks for d, ks in owners.items() if len(ks) > 1}
    if not shared:
        return objects, 0, 0
    lose: dict = {}
    for d in sorted(shared):
        ks = shared[d]
        keep = min(ks, key=lambda k: (_reproj_error(objects[k], dets[d], vmap), _position_key(objects[k])))
        for k in ks:
            if k != keep:
                lose.setdefault(k, set()).add(d)
    out = []
    dropped = 0
    for k, o in enumerate(objects):
        if k not in lose:
            out.append(o)
            continue
        support = tuple(d for d in o.support if d not in lose[k])
        if len({dets[d].image_id for d in support}) < 2:
            dropped += 1
            continue
        position, rms = _refine(o.position, support, dets, vmap)
        if solve_cfg is not None and (
            len(support) < solve_cfg.min_votes
            or max_ray_angle(position, support, dets, vmap) <= solve_cfg.theta_min
        ):
            dropped += 1
            continue
        out.append(replace(o, position=position, support=support, rms_px=rms))
    return out, len(shared), dropped
