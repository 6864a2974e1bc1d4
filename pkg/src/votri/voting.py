"""Robust voting-based triangulation of unassociated detections.

Every pair of detections from two different images proposes a 3D point.
Viable proposals collect votes from the nearest detection in every other
image that sees the point; the best-supported proposal is accepted, its
voters leave the pool, and the affected proposals are re-scored before the
next round.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import geometry
from ._backend import kernels
from .geometry import CameraTable, CameraView, GeometryError, PixelPoint, WorldPoint

log = logging.getLogger(__name__)

ANGLE_MODES = ("rays", "optical_axes")
MEAN_MODES = ("recompute", "frozen")


@dataclass(frozen=True)
class Detection:
    id: str
    image_id: str
    center: PixelPoint
    score: float | None = None


@dataclass(frozen=True)
class SolveConfig:
    """Thresholds for hypothesis viability, voting and acceptance.

    Attributes:
        d_max: Inlier radius and maximum reprojection error, pixels.
        alpha: Minimum ratio of the best vote count to the mean vote count.
        theta_min: Minimum triangulation angle, radians.
        r_max: Maximum object-to-camera distance, meters.
        depth_min: Minimum depth in front of a camera, meters.
        depth_max: Maximum depth in front of a camera, meters.
        angle_mode: ``"rays"`` (viewing rays to the point) or ``"optical_axes"``.
        mean_mode: ``"recompute"`` the mean vote count over the active
            hypotheses every round, or keep it ``"frozen"`` at its initial value.
        min_votes: Absolute floor on the vote count of an accepted hypothesis.
    """

    d_max: float = 10.0
    alpha: float = 1.0
    theta_min: float = math.radians(5.0)
    r_max: float = 50.0
    depth_min: float = 2.0
    depth_max: float = 80.0
    angle_mode: str = "rays"
    mean_mode: str = "recompute"
    min_votes: int = 3

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.theta_min < math.pi:
            raise ValueError("theta_min must lie in [0, pi)")
        if not 0 < self.depth_min < self.depth_max:
            raise ValueError("need 0 < depth_min < depth_max")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if self.angle_mode not in ANGLE_MODES:
            raise ValueError(f"angle_mode must be one of {ANGLE_MODES}")
        if self.min_votes < 2:
            raise ValueError("min_votes must be >= 2")
        if self.mean_mode not in MEAN_MODES:
            raise ValueError(f"mean_mode must be one of {MEAN_MODES}")


@dataclass(frozen=True)
class Hypothesis:
    det_a: str
    det_b: str
    point: WorldPoint
    inliers: frozenset

    @property
    def vote_count(self) -> int:
        return len(self.inliers)


@dataclass(frozen=True)
class ObjectEstimate:
    """An accepted object.

    ``support`` lists detection ids in ascending (image id, detection id)
    order; ``votes`` is the vote count at acceptance time.
    """

    id: str
    position: WorldPoint
    support: tuple
    rms_px: float
    cluster_ids: tuple = ()
    votes: int = 0

    @property
    def cluster_id(self) -> str:
        return self.cluster_ids[0] if self.cluster_ids else ""


@dataclass
class SolveStats:
    n_detections: int = 0
    n_pairs: int = 0
    n_degenerate: int = 0
    n_behind: int = 0
    n_nonfinite: int = 0
    n_hypotheses: int = 0
    n_accepted: int = 0
    iterations: int = 0
    rescored: int = 0
    votes: list = field(default_factory=list)


def acceptance_threshold(vote_counts, alpha: float) -> float:
    """``alpha`` times the mean vote count."""
    total = int(np.sum(vote_counts))
    return alpha * (total / len(vote_counts))


class ClusterProblem:
    """Indexed detections and cameras for one cluster.

    Views are ordered by id; detections by (image order, detection id), so
    the detection index order is the residual order used everywhere.
    """

    def __init__(self, views: Sequence[CameraView], detections: Iterable[Detection]):
        self.views = sorted(views, key=lambda v: v.id)
        self.view_index = {v.id: i for i, v in enumerate(self.views)}
        if len(self.view_index) != len(self.views):
            raise ValueError("duplicate view ids")
        dets = list(detections)
        for d in dets:
            if d.image_id not in self.view_index:
                raise ValueError(f"detection {d.id!r} references unknown image {d.image_id!r}")
        dets.sort(key=lambda d: (self.view_index[d.image_id], d.id))
        self.detections = dets
        self.det_ids = [d.id for d in dets]
        n = len(dets)
        self.det_uv = np.array([[float(d.center[0]), float(d.center[1])] for d in dets]).reshape(n, 2)
        self.det_img = np.array([self.view_index[d.image_id] for d in dets], dtype=np.int64)
        counts = np.bincount(self.det_img, minlength=len(self.views))
        self.img_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        # rank of each detection id in plain string order, for tie-breaking
        order = sorted(range(n), key=lambda i: self.det_ids[i])
        self.id_rank = np.empty(n, dtype=np.int64)
        self.id_rank[order] = np.arange(n)
        self.table = CameraTable([v.camera for v in self.views])

    @property
    def n_images(self) -> int:
        return len(self.views)

    def candidate_pairs(self) -> tuple:
        n = len(self.detections)
        ia, ib = np.triu_indices(n, k=1)
        keep = self.det_img[ia] != self.det_img[ib]
        return ia[keep].astype(np.int64), ib[keep].astype(np.int64)

    def triangulate(self, ia, ib):
        return kernels.triangulate_pairs(
            self.det_uv[ia], self.det_img[ia], self.det_uv[ib], self.det_img[ib],
            *self.table.arrays, geometry.MAX_ITER,
        )

    def viable(self, points, ia, ib, cfg: SolveConfig) -> np.ndarray:
        return kernels.viability(
            points, self.det_uv[ia], self.det_img[ia], self.det_uv[ib], self.det_img[ib],
            *self.table.arrays, cfg.depth_min, cfg.depth_max, cfg.d_max,
            math.cos(cfg.theta_min), cfg.r_max, cfg.angle_mode == "optical_axes",
        ).astype(bool)

    def score(self, points, rows, fixed_a, fixed_b, active, cfg: SolveConfig, out_det, out_err):
        kernels.score_rows(
            points, rows, fixed_a, fixed_b, self.det_uv, self.det_img,
            active.astype(np.uint8), self.img_start, *self.table.arrays,
            cfg.depth_min, cfg.depth_max, cfg.r_max, cfg.d_max, out_det, out_err,
        )

    def refine(self, point, dets: np.ndarray) -> tuple:
        return geometry.refine_arrays(
            np.asarray(point, dtype=np.float64), self.det_uv[dets], self.det_img[dets], self.table
        )


def _views_by_id(views) -> Mapping[str, CameraView]:
    if isinstance(views, Mapping):
        return views
    return {v.id: v for v in views}


def is_viable(h_point, pair: tuple, views, cfg: SolveConfig) -> bool:
    """Check the four viability constraints for a two-view hypothesis point.

    Depth in both cameras within ``[depth_min, depth_max]``, reprojection
    error to both defining detections below ``d_max``, triangulation angle
    above ``theta_min`` and distance to both cameras below ``r_max``.
    """
    a, b = pair
    vmap = _views_by_id(views)
    table = CameraTable([vmap[a.image_id].camera, vmap[b.image_id].camera])
    ok = kernels.viability(
        np.asarray(h_point, dtype=np.float64), np.asarray(a.center, dtype=np.float64),
        np.zeros(1, dtype=np.int64), np.asarray(b.center, dtype=np.float64),
        np.ones(1, dtype=np.int64), *table.arrays, cfg.depth_min, cfg.depth_max,
        cfg.d_max, math.cos(cfg.theta_min), cfg.r_max, cfg.angle_mode == "optical_axes",
    )
    return bool(ok[0])


def compute_inliers(l, detections_by_image: Mapping[str, Sequence[Detection]], views,
                    cfg: SolveConfig) -> set:
    """Detections voting for point ``l``: at most the nearest one per image."""
    vmap = _views_by_id(views)
    used = [vmap[i] for i in sorted(detections_by_image) if i in vmap]
    problem = ClusterProblem(used, [d for v in used for d in detections_by_image[v.id]])
    if not problem.detections:
        return set()
    points = np.asarray(l, dtype=np.float64).reshape(1, 3)
    out_det = np.full((1, problem.n_images), -1, dtype=np.int32)
    out_err = np.full((1, problem.n_images), np.inf)
    none = np.full(1, -1, dtype=np.int64)
    active = np.ones(len(problem.detections), dtype=bool)
    problem.score(points, np.zeros(1, dtype=np.int64), none, none, active, cfg, out_det, out_err)
    return {problem.det_ids[j] for j in out_det[0] if j >= 0}


class _Voting:
    """Hypothesis arrays and incremental vote bookkeeping for one cluster."""

    def __init__(self, problem: ClusterProblem, cfg: SolveConfig, stats: SolveStats):
        self.problem = problem
        self.cfg = cfg
        n = len(problem.detections)
        stats.n_detections = n
        ia, ib = problem.candidate_pairs()
        stats.n_pairs = len(ia)
        points, status = problem.triangulate(ia, ib)
        stats.n_degenerate = int(np.sum(status == kernels.STATUS_DEGENERATE))
        stats.n_behind = int(np.sum(status == kernels.STATUS_BEHIND))
        stats.n_nonfinite = int(np.sum(status == kernels.STATUS_NONFINITE))
        ok = np.flatnonzero(status == kernels.STATUS_OK)
        ia, ib, points = ia[ok], ib[ok], points[ok]
        keep = problem.viable(points, ia, ib, cfg)
        self.ia = ia[keep]
        self.ib = ib[keep]
        self.points = np.ascontiguousarray(points[keep])
        h = len(self.ia)
        stats.n_hypotheses = h
        self.det_active = np.ones(n, dtype=bool)
        self.hyp_active = np.ones(h, dtype=bool)
        self.out_det = np.full((h, problem.n_images), -1, dtype=np.int32)
        self.out_err = np.full((h, problem.n_images), np.inf)
        problem.score(self.points, np.arange(h, dtype=np.int64), self.ia, self.ib,
                      self.det_active, cfg, self.out_det, self.out_err)
        self.votes = np.sum(self.out_det >= 0, axis=1)

    def inliers(self, h: int) -> np.ndarray:
        row = self.out_det[h]
        return np.sort(row[row >= 0]).astype(np.int64)

    def mean_error(self, h: int) -> float:
        row = self.out_det[h]
        return math.fsum(self.out_err[h][row >= 0].tolist()) / int(self.votes[h])

    def best(self, rows: np.ndarray) -> int:
        """Row with most votes; ties by lowest mean error, then lowest id pair."""
        v = self.votes[rows]
        cand = rows[v == v.max()]
        if len(cand) == 1:
            return int(cand[0])
        rank = self.problem.id_rank
        keys = []
        for h in cand.tolist():
            ra, rb = int(rank[self.ia[h]]), int(rank[self.ib[h]])
            keys.append((self.mean_error(h), min(ra, rb), max(ra, rb), h))
        return min(keys)[3]

    def remove(self, dets: np.ndarray, stats: SolveStats) -> None:
        self.det_active[dets] = False
        gone = ~self.det_active
        self.hyp_active &= ~(gone[self.ia] | gone[self.ib])
        rows = np.flatnonzero(self.hyp_active)
        if len(rows) == 0:
            return
        touched = rows[np.isin(self.out_det[rows], dets).any(axis=1)]
        if len(touched):
            self.problem.score(self.points, touched, self.ia, self.ib, self.det_active,
                               self.cfg, self.out_det, self.out_err)
            self.votes[touched] = np.sum(self.out_det[touched] >= 0, axis=1)
            stats.rescored += len(touched)

    def hypotheses(self) -> list:
        ids = self.problem.det_ids
        out = []
        for h in np.flatnonzero(self.hyp_active).tolist():
            out.append(
                Hypothesis(
                    det_a=ids[self.ia[h]], det_b=ids[self.ib[h]],
                    point=WorldPoint(*self.points[h].tolist()),
                    inliers=frozenset(ids[j] for j in self.inliers(h).tolist()),
                )
            )
        return out


def generate_hypotheses(views, detections, cfg: SolveConfig,
                        stats: SolveStats | None = None) -> list:
    """All viable two-view hypotheses with their inlier sets.

    Pairs that are degenerate, non-triangulable or non-viable are dropped and
    only counted in ``stats``.
    """
    stats = stats if stats is not None else SolveStats()
    vmap = _views_by_id(views)
    problem = ClusterProblem(list(vmap.values()), detections)
    return _Voting(problem, cfg, stats).hypotheses()


def solve_cluster(views, detections, cfg: SolveConfig, cluster_id: str = "",
                  stats: SolveStats | None = None) -> list:
    """Greedy vote-and-remove extraction of objects from one cluster.

    Each round accepts the hypothesis with the most votes when its count is
    at least ``alpha`` times the mean over the active hypotheses, refines it
    over its inliers, removes those detections from the pool and re-scores
    only the hypotheses that lost a voter.
    """
    stats = stats if stats is not None else SolveStats()
    vmap = _views_by_id(views)
    problem = ClusterProblem(list(vmap.values()), detections)
    if not problem.detections:
        return []
    state = _Voting(problem, cfg, stats)
    frozen = None
    if cfg.mean_mode == "frozen" and len(state.votes):
        frozen = acceptance_threshold(state.votes, cfg.alpha)

    objects = []
    while True:
        rows = np.flatnonzero(state.hyp_active)
        if len(rows) == 0:
            break
        stats.iterations += 1
        threshold = frozen if frozen is not None else acceptance_threshold(state.votes[rows], cfg.alpha)
        h = state.best(rows)
        votes = int(state.votes[h])
        if votes < threshold or votes < cfg.min_votes:
            break
        inl = state.inliers(h)
        try:
            position, rms = problem.refine(state.points[h], inl)
        except GeometryError as exc:
            log.debug("refinement failed for hypothesis %d: %s", h, exc)
            position = WorldPoint(*state.points[h].tolist())
            rms = math.sqrt(math.fsum((state.out_err[h][state.out_det[h] >= 0] ** 2).tolist()) / votes)
        objects.append(
            ObjectEstimate(
                id=f"{cluster_id}/{len(objects):04d}" if cluster_id else f"{len(objects):04d}",
                position=position,
                support=tuple(problem.det_ids[j] for j in inl.tolist()),
                rms_px=rms,
                cluster_ids=(cluster_id,) if cluster_id else (),
                votes=votes,
            )
        )
        stats.votes.append(votes)
        state.remove(inl, stats)
    stats.n_accepted = len(objects)
    return objects
