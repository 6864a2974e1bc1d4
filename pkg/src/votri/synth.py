"""Synthetic city scenes: objects, multi-pass drives and a noisy unbiased detector.

Streets form a grid over the area. Pass ``p`` drives every street of one
orientation (x for even ``p``, y for odd) in a direction that flips every
second pass, on the right-hand lane with a small per-pass lateral offset.
Objects are oriented: each faces traffic in one direction along its nearest
street and is only visible from cameras inside its viewing cone, so a
single pass sees only part of the scene.

Randomness for the layout comes from ``(seed, 0)`` and for pass ``p`` from
``(seed, p + 1)``; the first ``k`` passes of an ``n``-pass scene therefore
equal the ``k``-pass scene with the same seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraIntrinsics, CameraView, PixelPoint, Pose, WorldPoint
from .pipeline import Corpus
from .voting import Detection, SolveConfig

@dataclass(frozen=True)
class SceneSpec:
    """Scene layout and camera trajectory parameters (meters unless noted).

    ``images_per_pass`` caps the frames of each pass (0 for no cap);
    ``facing_half_angle`` is the half-width of an object's visibility cone in
    radians (``pi`` makes objects visible from everywhere).
    """

    n_objects: int = 20
    area: tuple = (200.0, 200.0)
    object_height_range: tuple = (3.0, 6.0)
    n_passes: int = 5
    images_per_pass: int = 0
    camera_speed_spacing: float = 4.0
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)
    )
    rng_seed: int = 0
    street_spacing: float = 50.0
    lane_offset: float = 2.0
    lane_jitter: float = 0.3
    camera_height: float = 1.5
    yaw_jitter: float = math.radians(1.0)
    facing_half_angle: float = math.radians(70.0)
    min_separation: float = 4.0
    n_lookalikes: int = -1

    def __post_init__(self):
        if self.n_objects < 0 or self.n_passes < 0 or self.images_per_pass < 0:
            raise ValueError("counts must be non-negative")
        if not (self.area[0] > 0 and self.area[1] > 0):
            raise ValueError("area must be positive")
        if not self.camera_speed_spacing > 0:
            raise ValueError("camera_speed_spacing must be positive")
        if self.object_height_range[0] > self.object_height_range[1]:
            raise ValueError("object_height_range must be (low, high)")

    @property
    def lookalikes(self) -> int:
        return self.n_objects // 5 if self.n_lookalikes < 0 else self.n_lookalikes


@dataclass(frozen=True)
class DetectorSpec:
    """Simulated detector: per-visibility recall, isotropic Gaussian center
    noise, Poisson false positives per image, and the probability that a false
    positive comes from a persistent look-alike rather than a random pixel."""

    recall: float = 0.85
    pixel_sigma: float = 1.5
    fp_per_image: float = 0.0
    fp_cluster_prob: float = 0.0

    def __post_init__(self):
        if not 0 <= self.recall <= 1:
            raise ValueError("recall must lie in [0, 1]")
        if self.pixel_sigma < 0 or self.fp_per_image < 0:
            raise ValueError("pixel_sigma and fp_per_image must be non-negative")
        if not 0 <= self.fp_cluster_prob <= 1:
            raise ValueError("fp_cluster_prob must lie in [0, 1]")


@dataclass
class GroundTruth:
    """True object layout and per-detection labels.

    ``labels`` maps detection id to the true object id, or ``None`` for a
    false positive. ``visibility`` lists every (view id, object id) event
    where the object was detectable, detected or not.
    """

    ids: list
    positions: list
    facing: list
    recoverable: list
    labels: dict
    visibility: list = field(default_factory=list)
    lookalikes: list = field(default_factory=list)

    def recoverable_ids(self) -> list:
        return [i for i, r in zip(self.ids, self.recoverable) if r]

    def position_of(self) -> dict:
        return dict(zip(self.ids, self.positions))


def camera_rotation(heading: float) -> np.ndarray:
    """Camera-to-world rotation for a level camera looking along ``heading`` (radians)."""
    fwd = np.array([math.cos(heading), math.sin(heading), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    right = np.cross(down, fwd)
    return np.column_stack([right, down, fwd])


def _place(rng, n, spec: SceneSpec, existing=None) -> np.ndarray:
    w, h = spec.area
    lo, hi = spec.object_height_range
    pts = [] if existing is None else [p for p in existing]
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        p = np.array([rng.uniform(0.0, w), rng.uniform(0.0, h), rng.uniform(lo, hi)])
        if tries < 1000 * (n + 1) and any(np.linalg.norm(p - q) < spec.min_separation for q in pts):
            continue
        pts.append(p)
        out.append(p)
    return np.array(out).reshape(-1, 3)


def _facings(rng, points: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """Unit facing vectors along the nearest street, with a random sign."""
    sign = np.where(rng.random(len(points)) < 0.5, 1.0, -1.0)
    if len(points) == 0:
        return np.zeros((0, 3))
    xs = np.array(_street_positions(spec.area[0], spec.street_spacing))
    ys = np.array(_street_positions(spec.area[1], spec.street_spacing))
    dx = np.abs(points[:, 0:1] - xs[None, :]).min(axis=1)  # distance to streets running along y
    dy = np.abs(points[:, 1:2] - ys[None, :]).min(axis=1)  # distance to streets running along x
    out = np.zeros((len(points), 3))
    along_x = dy <= dx
    out[along_x, 0] = sign[along_x]
    out[~along_x, 1] = sign[~along_x]
    return out


def _street_positions(extent: float, spacing: float) -> list:
    k = int(math.floor(extent / spacing + 1e-9))
    return [i * spacing for i in range(k + 1)]


def pass_trajectory(spec: SceneSpec, p: int, rng) -> list:
    """Camera centers and headings (x, y, heading) for pass ``p``."""
    w, h = spec.area
    along_x = p % 2 == 0
    sign = 1.0 if (p // 2) % 2 == 0 else -1.0
    length = w if along_x else h
    streets = _street_positions(h if along_x else w, spacing=spec.street_spacing)
    frames = []
    for s in streets:
        lateral = spec.lane_offset + rng.normal(0.0, spec.lane_jitter)
        phase = rng.uniform(0.0, spec.camera_speed_spacing)
        n = int(math.floor((length - phase) / spec.camera_speed_spacing)) + 1
        ts = phase + spec.camera_speed_spacing * np.arange(n)
        if sign < 0:
            ts = length - ts
        jitter = rng.normal(0.0, spec.yaw_jitter, size=n)
        for t, dj in zip(ts, jitter):
            if along_x:
                x, y = t, s - sign * lateral
                heading = 0.0 if sign > 0 else math.pi
            else:
                x, y = s + sign * lateral, t
                heading = math.pi / 2 if sign > 0 else -math.pi / 2
            frames.append((x, y, heading + dj))
    if spec.images_per_pass > 0:
        frames = frames[: spec.images_per_pass]
    return frames


def visible(points: np.ndarray, facing: np.ndarray, view: CameraView, cfg: SolveConfig,
            half_angle: float) -> tuple:
    """Mask of detectable points in ``view`` and their exact projections."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool), np.zeros((0, 2))
    R = view.pose.matrix
    c = np.asarray(view.pose.center)
    q = view.intrinsics
    d = points - c
    cam = d @ R
    z = cam[:, 2]
    dist = np.linalg.norm(d, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = q.fx * cam[:, 0] / z + q.cx
        v = q.fy * cam[:, 1] / z + q.cy
        cone = np.einsum("ij,ij->i", facing, -d) / dist >= math.cos(half_angle)
    mask = ((z >= cfg.depth_min) & (z <= cfg.depth_max) & (dist < cfg.r_max)
            & (u >= 0) & (u <= q.width) & (v >= 0) & (v <= q.height) & cone)
    return mask, np.column_stack([u, v])


def recoverable_flags(positions, camera_sets, theta_min: float) -> list:
    """True where two observing camera centers subtend an angle of at least ``theta_min``."""
    cos_min = math.cos(theta_min)
    flags = []
    for p, cams in zip(positions, camera_sets):
        if len(cams) < 2:
            flags.append(False)
            continue
        d = np.asarray(cams) - np.asarray(p)
        d /= np.linalg.norm(d, axis=1)[:, None]
        dots = d @ d.T
        flags.append(bool(np.min(dots) <= cos_min))
    return flags


def generate(scene: SceneSpec, det: DetectorSpec, solve_cfg: SolveConfig | None = None) -> tuple:
    """Generate ``(Corpus, GroundTruth)`` for a synthetic scene."""
    cfg = solve_cfg or SolveConfig()
    layout_rng = np.random.default_rng([scene.rng_seed, 0])
    objects = _place(layout_rng, scene.n_objects, scene)
    facing = _facings(layout_rng, objects, scene)
    looks = _place(layout_rng, scene.lookalikes, scene, existing=list(objects))
    look_facing = _facings(layout_rng, looks, scene)
    ids = [f"gt-{i:04d}" for i in range(len(objects))]

    views, dets = [], []
    labels: dict = {}
    events = []
    seen_from: list = [[] for _ in objects]
    q = scene.intrinsics
    for p in range(scene.n_passes):
        rng = np.random.default_rng([scene.rng_seed, p + 1])
        for f, (x, y, heading) in enumerate(pass_trajectory(scene, p, rng)):
            pose = Pose.from_matrix(camera_rotation(heading), (x, y, scene.camera_height))
            view = CameraView(f"p{p:02d}-f{f:05d}", pose, q, pass_id=f"p{p:02d}")
            views.append(view)
            mask, uv = visible(objects, facing, view, cfg, scene.facing_half_angle)
            found = []
            for i in np.flatnonzero(mask).tolist():
                events.append((view.id, ids[i]))
                hit = rng.random() < det.recall
                noise = rng.normal(0.0, det.pixel_sigma, size=2) if det.pixel_sigma > 0 else np.zeros(2)
                if hit:
                    found.append((uv[i] + noise, ids[i]))
                    seen_from[i].append(view.pose.center)
            n_fp = int(rng.poisson(det.fp_per_image)) if det.fp_per_image > 0 else 0
            if n_fp:
                lmask, luv = visible(looks, look_facing, view, cfg, scene.facing_half_angle)
                lidx = np.flatnonzero(lmask)
                for _ in range(n_fp):
                    if len(lidx) and rng.random() < det.fp_cluster_prob:
                        j = lidx[rng.integers(0, len(lidx))]
                        center = luv[j] + rng.normal(0.0, det.pixel_sigma, size=2)
                    else:
                        center = np.array([rng.uniform(0, q.width), rng.uniform(0, q.height)])
                    found.append((center, None))
            order = rng.permutation(len(found)) if found else []
            for k, j in enumerate(order):
                center, label = found[j]
                did = f"{view.id}-d{k:02d}"
                dets.append(Detection(did, view.id, PixelPoint(float(center[0]), float(center[1]))))
                labels[did] = label

    corpus = Corpus.from_lists(views, dets, source="synth", seed=scene.rng_seed)
    gt = GroundTruth(
        ids=ids,
        positions=[WorldPoint(*p.tolist()) for p in objects],
        facing=[tuple(f.tolist()) for f in facing],
        recoverable=recoverable_flags(objects, seen_from, cfg.theta_min),
        labels=labels,
        visibility=events,
        lookalikes=[WorldPoint(*p.tolist()) for p in looks],
    )
    return corpus, gt


def restrict_passes(corpus: Corpus, gt: GroundTruth, pass_ids, theta_min: float) -> tuple:
    """Sub-corpus of the given passes with recoverability recomputed for it."""
    keep = set(pass_ids)
    views = [v for v in corpus.views.values() if v.pass_id in keep]
    vids = {v.id for v in views}
    dets = [d for d in corpus.detections.values() if d.image_id in vids]
    sub = Corpus.from_lists(views, dets, **corpus.provenance)
    index = {g: k for k, g in enumerate(gt.ids)}
    seen_from: list = [[] for _ in gt.ids]
    for d in dets:
        label = gt.labels.get(d.id)
        if label is not None:
            seen_from[index[label]].append(corpus.views[d.image_id].pose.center)
    sub_gt = replace(
        gt,
        recoverable=recoverable_flags(gt.positions, seen_from, theta_min),
        labels={d.id: gt.labels.get(d.id) for d in dets},
        visibility=[e for e in gt.visibility if e[0] in vids],
    )
    return sub, sub_gt


def write_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w") as fh:
        for i, p, r in zip(gt.ids, gt.positions, gt.recoverable):
            fh.write(json.dumps({"id": i, "x": p[0], "y": p[1], "z": p[2], "recoverable": r}) + "\n")


def read_ground_truth(path) -> GroundTruth:
    ids, pos, rec = [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            ids.append(r["id"])
            pos.append(WorldPoint(float(r["x"]), float(r["y"]), float(r["z"])))
            rec.append(bool(r["recoverable"]))
    return GroundTruth(ids=ids, positions=pos, facing=[None] * len(ids), recoverable=rec, labels={})
