"""End-to-end orchestration: ingest, cluster, solve clusters in parallel, merge, emit."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .clustering import ClusterConfig, cluster_images, merge_objects
from .geometry import CameraIntrinsics, CameraView, PixelPoint, Pose
from .voting import Detection, ObjectEstimate, SolveConfig, SolveStats, solve_cluster

log = logging.getLogger(__name__)

QUATERNION_TOL = 1e-6


class IngestError(ValueError):
    """Malformed or inconsistent input files."""


class ParseError(IngestError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class DanglingImageId(IngestError):
    def __init__(self, detection_id: str, image_id: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"detection {detection_id!r} references unknown image {image_id!r}{where}")
        self.detection_id = detection_id


class NonUnitQuaternion(IngestError):
    def __init__(self, view_id: str, norm: float, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"view {view_id!r} quaternion norm {norm!r} differs from 1 by more than "
                         f"{QUATERNION_TOL}{where}")
        self.view_id = view_id


@dataclass
class Corpus:
    views: dict
    detections: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for d in self.detections.values():
            if d.image_id not in self.views:
                raise DanglingImageId(d.id, d.image_id)

    @classmethod
    def from_lists(cls, views, detections, **provenance) -> "Corpus":
        vmap, dmap = {}, {}
        for v in views:
            if v.id in vmap:
                raise IngestError(f"duplicate view id {v.id!r}")
            vmap[v.id] = v
        for d in detections:
            if d.id in dmap:
                raise IngestError(f"duplicate detection id {d.id!r}")
            dmap[d.id] = d
        return cls(vmap, dmap, dict(provenance))

    def detections_by_image(self) -> dict:
        out: dict = {}
        for d in self.detections.values():
            out.setdefault(d.image_id, []).append(d)
        return out


def _read_jsonl(path):
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            yield lineno, rec


def _number(rec, key, path, lineno) -> float:
    if key not in rec:
        raise ParseError(path, lineno, f"missing field {key!r}")
    val = rec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ParseError(path, lineno, f"field {key!r} must be a finite number")
    return float(val)


def _vector(rec, key, n, path, lineno) -> tuple:
    val = rec.get(key)
    if not isinstance(val, list) or len(val) != n:
        raise ParseError(path, lineno, f"field {key!r} must be a list of {n} numbers")
    return tuple(_number({key: t}, key, path, lineno) for t in val)


def _string(rec, key, path, lineno) -> str:
    val = rec.get(key)
    if not isinstance(val, str) or not val:
        raise ParseError(path, lineno, f"field {key!r} must be a non-empty string")
    return val


def read_views(path) -> list:
    views, seen = [], set()
    for lineno, rec in _read_jsonl(path):
        vid = _string(rec, "id", path, lineno)
        if vid in seen:
            raise ParseError(path, lineno, f"duplicate view id {vid!r}")
        seen.add(vid)
        q = _vector(rec, "q", 4, path, lineno)
        c = _vector(rec, "c", 3, path, lineno)
        norm = math.sqrt(sum(t * t for t in q))
        if abs(norm - 1.0) > QUATERNION_TOL:
            raise NonUnitQuaternion(vid, norm, lineno)
        q = tuple(t / norm for t in q)
        try:
            intr = CameraIntrinsics(*(_number(rec, k, path, lineno)
                                      for k in ("fx", "fy", "cx", "cy", "width", "height")))
            pose = Pose(q, c)
        except ValueError as exc:
            if isinstance(exc, IngestError):
                raise
            raise ParseError(path, lineno, str(exc)) from None
        pass_id = rec.get("pass_id", "")
        views.append(CameraView(vid, pose, intr, str(pass_id) if pass_id is not None else ""))
    return views


def read_detections(path) -> list:
    dets, seen = [], set()
    for lineno, rec in _read_jsonl(path):
        did = _string(rec, "id", path, lineno)
        if did in seen:
            raise ParseError(path, lineno, f"duplicate detection id {did!r}")
        seen.add(did)
        image_id = _string(rec, "image_id", path, lineno)
        u = _number(rec, "u", path, lineno)
        v = _number(rec, "v", path, lineno)
        score = rec.get("score")
        if score is not None:
            score = _number(rec, "score", path, lineno)
        dets.append((lineno, Detection(did, image_id, PixelPoint(u, v), score)))
    return dets


def ingest(views_path, detections_path) -> Corpus:
    """Read and validate the views and detections JSON Lines files.

    Raises FileNotFoundError, ParseError, DanglingImageId or NonUnitQuaternion.
    """
    for p in (views_path, detections_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    views = read_views(views_path)
    ids = {v.id for v in views}
    numbered = read_detections(detections_path)
    for lineno, d in numbered:
        if d.image_id not in ids:
            raise DanglingImageId(d.id, d.image_id, lineno)
    return Corpus.from_lists(
        views, [d for _, d in numbered],
        views_path=str(views_path), detections_path=str(detections_path),
        n_views=len(views), n_detections=len(numbered),
    )


def write_views(views, path) -> None:
    with Path(path).open("w") as fh:
        for v in views:
            i = v.intrinsics
            rec = {"id": v.id, "pass_id": v.pass_id, "q": list(v.pose.rotation), "c": list(v.pose.center),
                   "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "width": i.width, "height": i.height}
            fh.write(json.dumps(rec) + "\n")


def write_detections(detections, path) -> None:
    with Path(path).open("w") as fh:
        for d in detections:
            rec = {"id": d.id, "image_id": d.image_id, "u": float(d.center[0]), "v": float(d.center[1]),
                   "score": d.score}
            fh.write(json.dumps(rec) + "\n")


def object_record(o: ObjectEstimate) -> dict:
    return {
        "id": o.id,
        "x": o.position[0],
        "y": o.position[1],
        "z": o.position[2],
        "n_support": len(o.support),
        "rms_px": o.rms_px,
        "cluster_ids": list(o.cluster_ids),
        "support": list(o.support),
    }


def write_objects(objects, path) -> None:
    with Path(path).open("w") as fh:
        for o in objects:
            fh.write(json.dumps(object_record(o)) + "\n")


def read_objects(path) -> list:
    out = []
    for lineno, rec in _read_jsonl(path):
        out.append(
            ObjectEstimate(
                id=_string(rec, "id", path, lineno),
                position=tuple(_number(rec, k, path, lineno) for k in ("x", "y", "z")),
                support=tuple(rec.get("support", ())),
                rms_px=_number(rec, "rms_px", path, lineno),
                cluster_ids=tuple(rec.get("cluster_ids", ())),
            )
        )
    return out


@dataclass
class ClusterResult:
    cluster_id: str
    n_images: int
    n_detections: int
    n_hypotheses: int
    n_accepted: int
    iterations: int
    wall_time: float
    objects: list = field(repr=False, default_factory=list)


@dataclass
class PipelineReport:
    objects: list
    clusters: list
    totals: dict
    config: dict
    seed: int | None = None

    def to_dict(self, timing: bool = False) -> dict:
        clusters = []
        for c in self.clusters:
            rec = {k: v for k, v in asdict(c).items() if k != "objects"}
            if not timing:
                rec.pop("wall_time")
            clusters.append(rec)
        out = {
            "totals": self.totals,
            "config": self.config,
            "seed": self.seed,
            "clusters": clusters,
            "objects": [object_record(o) for o in self.objects],
        }
        return out

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=1, sort_keys=True)


def _solve_job(cluster_id, views, detections, cfg) -> ClusterResult:
    t0 = time.perf_counter()
    stats = SolveStats()
    objects = solve_cluster(views, detections, cfg, cluster_id=cluster_id, stats=stats)
    return ClusterResult(cluster_id, len(views), len(detections), stats.n_hypotheses,
                         stats.n_accepted, stats.iterations, time.perf_counter() - t0, objects)


def _config_echo(solve_cfg: SolveConfig, cluster_cfg: ClusterConfig) -> dict:
    return {"solve": asdict(solve_cfg), "cluster": asdict(cluster_cfg)}


def run(corpus: Corpus, solve_cfg: SolveConfig, cluster_cfg: ClusterConfig, threads: int = 1,
        seed: int | None = None, executor: str = "process") -> PipelineReport:
    """Cluster, solve every cluster (optionally in parallel), concatenate in
    cluster id order and merge duplicates. Output does not depend on
    ``threads``.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    views = list(corpus.views.values())
    totals = {"images": len(views), "detections": len(corpus.detections), "clusters": 0,
              "merges": 0, "objects": 0}
    echo = _config_echo(solve_cfg, cluster_cfg)
    if not views:
        return PipelineReport([], [], totals, echo, seed)

    clusters = cluster_images(views, cluster_cfg)
    by_image = corpus.detections_by_image()
    jobs = []
    for c in clusters:
        cv = [corpus.views[i] for i in sorted(c.image_ids)]
        cd = [d for i in sorted(c.image_ids) for d in by_image.get(i, ())]
        jobs.append((c.id, cv, cd, solve_cfg))

    results = _execute(jobs, threads, executor)
    candidates = [o for r in results for o in r.objects]
    diag: dict = {}
    objects = merge_objects(candidates, corpus.detections, corpus.views, cluster_cfg, diag,
                            solve_cfg=solve_cfg)
    totals.update(clusters=len(clusters), merges=diag.get("merges", 0), objects=len(objects),
                  candidates=len(candidates), support_conflicts=diag.get("conflicts", 0))
    return PipelineReport(objects, results, totals, echo, seed)


def _execute(jobs, threads: int, executor: str) -> list:
    if threads == 1 or len(jobs) <= 1:
        return [_solve_job(*j) for j in jobs]
    pool_cls = ProcessPoolExecutor if executor == "process" else ThreadPoolExecutor
    with pool_cls(max_workers=threads) as pool:
        futures = [pool.submit(_solve_job, *j) for j in jobs]
        # reduce in submission (cluster id) order regardless of completion order
        return [f.result() for f in futures]


__all__ = [
    "ClusterResult", "Corpus", "DanglingImageId", "IngestError", "NonUnitQuaternion", "ParseError",
    "PipelineReport", "ingest", "read_detections", "read_objects", "read_views", "run",
    "write_detections", "write_objects", "write_views",
]
