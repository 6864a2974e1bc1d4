"""Ground-truth matching, the passes experiment and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .clustering import ClusterConfig
from .geometry import GeometryError
from .pipeline import run
from .synth import DetectorSpec, GroundTruth, SceneSpec, generate, restrict_passes
from .voting import SolveConfig

MATCH_CSV_FIELDS = ("tp", "fp", "fn", "duplicates", "mean_rms_px")
CURVE_CSV_FIELDS = ("k", "recall", "recall_k", "fp", "loo_mean", "loo_q25", "loo_median",
                    "loo_q75", "n_loo")


@dataclass
class MatchResult:
    true_positives: int
    false_positives: int
    false_negatives: int
    duplicates: int
    matches: list = field(default_factory=list)
    mean_rms_px: float = float("nan")

    @property
    def n_predicted(self) -> int:
        return self.true_positives + self.duplicates + self.false_positives

    def csv_row(self) -> dict:
        return dict(zip(MATCH_CSV_FIELDS, (self.true_positives, self.false_positives,
                                           self.false_negatives, self.duplicates, self.mean_rms_px)))


@dataclass
class PassRow:
    k: int
    recall: float
    recall_k: float
    fp: float
    loo_mean: float
    loo_q25: float
    loo_median: float
    loo_q75: float
    n_loo: int

    def csv_row(self) -> dict:
        return {f: getattr(self, f) for f in CURVE_CSV_FIELDS}


@dataclass
class PassesCurve:
    rows: list
    seeds: list
    per_seed: list = field(default_factory=list)

    def __post_init__(self):
        ks = [r.k for r in self.rows]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("pass counts must be strictly increasing")

    @property
    def recall(self) -> list:
        return [r.recall for r in self.rows]

    @property
    def loo_mean(self) -> list:
        return [r.loo_mean for r in self.rows]


def match(predicted, gt: GroundTruth, match_dist: float = 2.0) -> MatchResult:
    """Greedy globally-closest matching of predictions to recoverable objects.

    Pairs closer than ``match_dist`` are taken in order of increasing
    distance; each recoverable object takes at most one prediction as a true
    positive. Unmatched predictions within ``match_dist`` of a matched object
    are duplicates, the rest false positives.
    """
    if not match_dist > 0:
        raise ValueError("match_dist must be positive")
    preds = list(predicted)
    rec = [j for j, r in enumerate(gt.recoverable) if r]
    gpos = np.array([gt.positions[j] for j in rec]).reshape(-1, 3)
    ppos = np.array([p.position for p in preds]).reshape(-1, 3)
    dist = np.linalg.norm(ppos[:, None, :] - gpos[None, :, :], axis=2) if len(rec) and preds else \
        np.zeros((len(preds), len(rec)))
    pairs = sorted((float(dist[i, j]), i, j) for i, j in zip(*np.nonzero(dist < match_dist)))
    used_p: set = set()
    used_g: set = set()
    matches = []
    for d, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((preds[i].id, gt.ids[rec[j]], d))
    dup = 0
    for i in range(len(preds)):
        if i in used_p:
            continue
        if any(dist[i, j] < match_dist for j in used_g):
            dup += 1
    tp = len(matches)
    rms = [p.rms_px for i, p in enumerate(preds) if i in used_p]
    return MatchResult(
        true_positives=tp,
        false_positives=len(preds) - tp - dup,
        false_negatives=len(rec) - tp,
        duplicates=dup,
        matches=matches,
        mean_rms_px=float(np.mean(rms)) if rms else float("nan"),
    )


def leave_one_out_errors(objects, matches, corpus, gt: GroundTruth, pass_id: str) -> list:
    """Pixel distance between each matched object's projection and its own true
    detection in every image of the held-out pass."""
    by_id = {o.id: o for o in objects}
    owner = {m[0]: m[1] for m in matches}
    wanted: dict = {}
    for did, label in gt.labels.items():
        if label is None:
            continue
        d = corpus.detections.get(did)
        if d is None or corpus.views[d.image_id].pass_id != pass_id:
            continue
        wanted.setdefault(label, []).append(d)
    errors = []
    for oid, gid in owner.items():
        pos = by_id[oid].position
        for d in wanted.get(gid, ()):
            view = corpus.views[d.image_id]
            try:
                u, v = geometry.project(pos, view.pose, view.intrinsics)
            except GeometryError:
                continue
            errors.append(math.hypot(u - d.center[0], v - d.center[1]))
    return errors


def _stats(values) -> tuple:
    if not values:
        nan = float("nan")
        return nan, nan, nan, nan
    a = np.asarray(values)
    q25, q50, q75 = np.percentile(a, [25, 50, 75])
    return float(a.mean()), float(q25), float(q50), float(q75)


def passes_experiment(scene: SceneSpec, det: DetectorSpec, solve_cfg: SolveConfig,
                      cluster_cfg: ClusterConfig, max_passes: int, seeds, match_dist: float = 2.0,
                      threads: int = 1) -> PassesCurve:
    """Recall, false positives and leave-one-out reprojection error versus passes.

    Each seed generates ``max_passes + 1`` passes; the last one is held out
    and only used to measure reprojection error. Recall at every ``k`` is
    measured against the objects recoverable from all ``max_passes`` passes
    (``recall_k`` against those recoverable from the first ``k``).
    """
    if max_passes < 2:
        raise ValueError("max_passes must be >= 2")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    pass_ids = [f"p{p:02d}" for p in range(max_passes + 1)]
    held_out = pass_ids[-1]
    acc = {k: {"recall": [], "recall_k": [], "fp": [], "loo": []} for k in range(1, max_passes + 1)}
    per_seed = []
    for seed in seeds:
        full_scene = replace(scene, n_passes=max_passes + 1, rng_seed=seed)
        corpus, gt = generate(full_scene, det, solve_cfg)
        _, ref_gt = restrict_passes(corpus, gt, pass_ids[:-1], solve_cfg.theta_min)
        n_ref = sum(ref_gt.recoverable)
        for k in range(1, max_passes + 1):
            sub, sub_gt = restrict_passes(corpus, gt, pass_ids[:k], solve_cfg.theta_min)
            report = run(sub, solve_cfg, cluster_cfg, threads=threads, seed=seed)
            m = match(report.objects, ref_gt, match_dist)
            mk = match(report.objects, sub_gt, match_dist)
            n_k = sum(sub_gt.recoverable)
            recall = m.true_positives / n_ref if n_ref else 1.0
            recall_k = mk.true_positives / n_k if n_k else 1.0
            loo = leave_one_out_errors(report.objects, m.matches, corpus, gt, held_out)
            acc[k]["recall"].append(recall)
            acc[k]["recall_k"].append(recall_k)
            acc[k]["fp"].append(m.false_positives)
            acc[k]["loo"].extend(loo)
            per_seed.append({"seed": seed, "k": k, "recall": recall, "recall_k": recall_k,
                             "tp": m.true_positives, "fp": m.false_positives,
                             "duplicates": m.duplicates, "n_recoverable": n_ref,
                             "loo_mean": _stats(loo)[0], "n_loo": len(loo)})
    rows = []
    for k in range(1, max_passes + 1):
        a = acc[k]
        mean, q25, q50, q75 = _stats(a["loo"])
        rows.append(PassRow(k, float(np.mean(a["recall"])), float(np.mean(a["recall_k"])),
                            float(np.mean(a["fp"])), mean, q25, q50, q75, len(a["loo"])))
    return PassesCurve(rows, seeds, per_seed)


def emit_report(result, path) -> tuple:
    """Write ``result`` as CSV (header row names the columns) and a JSON mirror.

    Returns the ``(csv_path, json_path)`` written.
    """
    path = Path(path)
    csv_path = path if path.suffix == ".csv" else path.with_suffix(".csv")
    json_path = csv_path.with_suffix(".json")
    if isinstance(result, MatchResult):
        fields, rows = MATCH_CSV_FIELDS, [result.csv_row()]
        payload = {"kind": "match", **asdict(result)}
    elif isinstance(result, PassesCurve):
        fields, rows = CURVE_CSV_FIELDS, [r.csv_row() for r in result.rows]
        payload = {"kind": "passes", **asdict(result)}
    else:
        raise TypeError(f"cannot emit {type(result).__name__}")
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    json_path.write_text(json.dumps(payload, indent=1))
    return csv_path, json_path


def load_report(path):
    """Inverse of the JSON side of :func:`emit_report`."""
    data = json.loads(Path(path).read_text())
    kind = data.pop("kind")
    if kind == "match":
        data["matches"] = [tuple(m) for m in data["matches"]]
        return MatchResult(**data)
    data["rows"] = [PassRow(**r) for r in data["rows"]]
    return PassesCurve(**data)
