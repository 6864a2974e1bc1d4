from __future__ import annotations

import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from votri import eval as evaluation
from votri import synth
from votri.clustering import ClusterConfig
from votri.eval import MatchResult, PassesCurve, PassRow, emit_report, load_report, match
from votri.synth import GroundTruth
from votri.voting import ObjectEstimate, SolveConfig


def _gt(positions, recoverable=None):
    n = len(positions)
    rec = [True] * n if recoverable is None else [bool(r) for r in recoverable]
    return GroundTruth(ids=[f"g{i}" for i in range(n)], positions=[tuple(p) for p in positions],
                       facing=[None] * n, recoverable=rec, labels={})


def _preds(positions, rms=1.0):
    return [ObjectEstimate(f"p{i}", tuple(p), (), rms) for i, p in enumerate(positions)]


def test_exact_predictions():
    pts = [(0, 0, 0), (10, 0, 0), (0, 10, 0)]
    r = match(_preds(pts), _gt(pts))
    assert (r.true_positives, r.false_positives, r.false_negatives, r.duplicates) == (3, 0, 0, 0)


def test_duplicate_near_one_object():
    r = match(_preds([(0.1, 0, 0), (0.4, 0, 0)]), _gt([(0, 0, 0)]))
    assert (r.true_positives, r.duplicates, r.false_positives, r.false_negatives) == (1, 1, 0, 0)
    assert r.matches[0][0] == "p0"


def test_non_recoverable_ground_truth_is_ignored():
    r = match(_preds([(0, 0, 0)]), _gt([(0, 0, 0), (20, 0, 0)], recoverable=[False, True]))
    assert (r.true_positives, r.false_positives, r.false_negatives) == (0, 1, 1)


def test_threshold_is_strict():
    assert match(_preds([(2.0, 0, 0)]), _gt([(0, 0, 0)])).true_positives == 0
    with pytest.raises(ValueError):
        match([], _gt([]), match_dist=0)


def _optimal_tp(pred, gt, dist):
    """Maximum cardinality assignment under the threshold, by exhaustive permutation."""
    n, m = len(pred), len(gt)
    best = 0
    small, large = (pred, gt) if n <= m else (gt, pred)
    for perm in itertools.permutations(range(len(large)), len(small)):
        best = max(best, sum(math.dist(small[i], large[j]) < dist for i, j in enumerate(perm)))
    return best


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_greedy_matches_optimal_assignment(seed):
    rng = np.random.default_rng(seed)
    n_gt = int(rng.integers(0, 7))
    # ground truth on a coarse grid: every prediction is near at most one object
    cells = rng.choice(16, size=n_gt, replace=False)
    gt = [(10.0 * (c % 4), 10.0 * (c // 4), 0.0) for c in cells]
    pred = []
    for g in gt:
        for _ in range(int(rng.integers(0, 3))):
            pred.append(tuple(np.asarray(g) + rng.uniform(-2.5, 2.5, size=3)))
    for _ in range(int(rng.integers(0, 3))):
        pred.append(tuple(rng.uniform(0, 40, size=3)))
    pred = pred[:6]
    r = match(_preds(pred), _gt(gt))
    assert r.true_positives == _optimal_tp(pred, gt, 2.0)
    assert r.true_positives + r.duplicates + r.false_positives == len(pred)
    assert r.true_positives + r.false_negatives == len(gt)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_conservation_and_relabel_invariance(seed):
    rng = np.random.default_rng(seed)
    gt_pos = rng.uniform(0, 10, size=(int(rng.integers(0, 8)), 3))
    rec = rng.random(len(gt_pos)) < 0.7
    pred_pos = rng.uniform(0, 10, size=(int(rng.integers(0, 10)), 3))
    gt = _gt(gt_pos, rec)
    preds = _preds(pred_pos)
    r = match(preds, gt)
    assert r.true_positives + r.duplicates + r.false_positives == len(preds)
    assert r.true_positives + r.false_negatives == int(rec.sum())
    relabelled = [ObjectEstimate(f"z{len(preds) - i}", p.position, (), p.rms_px) for i, p in enumerate(preds)]
    s = match(relabelled, gt)
    assert (s.true_positives, s.false_positives, s.false_negatives, s.duplicates) == \
        (r.true_positives, r.false_positives, r.false_negatives, r.duplicates)


def test_mean_rms_over_true_positives():
    preds = [ObjectEstimate("a", (0, 0, 0), (), 2.0), ObjectEstimate("b", (50, 0, 0), (), 9.0)]
    assert match(preds, _gt([(0, 0, 0)])).mean_rms_px == 2.0


def _curve():
    rows = [PassRow(k, 0.5 + 0.1 * k, 0.9, 1.0, 3.0 - 0.2 * k, 1.0, 2.0, 3.0, 10 * k) for k in (1, 2, 3)]
    return PassesCurve(rows, [0, 1], [{"seed": 0, "k": 1, "recall": 0.6}])


def test_match_report_csv_and_json(tmp_path):
    r = match(_preds([(0, 0, 0), (0.5, 0, 0)]), _gt([(0, 0, 0), (9, 9, 9)]))
    csv_path, json_path = emit_report(r, tmp_path / "m.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "tp,fp,fn,duplicates,mean_rms_px"
    assert lines[1] == "1,0,1,1,1.0"
    assert load_report(json_path) == r


def test_curve_report_one_row_per_k(tmp_path):
    c = _curve()
    csv_path, json_path = emit_report(c, tmp_path / "curve")
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in rows] == [1, 2, 3]
    assert tuple(rows[0]) == evaluation.CURVE_CSV_FIELDS
    assert load_report(json_path) == c


def test_emit_rejects_unknown(tmp_path):
    with pytest.raises(TypeError):
        emit_report({"tp": 1}, tmp_path / "x.csv")


def test_curve_requires_increasing_k():
    with pytest.raises(ValueError):
        PassesCurve([PassRow(2, *[0.0] * 7, 0), PassRow(1, *[0.0] * 7, 0)], [0])


def test_noiseless_passes_experiment():
    scene = synth.SceneSpec(n_objects=10, area=(100.0, 100.0))
    det = synth.DetectorSpec(recall=1.0, pixel_sigma=0.0)
    curve = evaluation.passes_experiment(scene, det, SolveConfig(min_votes=2), ClusterConfig(),
                                         max_passes=3, seeds=[0, 1])
    assert [r.k for r in curve.rows] == [1, 2, 3]
    for r in curve.rows[1:]:
        assert r.recall_k == 1.0
        assert r.n_loo > 0 and r.loo_mean < 0.1
    assert curve.rows[-1].recall == 1.0
    # a single pass sees most objects from one side only
    assert curve.rows[0].recall < curve.rows[-1].recall
    assert all(r.fp == 0 for r in curve.rows)


def test_passes_experiment_validation():
    with pytest.raises(ValueError):
        evaluation.passes_experiment(synth.SceneSpec(), synth.DetectorSpec(), SolveConfig(),
                                     ClusterConfig(), max_passes=1, seeds=[0])
    with pytest.raises(ValueError):
        evaluation.passes_experiment(synth.SceneSpec(), synth.DetectorSpec(), SolveConfig(),
                                     ClusterConfig(), max_passes=3, seeds=[])


def test_match_result_counts():
    r = MatchResult(3, 1, 2, 1)
    assert r.n_predicted == 5
