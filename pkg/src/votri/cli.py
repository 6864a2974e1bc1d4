"""Command line entry point: ``solve``, ``synth``, ``eval`` and ``experiment passes``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import eval as evaluation
from . import pipeline, synth
from .clustering import ClusterConfig
from .pipeline import IngestError
from .voting import SolveConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

log = logging.getLogger("votri")


def _solver_flags(ap: argparse.ArgumentParser) -> None:
    d = SolveConfig()
    c = ClusterConfig()
    ap.add_argument("--d-max", type=float, default=d.d_max, help="inlier radius in pixels")
    ap.add_argument("--alpha", type=float, default=d.alpha, help="minimum ratio of votes to the mean")
    ap.add_argument("--min-votes", type=int, default=d.min_votes, help="minimum votes of an accepted object")
    ap.add_argument("--theta-min-deg", type=float, default=math.degrees(d.theta_min),
                    help="minimum triangulation angle in degrees")
    ap.add_argument("--r-max", type=float, default=d.r_max, help="maximum camera distance in meters")
    ap.add_argument("--depth-min", type=float, default=d.depth_min)
    ap.add_argument("--depth-max", type=float, default=d.depth_max)
    ap.add_argument("--angle-mode", choices=("rays", "optical_axes"), default=d.angle_mode)
    ap.add_argument("--mean-mode", choices=("recompute", "frozen"), default=d.mean_mode)
    ap.add_argument("--n-max", type=float, default=c.n_max, help="cluster radius in meters")
    ap.add_argument("--merge-dist", type=float, default=c.merge_dist, help="object merge distance in meters")


def _scene_flags(ap: argparse.ArgumentParser) -> None:
    s = synth.SceneSpec()
    d = synth.DetectorSpec()
    ap.add_argument("--objects", type=int, default=s.n_objects)
    ap.add_argument("--area", type=float, nargs=2, default=list(s.area), metavar=("W", "H"))
    ap.add_argument("--images-per-pass", type=int, default=s.images_per_pass)
    ap.add_argument("--spacing", type=float, default=s.camera_speed_spacing, help="meters between frames")
    ap.add_argument("--street-spacing", type=float, default=s.street_spacing)
    ap.add_argument("--recall", type=float, default=d.recall)
    ap.add_argument("--pixel-sigma", type=float, default=d.pixel_sigma)
    ap.add_argument("--fp-per-image", type=float, default=d.fp_per_image)
    ap.add_argument("--fp-cluster-prob", type=float, default=d.fp_cluster_prob)


def _configs(args) -> tuple:
    solve = SolveConfig(
        d_max=args.d_max, alpha=args.alpha, theta_min=math.radians(args.theta_min_deg),
        r_max=args.r_max, depth_min=args.depth_min, depth_max=args.depth_max,
        angle_mode=args.angle_mode, mean_mode=args.mean_mode, min_votes=args.min_votes,
    )
    return solve, ClusterConfig(n_max=args.n_max, merge_dist=args.merge_dist)


def _specs(args, seed: int, passes: int) -> tuple:
    scene = synth.SceneSpec(
        n_objects=args.objects, area=tuple(args.area), n_passes=passes,
        images_per_pass=args.images_per_pass, camera_speed_spacing=args.spacing,
        street_spacing=args.street_spacing, rng_seed=seed,
    )
    det = synth.DetectorSpec(recall=args.recall, pixel_sigma=args.pixel_sigma,
                             fp_per_image=args.fp_per_image, fp_cluster_prob=args.fp_cluster_prob)
    return scene, det


def cmd_solve(args) -> int:
    solve_cfg, cluster_cfg = _configs(args)
    corpus = pipeline.ingest(args.views, args.detections)
    report = pipeline.run(corpus, solve_cfg, cluster_cfg, threads=args.threads, seed=args.seed)
    pipeline.write_objects(report.objects, args.out)
    if args.report:
        Path(args.report).write_text(report.to_json(timing=args.timing) + "\n")
    log.info("%d objects from %d clusters", len(report.objects), report.totals["clusters"])
    return EXIT_OK


def cmd_synth(args) -> int:
    solve_cfg, _ = _configs(args)
    scene, det = _specs(args, args.seed, args.passes)
    corpus, gt = synth.generate(scene, det, solve_cfg)
    pipeline.write_views(corpus.views.values(), args.out_views)
    pipeline.write_detections(corpus.detections.values(), args.out_detections)
    synth.write_ground_truth(gt, args.out_gt)
    log.info("%d views, %d detections, %d/%d recoverable objects", len(corpus.views),
             len(corpus.detections), sum(gt.recoverable), len(gt.ids))
    return EXIT_OK


def cmd_eval(args) -> int:
    objects = pipeline.read_objects(args.objects)
    gt = synth.read_ground_truth(args.gt)
    result = evaluation.match(objects, gt, args.match_dist)
    evaluation.emit_report(result, args.out)
    print(f"tp={result.true_positives} fp={result.false_positives} fn={result.false_negatives} "
          f"duplicates={result.duplicates} mean_rms_px={result.mean_rms_px:.3f}")
    return EXIT_OK


def cmd_experiment_passes(args) -> int:
    solve_cfg, cluster_cfg = _configs(args)
    scene, det = _specs(args, 0, args.max_passes + 1)
    seeds = range(args.first_seed, args.first_seed + args.seed_count)
    curve = evaluation.passes_experiment(scene, det, solve_cfg, cluster_cfg, args.max_passes, seeds,
                                         match_dist=args.match_dist, threads=args.threads)
    evaluation.emit_report(curve, args.out)
    for r in curve.rows:
        print(f"k={r.k} recall={r.recall:.3f} fp={r.fp:.2f} loo_mean={r.loo_mean:.3f}px")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="votri", description="Voting-based multi-view object triangulation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="triangulate objects from views and detections")
    p.add_argument("--views", required=True, type=Path)
    p.add_argument("--detections", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="echoed in the report")
    p.add_argument("--report", type=Path, default=None, help="write a JSON run report")
    p.add_argument("--timing", action="store_true", help="include wall times in the report")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--passes", type=int, default=synth.SceneSpec().n_passes)
    p.add_argument("--out-views", required=True, type=Path)
    p.add_argument("--out-detections", required=True, type=Path)
    p.add_argument("--out-gt", required=True, type=Path)
    _scene_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="match objects against ground truth")
    p.add_argument("--objects", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--match-dist", type=float, default=2.0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run an experiment")
    exp = p.add_subparsers(dest="experiment", required=True)
    q = exp.add_parser("passes", help="recall and leave-one-out error versus number of passes")
    q.add_argument("--seed-count", type=int, default=20)
    q.add_argument("--first-seed", type=int, default=0)
    q.add_argument("--max-passes", type=int, default=5)
    q.add_argument("--match-dist", type=float, default=2.0)
    q.add_argument("--threads", type=int, default=1)
    q.add_argument("--out", required=True, type=Path)
    _scene_flags(q)
    _solver_flags(q)
    q.set_defaults(func=cmd_experiment_passes)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IngestError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # invalid flag values surface as config validation errors
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
