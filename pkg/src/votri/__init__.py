"""Voting-based multi-view triangulation of unlabeled object detections."""

from ._backend import BACKEND
from .clustering import Cluster, ClusterConfig, cluster_images, merge_objects
from .geometry import (
    CameraIntrinsics,
    CameraView,
    GeometryError,
    PixelPoint,
    Pose,
    WorldPoint,
    project,
    refine_multiview,
    triangulate_two_view,
)
from .pipeline import Corpus, PipelineReport, ingest, run
from .voting import Detection, Hypothesis, ObjectEstimate, SolveConfig, solve_cluster

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CameraIntrinsics", "CameraView", "Cluster", "ClusterConfig", "Corpus", "Detection",
    "GeometryError", "Hypothesis", "ObjectEstimate", "PipelineReport", "PixelPoint", "Pose",
    "SolveConfig", "WorldPoint", "cluster_images", "ingest", "merge_objects", "project",
    "refine_multiview", "run", "solve_cluster", "triangulate_two_view",
]
