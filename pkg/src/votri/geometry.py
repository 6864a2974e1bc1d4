"""Pinhole cameras, SE(3) poses, projection and reprojection-error triangulation.

Pose convention: ``rotation`` is the camera-to-world unit quaternion
``(w, x, y, z)`` and ``center`` the camera position in the world frame, so a
world point ``l`` has camera coordinates ``R.T @ (l - c)`` and the optical
axis in the world frame is ``R @ (0, 0, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from ._backend import kernels

DEPTH_EPS = 1e-6
MAX_ITER = 100


class GeometryError(ValueError):
    """Base class for geometric failures."""


class BehindCamera(GeometryError):
    pass


class DegenerateRays(GeometryError):
    pass


class DegeneratePoint(GeometryError):
    pass


class InsufficientObservations(GeometryError):
    pass


class NonFinite(GeometryError):
    pass


class PixelPoint(NamedTuple):
    u: float
    v: float


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    def as_row(self) -> tuple:
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rotation (unit quaternion w, x, y, z) and world camera center."""

    rotation: tuple
    center: tuple

    def __post_init__(self):
        q = tuple(float(t) for t in self.rotation)
        c = tuple(float(t) for t in self.center)
        if len(q) != 4 or len(c) != 3:
            raise ValueError("rotation needs 4 components, center 3")
        norm = math.sqrt(sum(t * t for t in q))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm!r} is not within 1e-9 of 1")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "center", c)

    @classmethod
    def from_matrix(cls, R, center) -> "Pose":
        """Build a pose from a 3x3 camera-to-world rotation matrix."""
        return cls(quaternion_from_matrix(np.asarray(R, dtype=np.float64)), tuple(center))

    @cached_property
    def matrix(self) -> np.ndarray:
        """Camera-to-world rotation as a 3x3 array."""
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    @property
    def optical_axis(self) -> np.ndarray:
        return self.matrix[:, 2].copy()


def quaternion_from_matrix(R: np.ndarray) -> tuple:
    """Unit quaternion (w, x, y, z) with non-negative w for rotation matrix R."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    n = math.sqrt(sum(t * t for t in q))
    q = tuple(t / n for t in q)
    if q[0] < 0:
        q = tuple(-t for t in q)
    return q


class CameraTable:
    """Packed camera arrays consumed by the numerical kernels.

    Row ``i`` holds camera ``i``: ``R`` (n, 9) row-major rotation, ``C`` (n, 3)
    center and ``K`` (n, 6) ``fx, fy, cx, cy, width, height``.
    """

    def __init__(self, cameras: Sequence[tuple]):
        n = len(cameras)
        self.R = np.zeros((n, 9))
        self.C = np.zeros((n, 3))
        self.K = np.ones((n, 6))
        for i, (pose, intr) in enumerate(cameras):
            self.R[i] = pose.matrix.reshape(9)
            self.C[i] = pose.center
            self.K[i] = intr.as_row()

    def __len__(self) -> int:
        return len(self.C)

    @property
    def arrays(self) -> tuple:
        return self.R, self.C, self.K


def project(l, p: Pose, q: CameraIntrinsics) -> PixelPoint:
    """Project world point ``l`` into the camera; raises BehindCamera at depth <= 1e-6 m."""
    table = CameraTable([(p, q)])
    uv, z = kernels.project_points(np.asarray(l, dtype=np.float64), np.zeros(1, dtype=np.int64), *table.arrays)
    if not z[0] > DEPTH_EPS:
        raise BehindCamera(f"point has depth {z[0]:.3g} m")
    return PixelPoint(float(uv[0, 0]), float(uv[0, 1]))


def depth(l, p: Pose) -> float:
    """Camera-frame depth of ``l`` (same arithmetic as the kernels)."""
    R = p.matrix.reshape(9)
    dx = float(l[0]) - p.center[0]
    dy = float(l[1]) - p.center[1]
    dz = float(l[2]) - p.center[2]
    return R[2] * dx + R[5] * dy + R[8] * dz


def residual_jacobian(l, p: Pose, q: CameraIntrinsics) -> np.ndarray:
    """Analytic 2x3 derivative of the projected pixel with respect to ``l``."""
    table = CameraTable([(p, q)])
    return kernels.residual_jacobian(np.asarray(l, dtype=np.float64), 0, *table.arrays)


def triangulate_two_view(z_a, view_a: tuple, z_b, view_b: tuple) -> WorldPoint:
    """Two-view point minimizing the summed squared reprojection error.

    Initialised at the midpoint of the closest approach of the two
    back-projected rays, then refined with damped Gauss-Newton.
    """
    table = CameraTable([view_a, view_b])
    pts, status = kernels.triangulate_pairs(
        np.asarray(z_a, dtype=np.float64), np.zeros(1, dtype=np.int64),
        np.asarray(z_b, dtype=np.float64), np.ones(1, dtype=np.int64),
        *table.arrays, MAX_ITER,
    )
    _raise_for_status(int(status[0]))
    return WorldPoint(*(float(t) for t in pts[0]))


def _raise_for_status(status: int) -> None:
    if status == kernels.STATUS_DEGENERATE:
        raise DegenerateRays("rays are parallel or camera centers coincide")
    if status == kernels.STATUS_BEHIND:
        raise BehindCamera("triangulated point is not in front of both cameras")
    if status == kernels.STATUS_NONFINITE:
        raise NonFinite("objective or step became non-finite")


def refine_multiview(l0, obs: Sequence[tuple], history: list | None = None):
    """Refine ``l0`` against observations ``(pixel, pose, intrinsics)``.

    Returns ``(WorldPoint, rms_px)``. When ``history`` is a list it receives
    the objective value after every accepted step, starting at ``l0``.
    """
    if len(obs) < 2:
        raise InsufficientObservations(f"need at least 2 observations, got {len(obs)}")
    table = CameraTable([(p, q) for _, p, q in obs])
    uv = np.array([[float(z[0]), float(z[1])] for z, _, _ in obs])
    cams = np.arange(len(obs), dtype=np.int64)
    return refine_arrays(np.asarray(l0, dtype=np.float64), uv, cams, table, history)


def refine_arrays(l0: np.ndarray, uv: np.ndarray, cams: np.ndarray, table: CameraTable,
                  history: list | None = None):
    """Array-level :func:`refine_multiview` over rows ``cams`` of ``table``."""
    if len(cams) < 2:
        raise InsufficientObservations(f"need at least 2 observations, got {len(cams)}")
    _, z0 = kernels.project_points(np.tile(l0, (len(cams), 1)), cams, *table.arrays)
    if int(np.sum(z0 > DEPTH_EPS)) < 2:
        raise InsufficientObservations("fewer than 2 observations have positive depth at l0")
    buf = np.zeros(MAX_ITER + 1)
    point, cost, n, nh, status = kernels.refine_point(l0, uv, cams, *table.arrays, MAX_ITER, buf)
    if status == kernels.STATUS_NONFINITE or not np.all(np.isfinite(point)):
        raise NonFinite("objective or step became non-finite")
    if history is not None:
        history.extend(float(t) for t in buf[:nh])
    rms = math.sqrt(cost / n) if n > 0 else float("nan")
    return WorldPoint(*(float(t) for t in point)), rms


def ray_angle(l, p_a: Pose, p_b: Pose) -> float:
    """Angle in radians between the viewing rays from both camera centers to ``l``."""
    va = np.asarray(l, dtype=np.float64) - np.asarray(p_a.center)
    vb = np.asarray(l, dtype=np.float64) - np.asarray(p_b.center)
    na = math.sqrt(float(va @ va))
    nb = math.sqrt(float(vb @ vb))
    if na <= 1e-6 or nb <= 1e-6:
        raise DegeneratePoint("point coincides with a camera center")
    # atan2 stays accurate near 0 and pi where acos loses half the digits
    return math.atan2(float(np.linalg.norm(np.cross(va, vb))), float(va @ vb))


def optical_axis_angle(p_a: Pose, p_b: Pose) -> float:
    """Angle in radians between the two cameras' optical axes."""
    cos = float(p_a.optical_axis @ p_b.optical_axis)
    return math.acos(min(1.0, max(-1.0, cos)))


@dataclass(frozen=True)
class CameraView:
    """A posed, calibrated image."""

    id: str
    pose: Pose
    intrinsics: CameraIntrinsics
    pass_id: str = ""

    @property
    def camera(self) -> tuple:
        return (self.pose, self.intrinsics)
