"""Pure-Python/numpy implementation of the numerical kernels.

This module mirrors ``_kernels.pyx`` operation for operation. Every
floating-point expression is written in the same order as the compiled
version so both backends produce bit-identical results; numpy is only used
for element-wise arithmetic and ``sqrt`` (both correctly rounded), never for
reductions or transcendental functions.

Camera tables are passed as three float64 arrays: ``R`` (M, 9) row-major
camera-to-world rotations, ``C`` (M, 3) camera centers and ``K`` (M, 6)
holding ``fx, fy, cx, cy, width, height``.
"""

from __future__ import annotations

import math

import numpy as np

DEPTH_EPS = 1e-6
STEP_TOL = 1e-9
DECREASE_TOL = 1e-12
LAMBDA_INIT = 1e-3
LAMBDA_MIN = 1e-15
PARALLEL_SIN2 = 1e-16  # (1e-8 rad)^2
BASELINE_MIN = 1e-6

STATUS_OK = 0
STATUS_DEGENERATE = 1
STATUS_BEHIND = 2
STATUS_NONFINITE = 3


def project_points(points, cams, R, C, K):
    """Project points (P, 3) into cameras ``cams`` (P,). Returns (uv, depth).

    Entries whose depth is not above ``DEPTH_EPS`` get NaN pixel coordinates.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cams = np.asarray(cams, dtype=np.int64)
    r, c, k = R[cams], C[cams], K[cams]
    u, v, z = _project(points[:, 0], points[:, 1], points[:, 2], r, c, k)
    ok = z > DEPTH_EPS
    uv = np.column_stack([np.where(ok, u, np.nan), np.where(ok, v, np.nan)])
    return uv, z


def residual_jacobian(point, cam, R, C, K):
    """Analytic 2x3 Jacobian of the projection of ``point`` into camera ``cam``."""
    px, py, pz = (float(t) for t in point)
    r = R[cam]
    c = C[cam]
    k = K[cam]
    dx = px - c[0]
    dy = py - c[1]
    dz = pz - c[2]
    x = r[0] * dx + r[3] * dy + r[6] * dz
    y = r[1] * dx + r[4] * dy + r[7] * dz
    z = r[2] * dx + r[5] * dy + r[8] * dz
    if not z > DEPTH_EPS:
        return np.full((2, 3), np.nan)
    au = k[0] / z
    bu = x / z
    av = k[1] / z
    bv = y / z
    return np.array(
        [
            [au * (r[0] - bu * r[2]), au * (r[3] - bu * r[5]), au * (r[6] - bu * r[8])],
            [av * (r[1] - bv * r[2]), av * (r[4] - bv * r[5]), av * (r[7] - bv * r[8])],
        ]
    )


def _project(px, py, pz, r, c, k):
    dx = px - c[..., 0]
    dy = py - c[..., 1]
    dz = pz - c[..., 2]
    x = r[..., 0] * dx + r[..., 3] * dy + r[..., 6] * dz
    y = r[..., 1] * dx + r[..., 4] * dy + r[..., 7] * dz
    z = r[..., 2] * dx + r[..., 5] * dy + r[..., 8] * dz
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k[..., 0] * x / z + k[..., 2]
        v = k[..., 1] * y / z + k[..., 3]
    return u, v, z


# --------------------------------------------------------------------------
# Single-point refinement (scalar)


def _cost1(px, py, pz, uv, cams, R, C, K):
    cost = 0.0
    n = 0
    for i in range(len(cams)):
        r = R[cams[i]]
        c = C[cams[i]]
        k = K[cams[i]]
        dx = px - c[0]
        dy = py - c[1]
        dz = pz - c[2]
        x = r[0] * dx + r[3] * dy + r[6] * dz
        y = r[1] * dx + r[4] * dy + r[7] * dz
        z = r[2] * dx + r[5] * dy + r[8] * dz
        if z > DEPTH_EPS:
            du = k[0] * x / z + k[2] - uv[i][0]
            dv = k[1] * y / z + k[3] - uv[i][1]
            cost += du * du + dv * dv
            n += 1
    return cost, n


def _normal1(px, py, pz, uv, cams, R, C, K):
    a00 = a01 = a02 = a11 = a12 = a22 = 0.0
    g0 = g1 = g2 = 0.0
    for i in range(len(cams)):
        r = R[cams[i]]
        c = C[cams[i]]
        k = K[cams[i]]
        dx = px - c[0]
        dy = py - c[1]
        dz = pz - c[2]
        x = r[0] * dx + r[3] * dy + r[6] * dz
        y = r[1] * dx + r[4] * dy + r[7] * dz
        z = r[2] * dx + r[5] * dy + r[8] * dz
        if z > DEPTH_EPS:
            du = k[0] * x / z + k[2] - uv[i][0]
            dv = k[1] * y / z + k[3] - uv[i][1]
            au = k[0] / z
            bu = x / z
            av = k[1] / z
            bv = y / z
            ju0 = au * (r[0] - bu * r[2])
            ju1 = au * (r[3] - bu * r[5])
            ju2 = au * (r[6] - bu * r[8])
            jv0 = av * (r[1] - bv * r[2])
            jv1 = av * (r[4] - bv * r[5])
            jv2 = av * (r[7] - bv * r[8])
            a00 += ju0 * ju0 + jv0 * jv0
            a01 += ju0 * ju1 + jv0 * jv1
            a02 += ju0 * ju2 + jv0 * jv2
            a11 += ju1 * ju1 + jv1 * jv1
            a12 += ju1 * ju2 + jv1 * jv2
            a22 += ju2 * ju2 + jv2 * jv2
            g0 += ju0 * du + jv0 * dv
            g1 += ju1 * du + jv1 * dv
            g2 += ju2 * du + jv2 * dv
    return a00, a01, a02, a11, a12, a22, g0, g1, g2


def _solve1(a00, a01, a02, a11, a12, a22, g0, g1, g2, lam):
    """Solve (A + lam*diag(A)) d = -g by Cholesky. Returns None if not SPD."""
    f = 1.0 + lam
    m00 = a00 * f
    m11 = a11 * f
    m22 = a22 * f
    if not m00 > 0.0:
        return None
    l00 = math.sqrt(m00)
    l10 = a01 / l00
    l20 = a02 / l00
    t = m11 - l10 * l10
    if not t > 0.0:
        return None
    l11 = math.sqrt(t)
    l21 = (a12 - l20 * l10) / l11
    t = m22 - l20 * l20 - l21 * l21
    if not t > 0.0:
        return None
    l22 = math.sqrt(t)
    y0 = -g0 / l00
    y1 = (-g1 - l10 * y0) / l11
    y2 = (-g2 - l20 * y0 - l21 * y1) / l22
    d2 = y2 / l22
    d1 = (y1 - l21 * d2) / l11
    d0 = (y0 - l10 * d1 - l20 * d2) / l00
    return d0, d1, d2


def refine_point(x0, uv, cams, R, C, K, max_iter, history):
    """Damped Gauss-Newton on the summed squared reprojection error.

    ``history`` is a float64 array of length ``max_iter + 1`` receiving the
    objective after every accepted step (entry 0 is the start).
    Returns ``(point, cost, n_valid, n_history, status)``.
    """
    px, py, pz = float(x0[0]), float(x0[1]), float(x0[2])
    uv = [(float(a), float(b)) for a, b in np.asarray(uv, dtype=np.float64)]
    cams = [int(i) for i in cams]
    # Python floats are far faster than numpy scalars in these loops.
    R, C, K = R.tolist(), C.tolist(), K.tolist()
    cost, n = _cost1(px, py, pz, uv, cams, R, C, K)
    history[0] = cost
    nh = 1
    status = STATUS_OK
    if not math.isfinite(cost):
        return np.array([px, py, pz]), cost, n, nh, STATUS_NONFINITE
    lam = LAMBDA_INIT
    for _ in range(max_iter):
        if n == 0:
            break
        a00, a01, a02, a11, a12, a22, g0, g1, g2 = _normal1(px, py, pz, uv, cams, R, C, K)
        d = _solve1(a00, a01, a02, a11, a12, a22, g0, g1, g2, lam)
        if d is None:
            lam = lam * 10.0
            continue
        d0, d1, d2 = d
        step = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if not math.isfinite(step):
            status = STATUS_NONFINITE
            break
        if step < STEP_TOL:
            break
        nx = px + d0
        ny = py + d1
        nz = pz + d2
        ncost, nn = _cost1(nx, ny, nz, uv, cams, R, C, K)
        if not math.isfinite(ncost):
            status = STATUS_NONFINITE
            break
        if nn >= n and ncost <= cost:
            dec = cost - ncost
            px, py, pz = nx, ny, nz
            cost = ncost
            n = nn
            history[nh] = cost
            nh += 1
            lam = lam / 10.0
            if lam < LAMBDA_MIN:
                lam = LAMBDA_MIN
            if dec < DECREASE_TOL:
                break
        else:
            lam = lam * 10.0
    return np.array([px, py, pz]), cost, n, nh, status


# --------------------------------------------------------------------------
# Batched two-view triangulation (vectorised over pairs)


def _obs_terms(px, py, pz, r, c, k, zu, zv):
    dx = px - c[:, 0]
    dy = py - c[:, 1]
    dz = pz - c[:, 2]
    x = r[:, 0] * dx + r[:, 3] * dy + r[:, 6] * dz
    y = r[:, 1] * dx + r[:, 4] * dy + r[:, 7] * dz
    z = r[:, 2] * dx + r[:, 5] * dy + r[:, 8] * dz
    valid = z > DEPTH_EPS
    zs = np.where(valid, z, 1.0)
    du = k[:, 0] * x / zs + k[:, 2] - zu
    dv = k[:, 1] * y / zs + k[:, 3] - zv
    return x, y, zs, du, dv, valid


def _cost2(px, py, pz, obs):
    cost = np.zeros(px.shape)
    n = np.zeros(px.shape, dtype=np.int64)
    for r, c, k, zu, zv in obs:
        _, _, _, du, dv, valid = _obs_terms(px, py, pz, r, c, k, zu, zv)
        cost = np.where(valid, cost + (du * du + dv * dv), cost)
        n = n + valid
    return cost, n


def _normal2(px, py, pz, obs):
    zero = np.zeros(px.shape)
    a00 = a01 = a02 = a11 = a12 = a22 = g0 = g1 = g2 = zero
    for r, c, k, zu, zv in obs:
        x, y, z, du, dv, valid = _obs_terms(px, py, pz, r, c, k, zu, zv)
        au = k[:, 0] / z
        bu = x / z
        av = k[:, 1] / z
        bv = y / z
        ju0 = au * (r[:, 0] - bu * r[:, 2])
        ju1 = au * (r[:, 3] - bu * r[:, 5])
        ju2 = au * (r[:, 6] - bu * r[:, 8])
        jv0 = av * (r[:, 1] - bv * r[:, 2])
        jv1 = av * (r[:, 4] - bv * r[:, 5])
        jv2 = av * (r[:, 7] - bv * r[:, 8])
        a00 = np.where(valid, a00 + (ju0 * ju0 + jv0 * jv0), a00)
        a01 = np.where(valid, a01 + (ju0 * ju1 + jv0 * jv1), a01)
        a02 = np.where(valid, a02 + (ju0 * ju2 + jv0 * jv2), a02)
        a11 = np.where(valid, a11 + (ju1 * ju1 + jv1 * jv1), a11)
        a12 = np.where(valid, a12 + (ju1 * ju2 + jv1 * jv2), a12)
        a22 = np.where(valid, a22 + (ju2 * ju2 + jv2 * jv2), a22)
        g0 = np.where(valid, g0 + (ju0 * du + jv0 * dv), g0)
        g1 = np.where(valid, g1 + (ju1 * du + jv1 * dv), g1)
        g2 = np.where(valid, g2 + (ju2 * du + jv2 * dv), g2)
    return a00, a01, a02, a11, a12, a22, g0, g1, g2


def _solve2(a00, a01, a02, a11, a12, a22, g0, g1, g2, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        f = 1.0 + lam
        m00 = a00 * f
        m11 = a11 * f
        m22 = a22 * f
        ok = m00 > 0.0
        l00 = np.sqrt(np.where(ok, m00, 1.0))
        l10 = a01 / l00
        l20 = a02 / l00
        t = m11 - l10 * l10
        ok &= t > 0.0
        l11 = np.sqrt(np.where(ok, t, 1.0))
        l21 = (a12 - l20 * l10) / l11
        t = m22 - l20 * l20 - l21 * l21
        ok &= t > 0.0
        l22 = np.sqrt(np.where(ok, t, 1.0))
        y0 = -g0 / l00
        y1 = (-g1 - l10 * y0) / l11
        y2 = (-g2 - l20 * y0 - l21 * y1) / l22
        d2 = y2 / l22
        d1 = (y1 - l21 * d2) / l11
        d0 = (y0 - l10 * d1 - l20 * d2) / l00
    return ok, d0, d1, d2


def triangulate_pairs(uv_a, cam_a, uv_b, cam_b, R, C, K, max_iter):
    """Ray-midpoint initialisation plus damped Gauss-Newton for many pairs.

    Returns ``(points (H, 3), status (H,) int8)``.
    """
    uv_a = np.asarray(uv_a, dtype=np.float64).reshape(-1, 2)
    uv_b = np.asarray(uv_b, dtype=np.float64).reshape(-1, 2)
    cam_a = np.asarray(cam_a, dtype=np.int64)
    cam_b = np.asarray(cam_b, dtype=np.int64)
    h = len(cam_a)
    out = np.full((h, 3), np.nan)
    status = np.zeros(h, dtype=np.int8)
    if h == 0:
        return out, status
    ra, ca, ka = R[cam_a], C[cam_a], K[cam_a]
    rb, cb, kb = R[cam_b], C[cam_b], K[cam_b]

    with np.errstate(divide="ignore", invalid="ignore"):
        qa0 = (uv_a[:, 0] - ka[:, 2]) / ka[:, 0]
        qa1 = (uv_a[:, 1] - ka[:, 3]) / ka[:, 1]
        qb0 = (uv_b[:, 0] - kb[:, 2]) / kb[:, 0]
        qb1 = (uv_b[:, 1] - kb[:, 3]) / kb[:, 1]
        dax = ra[:, 0] * qa0 + ra[:, 1] * qa1 + ra[:, 2]
        day = ra[:, 3] * qa0 + ra[:, 4] * qa1 + ra[:, 5]
        daz = ra[:, 6] * qa0 + ra[:, 7] * qa1 + ra[:, 8]
        dbx = rb[:, 0] * qb0 + rb[:, 1] * qb1 + rb[:, 2]
        dby = rb[:, 3] * qb0 + rb[:, 4] * qb1 + rb[:, 5]
        dbz = rb[:, 6] * qb0 + rb[:, 7] * qb1 + rb[:, 8]
        wx = ca[:, 0] - cb[:, 0]
        wy = ca[:, 1] - cb[:, 1]
        wz = ca[:, 2] - cb[:, 2]
        a = dax * dax + day * day + daz * daz
        b = dax * dbx + day * dby + daz * dbz
        c = dbx * dbx + dby * dby + dbz * dbz
        d = dax * wx + day * wy + daz * wz
        e = dbx * wx + dby * wy + dbz * wz
        denom = a * c - b * b
        baseline = np.sqrt(wx * wx + wy * wy + wz * wz)
        degenerate = (baseline < BASELINE_MIN) | ~(denom >= PARALLEL_SIN2 * (a * c))
        s = (b * e - c * d) / denom
        t = (a * e - b * d) / denom
        behind = ~degenerate & ~((s > DEPTH_EPS) & (t > DEPTH_EPS))
        px = ((ca[:, 0] + s * dax) + (cb[:, 0] + t * dbx)) * 0.5
        py = ((ca[:, 1] + s * day) + (cb[:, 1] + t * dby)) * 0.5
        pz = ((ca[:, 2] + s * daz) + (cb[:, 2] + t * dbz)) * 0.5
    status[degenerate] = STATUS_DEGENERATE
    status[behind] = STATUS_BEHIND

    live = np.flatnonzero(status == STATUS_OK)
    px, py, pz = px[live], py[live], pz[live]
    obs = [
        (ra[live], ca[live], ka[live], uv_a[live, 0], uv_a[live, 1]),
        (rb[live], cb[live], kb[live], uv_b[live, 0], uv_b[live, 1]),
    ]
    cost, n = _cost2(px, py, pz, obs)
    lam = np.full(len(live), LAMBDA_INIT)
    running = np.isfinite(cost)
    fail = ~running
    for _ in range(max_iter):
        running &= n > 0
        if not running.any():
            break
        a00, a01, a02, a11, a12, a22, g0, g1, g2 = _normal2(px, py, pz, obs)
        ok, d0, d1, d2 = _solve2(a00, a01, a02, a11, a12, a22, g0, g1, g2, lam)
        notspd = running & ~ok
        lam = np.where(notspd, lam * 10.0, lam)
        go = running & ok
        with np.errstate(invalid="ignore", over="ignore"):
            step = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        bad = go & ~np.isfinite(step)
        fail |= bad
        running &= ~bad
        go &= ~bad
        small = go & (step < STEP_TOL)
        running &= ~small
        go &= ~small
        nx = px + d0
        ny = py + d1
        nz = pz + d2
        ncost, nn = _cost2(nx, ny, nz, obs)
        bad = go & ~np.isfinite(ncost)
        fail |= bad
        running &= ~bad
        go &= ~bad
        accept = go & (nn >= n) & (ncost <= cost)
        reject = go & ~accept
        dec = cost - ncost
        px = np.where(accept, nx, px)
        py = np.where(accept, ny, py)
        pz = np.where(accept, nz, pz)
        cost = np.where(accept, ncost, cost)
        n = np.where(accept, nn, n)
        lam = np.where(accept, np.maximum(lam / 10.0, LAMBDA_MIN), lam)
        lam = np.where(reject, lam * 10.0, lam)
        running &= ~(accept & (dec < DECREASE_TOL))

    # Final depth check in both views.
    _, _, _, _, _, va = _obs_terms(px, py, pz, *obs[0])
    _, _, _, _, _, vb = _obs_terms(px, py, pz, *obs[1])
    st = np.where(fail, STATUS_NONFINITE, np.where(va & vb, STATUS_OK, STATUS_BEHIND))
    status[live] = st
    out[live, 0] = px
    out[live, 1] = py
    out[live, 2] = pz
    return out, status


# --------------------------------------------------------------------------
# Hypothesis viability


def viability(points, uv_a, cam_a, uv_b, cam_b, R, C, K,
              depth_min, depth_max, d_max, cos_theta_min, r_max, axes_mode):
    """Boolean mask (uint8) of pairs passing the four viability constraints."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    uv_a = np.asarray(uv_a, dtype=np.float64).reshape(-1, 2)
    uv_b = np.asarray(uv_b, dtype=np.float64).reshape(-1, 2)
    cam_a = np.asarray(cam_a, dtype=np.int64)
    cam_b = np.asarray(cam_b, dtype=np.int64)
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    ok = np.isfinite(px) & np.isfinite(py) & np.isfinite(pz)
    vec = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for cam, uv in ((cam_a, uv_a), (cam_b, uv_b)):
            r, c, k = R[cam], C[cam], K[cam]
            dx = px - c[:, 0]
            dy = py - c[:, 1]
            dz = pz - c[:, 2]
            x = r[:, 0] * dx + r[:, 3] * dy + r[:, 6] * dz
            y = r[:, 1] * dx + r[:, 4] * dy + r[:, 7] * dz
            z = r[:, 2] * dx + r[:, 5] * dy + r[:, 8] * dz
            ok &= (z >= depth_min) & (z <= depth_max)
            du = k[:, 0] * x / z + k[:, 2] - uv[:, 0]
            dv = k[:, 1] * y / z + k[:, 3] - uv[:, 1]
            ok &= np.sqrt(du * du + dv * dv) < d_max
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            ok &= dist < r_max
            if axes_mode:
                vec.append((r[:, 2], r[:, 5], r[:, 8]))
            else:
                vec.append((dx, dy, dz))
        (ax, ay, az), (bx, by, bz) = vec
        na = np.sqrt(ax * ax + ay * ay + az * az)
        nb = np.sqrt(bx * bx + by * by + bz * bz)
        cosang = (ax * bx + ay * by + az * bz) / (na * nb)
        ok &= (na > 0.0) & (nb > 0.0) & (cosang < cos_theta_min)
    return ok.astype(np.uint8)


# --------------------------------------------------------------------------
# Inlier scoring


def score_rows(points, rows, fixed_a, fixed_b, det_uv, det_img, det_active,
               img_start, R, C, K, depth_min, depth_max, r_max, d_max,
               out_det, out_err):
    """Recompute per-image inliers for hypothesis ``rows`` in place.

    For each row and image, the nearest active detection (lowest index on
    ties) is the inlier when the point projects inside the image with depth
    in range and camera distance below ``r_max``, and the pixel distance is
    below ``d_max``. The defining detections ``fixed_a``/``fixed_b`` are
    always the inliers of their own images (a negative index means none).
    """
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        return
    n_img = len(img_start) - 1
    pts = points[rows]
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    sub_det = np.full((len(rows), n_img), -1, dtype=np.int32)
    sub_err = np.full((len(rows), n_img), np.inf)
    det_u = det_uv[:, 0]
    det_v = det_uv[:, 1]
    for m in range(n_img):
        lo, hi = int(img_start[m]), int(img_start[m + 1])
        idx = lo + np.flatnonzero(det_active[lo:hi])
        if len(idx) == 0:
            continue
        r, c, k = R[m], C[m], K[m]
        dx = px - c[0]
        dy = py - c[1]
        dz = pz - c[2]
        x = r[0] * dx + r[3] * dy + r[6] * dz
        y = r[1] * dx + r[4] * dy + r[7] * dz
        z = r[2] * dx + r[5] * dy + r[8] * dz
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        gate = (z >= depth_min) & (z <= depth_max) & (dist < r_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = k[0] * x / z + k[2]
            v = k[1] * y / z + k[3]
        gate &= (u >= 0.0) & (u <= k[4]) & (v >= 0.0) & (v <= k[5])
        g = np.flatnonzero(gate)
        if len(g) == 0:
            continue
        du = u[g, None] - det_u[idx][None, :]
        dv = v[g, None] - det_v[idx][None, :]
        err = np.sqrt(du * du + dv * dv)
        j = np.argmin(err, axis=1)
        best = err[np.arange(len(g)), j]
        hit = best < d_max
        sub_det[g[hit], m] = idx[j[hit]]
        sub_err[g[hit], m] = best[hit]

    for fixed in (fixed_a, fixed_b):
        f = np.asarray(fixed)[rows]
        ar = np.flatnonzero(f >= 0)
        f = f[ar]
        m = det_img[f]
        r, c, k = R[m], C[m], K[m]
        dx = px[ar] - c[:, 0]
        dy = py[ar] - c[:, 1]
        dz = pz[ar] - c[:, 2]
        x = r[:, 0] * dx + r[:, 3] * dy + r[:, 6] * dz
        y = r[:, 1] * dx + r[:, 4] * dy + r[:, 7] * dz
        z = r[:, 2] * dx + r[:, 5] * dy + r[:, 8] * dz
        with np.errstate(divide="ignore", invalid="ignore"):
            du = k[:, 0] * x / z + k[:, 2] - det_u[f]
            dv = k[:, 1] * y / z + k[:, 3] - det_v[f]
        sub_det[ar, m] = f
        sub_err[ar, m] = np.sqrt(du * du + dv * dv)

    out_det[rows] = sub_det
    out_err[rows] = sub_err
