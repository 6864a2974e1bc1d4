# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels.

Operation-for-operation twin of ``_kernels_py``; see that module for the
array conventions. Built with ``-ffp-contract=off`` so no fused multiply-add
changes the rounding relative to the numpy fallback.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, INFINITY, NAN

cnp.import_array()

cdef double DEPTH_EPS = 1e-6
cdef double STEP_TOL = 1e-9
cdef double DECREASE_TOL = 1e-12
cdef double LAMBDA_INIT = 1e-3
cdef double LAMBDA_MIN = 1e-15
cdef double PARALLEL_SIN2 = 1e-16
cdef double BASELINE_MIN = 1e-6

STATUS_OK = 0
STATUS_DEGENERATE = 1
STATUS_BEHIND = 2
STATUS_NONFINITE = 3


cdef struct Cost:
    double cost
    long n


cdef inline Cost _cost(double px, double py, double pz, const double[:, ::1] uv,
                       const long[::1] cams, const double[:, ::1] R,
                       const double[:, ::1] C, const double[:, ::1] K) noexcept nogil:
    cdef Cost out
    cdef Py_ssize_t i
    cdef long m
    cdef double dx, dy, dz, x, y, z, du, dv
    out.cost = 0.0
    out.n = 0
    for i in range(cams.shape[0]):
        m = cams[i]
        dx = px - C[m, 0]
        dy = py - C[m, 1]
        dz = pz - C[m, 2]
        x = R[m, 0] * dx + R[m, 3] * dy + R[m, 6] * dz
        y = R[m, 1] * dx + R[m, 4] * dy + R[m, 7] * dz
        z = R[m, 2] * dx + R[m, 5] * dy + R[m, 8] * dz
        if z > DEPTH_EPS:
            du = K[m, 0] * x / z + K[m, 2] - uv[i, 0]
            dv = K[m, 1] * y / z + K[m, 3] - uv[i, 1]
            out.cost += du * du + dv * dv
            out.n += 1
    return out


cdef inline void _normal(double px, double py, double pz, const double[:, ::1] uv,
                         const long[::1] cams, const double[:, ::1] R,
                         const double[:, ::1] C, const double[:, ::1] K,
                         double* a) noexcept nogil:
    # a = [a00, a01, a02, a11, a12, a22, g0, g1, g2]
    cdef Py_ssize_t i
    cdef long m
    cdef double dx, dy, dz, x, y, z, du, dv, au, bu, av, bv
    cdef double ju0, ju1, ju2, jv0, jv1, jv2
    for i in range(9):
        a[i] = 0.0
    for i in range(cams.shape[0]):
        m = cams[i]
        dx = px - C[m, 0]
        dy = py - C[m, 1]
        dz = pz - C[m, 2]
        x = R[m, 0] * dx + R[m, 3] * dy + R[m, 6] * dz
        y = R[m, 1] * dx + R[m, 4] * dy + R[m, 7] * dz
        z = R[m, 2] * dx + R[m, 5] * dy + R[m, 8] * dz
        if z > DEPTH_EPS:
            du = K[m, 0] * x / z + K[m, 2] - uv[i, 0]
            dv = K[m, 1] * y / z + K[m, 3] - uv[i, 1]
            au = K[m, 0] / z
            bu = x / z
            av = K[m, 1] / z
            bv = y / z
            ju0 = au * (R[m, 0] - bu * R[m, 2])
            ju1 = au * (R[m, 3] - bu * R[m, 5])
            ju2 = au * (R[m, 6] - bu * R[m, 8])
            jv0 = av * (R[m, 1] - bv * R[m, 2])
            jv1 = av * (R[m, 4] - bv * R[m, 5])
            jv2 = av * (R[m, 7] - bv * R[m, 8])
            a[0] = a[0] + (ju0 * ju0 + jv0 * jv0)
            a[1] = a[1] + (ju0 * ju1 + jv0 * jv1)
            a[2] = a[2] + (ju0 * ju2 + jv0 * jv2)
            a[3] = a[3] + (ju1 * ju1 + jv1 * jv1)
            a[4] = a[4] + (ju1 * ju2 + jv1 * jv2)
            a[5] = a[5] + (ju2 * ju2 + jv2 * jv2)
            a[6] = a[6] + (ju0 * du + jv0 * dv)
            a[7] = a[7] + (ju1 * du + jv1 * dv)
            a[8] = a[8] + (ju2 * du + jv2 * dv)


cdef inline bint _solve(const double* a, double lam, double* d) noexcept nogil:
    cdef double f = 1.0 + lam
    cdef double m00 = a[0] * f
    cdef double m11 = a[3] * f
    cdef double m22 = a[5] * f
    cdef double l00, l10, l20, l11, l21, l22, t, y0, y1, y2
    if not m00 > 0.0:
        return False
    l00 = sqrt(m00)
    l10 = a[1] / l00
    l20 = a[2] / l00
    t = m11 - l10 * l10
    if not t > 0.0:
        return False
    l11 = sqrt(t)
    l21 = (a[4] - l20 * l10) / l11
    t = m22 - l20 * l20 - l21 * l21
    if not t > 0.0:
        return False
    l22 = sqrt(t)
    y0 = -a[6] / l00
    y1 = (-a[7] - l10 * y0) / l11
    y2 = (-a[8] - l20 * y0 - l21 * y1) / l22
    d[2] = y2 / l22
    d[1] = (y1 - l21 * d[2]) / l11
    d[0] = (y0 - l10 * d[1] - l20 * d[2]) / l00
    return True


cdef int _refine(double* p, const double[:, ::1] uv, const long[::1] cams,
                 const double[:, ::1] R, const double[:, ::1] C,
                 const double[:, ::1] K, int max_iter, double* history,
                 int* n_hist, double* cost_out, long* n_out) noexcept nogil:
    cdef Cost cur, nxt
    cdef double a[9]
    cdef double d[3]
    cdef double lam = LAMBDA_INIT
    cdef double step, dec, nx, ny, nz
    cdef int it
    cdef int status = 0
    cur = _cost(p[0], p[1], p[2], uv, cams, R, C, K)
    if history != NULL:
        history[0] = cur.cost
    n_hist[0] = 1
    if not isfinite(cur.cost):
        cost_out[0] = cur.cost
        n_out[0] = cur.n
        return 3
    for it in range(max_iter):
        if cur.n == 0:
            break
        _normal(p[0], p[1], p[2], uv, cams, R, C, K, a)
        if not _solve(a, lam, d):
            lam = lam * 10.0
            continue
        step = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if not isfinite(step):
            status = 3
            break
        if step < STEP_TOL:
            break
        nx = p[0] + d[0]
        ny = p[1] + d[1]
        nz = p[2] + d[2]
        nxt = _cost(nx, ny, nz, uv, cams, R, C, K)
        if not isfinite(nxt.cost):
            status = 3
            break
        if nxt.n >= cur.n and nxt.cost <= cur.cost:
            dec = cur.cost - nxt.cost
            p[0] = nx
            p[1] = ny
            p[2] = nz
            cur = nxt
            if history != NULL:
                history[n_hist[0]] = cur.cost
            n_hist[0] += 1
            lam = lam / 10.0
            if lam < LAMBDA_MIN:
                lam = LAMBDA_MIN
            if dec < DECREASE_TOL:
                break
        else:
            lam = lam * 10.0
    cost_out[0] = cur.cost
    n_out[0] = cur.n
    return status


cdef inline double _depth(double px, double py, double pz, const double[:, ::1] R,
                          const double[:, ::1] C, long m) noexcept nogil:
    cdef double dx = px - C[m, 0]
    cdef double dy = py - C[m, 1]
    cdef double dz = pz - C[m, 2]
    return R[m, 2] * dx + R[m, 5] * dy + R[m, 8] * dz


def project_points(points, cams, R, C, K):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const long[::1] cm = np.ascontiguousarray(cams, dtype=np.int64)
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef Py_ssize_t n = P.shape[0], i
    cdef long m
    uv_arr = np.empty((n, 2))
    z_arr = np.empty(n)
    cdef double[:, ::1] uv = uv_arr
    cdef double[::1] zo = z_arr
    cdef double dx, dy, dz, x, y, z
    with nogil:
        for i in range(n):
            m = cm[i]
            dx = P[i, 0] - Cv[m, 0]
            dy = P[i, 1] - Cv[m, 1]
            dz = P[i, 2] - Cv[m, 2]
            x = Rv[m, 0] * dx + Rv[m, 3] * dy + Rv[m, 6] * dz
            y = Rv[m, 1] * dx + Rv[m, 4] * dy + Rv[m, 7] * dz
            z = Rv[m, 2] * dx + Rv[m, 5] * dy + Rv[m, 8] * dz
            zo[i] = z
            if z > DEPTH_EPS:
                uv[i, 0] = Kv[m, 0] * x / z + Kv[m, 2]
                uv[i, 1] = Kv[m, 1] * y / z + Kv[m, 3]
            else:
                uv[i, 0] = NAN
                uv[i, 1] = NAN
    return uv_arr, z_arr


def residual_jacobian(point, long cam, R, C, K):
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef double px = point[0], py = point[1], pz = point[2]
    cdef double dx = px - Cv[cam, 0]
    cdef double dy = py - Cv[cam, 1]
    cdef double dz = pz - Cv[cam, 2]
    cdef double x = Rv[cam, 0] * dx + Rv[cam, 3] * dy + Rv[cam, 6] * dz
    cdef double y = Rv[cam, 1] * dx + Rv[cam, 4] * dy + Rv[cam, 7] * dz
    cdef double z = Rv[cam, 2] * dx + Rv[cam, 5] * dy + Rv[cam, 8] * dz
    if not z > DEPTH_EPS:
        return np.full((2, 3), np.nan)
    cdef double au = Kv[cam, 0] / z
    cdef double bu = x / z
    cdef double av = Kv[cam, 1] / z
    cdef double bv = y / z
    return np.array(
        [
            [au * (Rv[cam, 0] - bu * Rv[cam, 2]), au * (Rv[cam, 3] - bu * Rv[cam, 5]),
             au * (Rv[cam, 6] - bu * Rv[cam, 8])],
            [av * (Rv[cam, 1] - bv * Rv[cam, 2]), av * (Rv[cam, 4] - bv * Rv[cam, 5]),
             av * (Rv[cam, 7] - bv * Rv[cam, 8])],
        ]
    )


def refine_point(x0, uv, cams, R, C, K, int max_iter, double[::1] history):
    cdef const double[:, ::1] uvv = np.ascontiguousarray(uv, dtype=np.float64).reshape(-1, 2)
    cdef const long[::1] cm = np.ascontiguousarray(cams, dtype=np.int64)
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef double p[3]
    cdef int nh = 0
    cdef double cost = 0.0
    cdef long n = 0
    cdef int status
    p[0] = x0[0]
    p[1] = x0[1]
    p[2] = x0[2]
    with nogil:
        status = _refine(p, uvv, cm, Rv, Cv, Kv, max_iter, &history[0], &nh, &cost, &n)
    return np.array([p[0], p[1], p[2]]), cost, n, nh, status


def triangulate_pairs(uv_a, cam_a, uv_b, cam_b, R, C, K, int max_iter):
    cdef const double[:, ::1] ua = np.ascontiguousarray(uv_a, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] ub = np.ascontiguousarray(uv_b, dtype=np.float64).reshape(-1, 2)
    cdef const long[::1] ca = np.ascontiguousarray(cam_a, dtype=np.int64)
    cdef const long[::1] cb = np.ascontiguousarray(cam_b, dtype=np.int64)
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef Py_ssize_t h = ca.shape[0], i
    out_arr = np.full((h, 3), np.nan)
    st_arr = np.zeros(h, dtype=np.int8)
    cdef double[:, ::1] out = out_arr
    cdef signed char[::1] st = st_arr
    obs_uv_arr = np.empty((2, 2))
    obs_cam_arr = np.empty(2, dtype=np.int64)
    cdef double[:, ::1] ouv = obs_uv_arr
    cdef long[::1] ocam = obs_cam_arr
    cdef long ma, mb
    cdef double qa0, qa1, qb0, qb1, dax, day, daz, dbx, dby, dbz
    cdef double wx, wy, wz, a, b, c, d, e, denom, baseline, s, t
    cdef double p[3]
    cdef int nh, status
    cdef double cost
    cdef long n
    with nogil:
        for i in range(h):
            ma = ca[i]
            mb = cb[i]
            qa0 = (ua[i, 0] - Kv[ma, 2]) / Kv[ma, 0]
            qa1 = (ua[i, 1] - Kv[ma, 3]) / Kv[ma, 1]
            qb0 = (ub[i, 0] - Kv[mb, 2]) / Kv[mb, 0]
            qb1 = (ub[i, 1] - Kv[mb, 3]) / Kv[mb, 1]
            dax = Rv[ma, 0] * qa0 + Rv[ma, 1] * qa1 + Rv[ma, 2]
            day = Rv[ma, 3] * qa0 + Rv[ma, 4] * qa1 + Rv[ma, 5]
            daz = Rv[ma, 6] * qa0 + Rv[ma, 7] * qa1 + Rv[ma, 8]
            dbx = Rv[mb, 0] * qb0 + Rv[mb, 1] * qb1 + Rv[mb, 2]
            dby = Rv[mb, 3] * qb0 + Rv[mb, 4] * qb1 + Rv[mb, 5]
            dbz = Rv[mb, 6] * qb0 + Rv[mb, 7] * qb1 + Rv[mb, 8]
            wx = Cv[ma, 0] - Cv[mb, 0]
            wy = Cv[ma, 1] - Cv[mb, 1]
            wz = Cv[ma, 2] - Cv[mb, 2]
            a = dax * dax + day * day + daz * daz
            b = dax * dbx + day * dby + daz * dbz
            c = dbx * dbx + dby * dby + dbz * dbz
            d = dax * wx + day * wy + daz * wz
            e = dbx * wx + dby * wy + dbz * wz
            denom = a * c - b * b
            baseline = sqrt(wx * wx + wy * wy + wz * wz)
            if baseline < BASELINE_MIN or not (denom >= PARALLEL_SIN2 * (a * c)):
                st[i] = 1
                continue
            s = (b * e - c * d) / denom
            t = (a * e - b * d) / denom
            if not (s > DEPTH_EPS and t > DEPTH_EPS):
                st[i] = 2
                continue
            p[0] = ((Cv[ma, 0] + s * dax) + (Cv[mb, 0] + t * dbx)) * 0.5
            p[1] = ((Cv[ma, 1] + s * day) + (Cv[mb, 1] + t * dby)) * 0.5
            p[2] = ((Cv[ma, 2] + s * daz) + (Cv[mb, 2] + t * dbz)) * 0.5
            ouv[0, 0] = ua[i, 0]
            ouv[0, 1] = ua[i, 1]
            ouv[1, 0] = ub[i, 0]
            ouv[1, 1] = ub[i, 1]
            ocam[0] = ma
            ocam[1] = mb
            status = _refine(p, ouv, ocam, Rv, Cv, Kv, max_iter, NULL, &nh, &cost, &n)
            if status != 0:
                st[i] = 3
            elif not (_depth(p[0], p[1], p[2], Rv, Cv, ma) > DEPTH_EPS
                      and _depth(p[0], p[1], p[2], Rv, Cv, mb) > DEPTH_EPS):
                st[i] = 2
            else:
                st[i] = 0
            out[i, 0] = p[0]
            out[i, 1] = p[1]
            out[i, 2] = p[2]
    return out_arr, st_arr


def viability(points, uv_a, cam_a, uv_b, cam_b, R, C, K,
              double depth_min, double depth_max, double d_max,
              double cos_theta_min, double r_max, bint axes_mode):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] ua = np.ascontiguousarray(uv_a, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] ub = np.ascontiguousarray(uv_b, dtype=np.float64).reshape(-1, 2)
    cdef const long[::1] ca = np.ascontiguousarray(cam_a, dtype=np.int64)
    cdef const long[::1] cb = np.ascontiguousarray(cam_b, dtype=np.int64)
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef Py_ssize_t h = P.shape[0], i, j
    ok_arr = np.zeros(h, dtype=np.uint8)
    cdef unsigned char[::1] ok = ok_arr
    cdef long m
    cdef double px, py, pz, dx, dy, dz, x, y, z, du, dv, dist, na, nb, cosang
    cdef double vx[2]
    cdef double vy[2]
    cdef double vz[2]
    cdef bint good
    with nogil:
        for i in range(h):
            px = P[i, 0]
            py = P[i, 1]
            pz = P[i, 2]
            good = isfinite(px) and isfinite(py) and isfinite(pz)
            for j in range(2):
                if j == 0:
                    m = ca[i]
                    du = ua[i, 0]
                    dv = ua[i, 1]
                else:
                    m = cb[i]
                    du = ub[i, 0]
                    dv = ub[i, 1]
                dx = px - Cv[m, 0]
                dy = py - Cv[m, 1]
                dz = pz - Cv[m, 2]
                x = Rv[m, 0] * dx + Rv[m, 3] * dy + Rv[m, 6] * dz
                y = Rv[m, 1] * dx + Rv[m, 4] * dy + Rv[m, 7] * dz
                z = Rv[m, 2] * dx + Rv[m, 5] * dy + Rv[m, 8] * dz
                good = good and (z >= depth_min) and (z <= depth_max)
                du = Kv[m, 0] * x / z + Kv[m, 2] - du
                dv = Kv[m, 1] * y / z + Kv[m, 3] - dv
                good = good and (sqrt(du * du + dv * dv) < d_max)
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                good = good and (dist < r_max)
                if axes_mode:
                    vx[j] = Rv[m, 2]
                    vy[j] = Rv[m, 5]
                    vz[j] = Rv[m, 8]
                else:
                    vx[j] = dx
                    vy[j] = dy
                    vz[j] = dz
            na = sqrt(vx[0] * vx[0] + vy[0] * vy[0] + vz[0] * vz[0])
            nb = sqrt(vx[1] * vx[1] + vy[1] * vy[1] + vz[1] * vz[1])
            cosang = (vx[0] * vx[1] + vy[0] * vy[1] + vz[0] * vz[1]) / (na * nb)
            good = good and (na > 0.0) and (nb > 0.0) and (cosang < cos_theta_min)
            ok[i] = good
    return ok_arr


def score_rows(points, rows, fixed_a, fixed_b, det_uv, det_img, det_active,
               img_start, R, C, K, double depth_min, double depth_max,
               double r_max, double d_max, out_det, out_err):
    cdef const double[:, ::1] P = points
    cdef const long[::1] rw = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const long[::1] fa = np.ascontiguousarray(fixed_a, dtype=np.int64)
    cdef const long[::1] fb = np.ascontiguousarray(fixed_b, dtype=np.int64)
    cdef const double[:, ::1] Z = det_uv
    cdef const long[::1] dimg = np.ascontiguousarray(det_img, dtype=np.int64)
    cdef const unsigned char[::1] act = np.ascontiguousarray(det_active, dtype=np.uint8)
    cdef const long[::1] st = np.ascontiguousarray(img_start, dtype=np.int64)
    cdef const double[:, ::1] Rv = R
    cdef const double[:, ::1] Cv = C
    cdef const double[:, ::1] Kv = K
    cdef int[:, ::1] od = out_det
    cdef double[:, ::1] oe = out_err
    cdef Py_ssize_t n_img = st.shape[0] - 1, ri, m, j, k
    cdef long h, f
    cdef double px, py, pz, dx, dy, dz, x, y, z, u, v, du, dv, err, best, dist
    cdef long bestj
    with nogil:
        for ri in range(rw.shape[0]):
            h = rw[ri]
            px = P[h, 0]
            py = P[h, 1]
            pz = P[h, 2]
            for m in range(n_img):
                od[h, m] = -1
                oe[h, m] = INFINITY
                dx = px - Cv[m, 0]
                dy = py - Cv[m, 1]
                dz = pz - Cv[m, 2]
                z = Rv[m, 2] * dx + Rv[m, 5] * dy + Rv[m, 8] * dz
                if not ((z >= depth_min) and (z <= depth_max)):
                    continue
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                if not (dist < r_max):
                    continue
                x = Rv[m, 0] * dx + Rv[m, 3] * dy + Rv[m, 6] * dz
                y = Rv[m, 1] * dx + Rv[m, 4] * dy + Rv[m, 7] * dz
                u = Kv[m, 0] * x / z + Kv[m, 2]
                v = Kv[m, 1] * y / z + Kv[m, 3]
                if not ((u >= 0.0) and (u <= Kv[m, 4]) and (v >= 0.0) and (v <= Kv[m, 5])):
                    continue
                best = INFINITY
                bestj = -1
                for j in range(st[m], st[m + 1]):
                    if not act[j]:
                        continue
                    du = u - Z[j, 0]
                    dv = v - Z[j, 1]
                    err = sqrt(du * du + dv * dv)
                    if err < best:
                        best = err
                        bestj = j
                if bestj >= 0 and best < d_max:
                    od[h, m] = bestj
                    oe[h, m] = best
            for k in range(2):
                f = fa[h] if k == 0 else fb[h]
                if f < 0:
                    continue
                m = dimg[f]
                dx = px - Cv[m, 0]
                dy = py - Cv[m, 1]
                dz = pz - Cv[m, 2]
                x = Rv[m, 0] * dx + Rv[m, 3] * dy + Rv[m, 6] * dz
                y = Rv[m, 1] * dx + Rv[m, 4] * dy + Rv[m, 7] * dz
                z = Rv[m, 2] * dx + Rv[m, 5] * dy + Rv[m, 8] * dz
                du = Kv[m, 0] * x / z + Kv[m, 2] - Z[f, 0]
                dv = Kv[m, 1] * y / z + Kv[m, 3] - Z[f, 1]
                od[h, m] = f
                oe[h, m] = sqrt(du * du + dv * dv)
