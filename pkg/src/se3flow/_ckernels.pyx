# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


def normal_equations(const double[:, :, :, ::1] R, const double[:, :, ::1] t,
                     const double[:, :, ::1] P, valid_in,
                     const double[:, :, ::1] targets, const double[:, :, ::1] conf,
                     const double[:, :, ::1] emb, cam, int radius, double eps_z):
    cdef const cnp.npy_bool[:, ::1] valid = np.ascontiguousarray(valid_in, dtype=np.bool_)
    cdef Py_ssize_t Himg = valid.shape[0], Wimg = valid.shape[1], E = emb.shape[2]
    cdef double fx = cam[0], fy = cam[1], cx = cam[2], cy = cam[3]
    Hm_arr = np.zeros((Himg, Wimg, 6, 6))
    g_arr = np.zeros((Himg, Wimg, 6))
    count_arr = np.zeros((Himg, Wimg), dtype=np.int64)
    cdef double[:, :, :, ::1] Hm = Hm_arr
    cdef double[:, :, ::1] g = g_arr
    cdef cnp.int64_t[:, ::1] count = count_arr
    cdef Py_ssize_t i0, i1, j0, j1, e, k, a, b, r_lo, r_hi, c_lo, c_hi
    cdef double r00, r01, r02, r10, r11, r12, r20, r21, r22, t0, t1, t2
    cdef double px, py, pz, X, Y, Z, iz, d2, du, att, w0, w1, w2
    cdef double res0, res1, res2
    cdef double J[3][6]
    cdef double h[6][6]
    cdef double gg[6]
    cdef double wr[3]
    cdef double wrow
    cdef cnp.int64_t n
    with nogil:
        for i0 in range(Himg):
            r_lo = i0 - radius if i0 - radius > 0 else 0
            r_hi = i0 + radius + 1 if i0 + radius + 1 < Himg else Himg
            for i1 in range(Wimg):
                c_lo = i1 - radius if i1 - radius > 0 else 0
                c_hi = i1 + radius + 1 if i1 + radius + 1 < Wimg else Wimg
                r00 = R[i0, i1, 0, 0]; r01 = R[i0, i1, 0, 1]; r02 = R[i0, i1, 0, 2]
                r10 = R[i0, i1, 1, 0]; r11 = R[i0, i1, 1, 1]; r12 = R[i0, i1, 1, 2]
                r20 = R[i0, i1, 2, 0]; r21 = R[i0, i1, 2, 1]; r22 = R[i0, i1, 2, 2]
                t0 = t[i0, i1, 0]; t1 = t[i0, i1, 1]; t2 = t[i0, i1, 2]
                for a in range(6):
                    gg[a] = 0.0
                    for b in range(6):
                        h[a][b] = 0.0
                n = 0
                for j0 in range(r_lo, r_hi):
                    for j1 in range(c_lo, c_hi):
                        if not valid[j0, j1]:
                            continue
                        px = P[j0, j1, 0]; py = P[j0, j1, 1]; pz = P[j0, j1, 2]
                        Z = r20 * px + r21 * py + r22 * pz + t2
                        if not Z > eps_z:
                            continue
                        X = r00 * px + r01 * py + r02 * pz + t0
                        Y = r10 * px + r11 * py + r12 * pz + t1
                        d2 = 0.0
                        for e in range(E):
                            du = emb[i0, i1, e] - emb[j0, j1, e]
                            d2 = d2 + du * du
                        att = 1.0 / (1.0 + exp(d2))
                        if att == 0.0:
                            n = n + 1
                            continue
                        iz = 1.0 / Z
                        res0 = fx * X * iz + cx - targets[j0, j1, 0]
                        res1 = fy * Y * iz + cy - targets[j0, j1, 1]
                        res2 = iz - targets[j0, j1, 2]
                        # projection rows, then rotational part P x row
                        J[0][0] = fx * iz; J[0][1] = 0.0; J[0][2] = -fx * X * iz * iz
                        J[1][0] = 0.0; J[1][1] = fy * iz; J[1][2] = -fy * Y * iz * iz
                        J[2][0] = 0.0; J[2][1] = 0.0; J[2][2] = -iz * iz
                        for k in range(3):
                            J[k][3] = Y * J[k][2] - Z * J[k][1]
                            J[k][4] = Z * J[k][0] - X * J[k][2]
                            J[k][5] = X * J[k][1] - Y * J[k][0]
                        w0 = att * conf[j0, j1, 0]
                        w1 = att * conf[j0, j1, 1]
                        w2 = att * conf[j0, j1, 2]
                        wr[0] = w0; wr[1] = w1; wr[2] = w2
                        for k in range(3):
                            for a in range(6):
                                wrow = wr[k] * J[k][a]
                                if wrow == 0.0:
                                    continue
                                for b in range(a, 6):
                                    h[a][b] = h[a][b] + wrow * J[k][b]
                        for a in range(6):
                            gg[a] = gg[a] + J[0][a] * w0 * res0 + J[1][a] * w1 * res1 + J[2][a] * w2 * res2
                        n = n + 1
                for a in range(6):
                    g[i0, i1, a] = gg[a]
                    for b in range(a, 6):
                        Hm[i0, i1, a, b] = h[a][b]
                        Hm[i0, i1, b, a] = h[a][b]
                count[i0, i1] = n
    return Hm_arr, g_arr, count_arr


def smoothing_apply(const double[:, :, ::1] u, const double[:, ::1] wx, const double[:, ::1] wy):
    cdef Py_ssize_t H = u.shape[0], W = u.shape[1], C = u.shape[2], y, x, c
    out_arr = np.array(u, copy=True)
    cdef double[:, :, ::1] out = out_arr
    cdef double d, w
    with nogil:
        for y in range(H):
            for x in range(W):
                if x + 1 < W:
                    w = wx[y, x]
                    if w != 0.0:
                        for c in range(C):
                            d = (u[y, x + 1, c] - u[y, x, c]) * w
                            out[y, x, c] -= d
                            out[y, x + 1, c] += d
                if y + 1 < H:
                    w = wy[y, x]
                    if w != 0.0:
                        for c in range(C):
                            d = (u[y + 1, x, c] - u[y, x, c]) * w
                            out[y, x, c] -= d
                            out[y + 1, x, c] += d
    return out_arr


cdef inline double _corner_dot(const double[:, :, ::1] f1, const double[:, :, ::1] f2,
                               Py_ssize_t y, Py_ssize_t x, Py_ssize_t yi, Py_ssize_t xi,
                               Py_ssize_t D) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t c
    if xi < 0 or yi < 0 or xi >= f2.shape[1] or yi >= f2.shape[0]:
        return 0.0
    for c in range(D):
        s = s + f1[y, x, c] * f2[yi, xi, c]
    return s


cdef void _lookup_level(const double[:, :, ::1] f1, const double[:, :, ::1] f2,
                        const double[:, :, ::1] coords, double[:, :, ::1] out,
                        int radius, double scale, double norm, Py_ssize_t col0) noexcept nogil:
    cdef Py_ssize_t H = f1.shape[0], W = f1.shape[1], D = f1.shape[2]
    cdef Py_ssize_t y, x, col, x0, y0
    cdef int dy, dx
    cdef double xs, ys, ax, ay, v
    for y in range(H):
        for x in range(W):
            col = col0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    xs = coords[y, x, 0] / scale + dx
                    ys = coords[y, x, 1] / scale + dy
                    x0 = <Py_ssize_t>floor(xs)
                    y0 = <Py_ssize_t>floor(ys)
                    ax = xs - x0
                    ay = ys - y0
                    v = (1 - ax) * (1 - ay) * _corner_dot(f1, f2, y, x, y0, x0, D)
                    v = v + ax * (1 - ay) * _corner_dot(f1, f2, y, x, y0, x0 + 1, D)
                    v = v + (1 - ax) * ay * _corner_dot(f1, f2, y, x, y0 + 1, x0, D)
                    v = v + ax * ay * _corner_dot(f1, f2, y, x, y0 + 1, x0 + 1, D)
                    out[y, x, col] = v * norm
                    col = col + 1


def lookup_on_demand(const double[:, :, ::1] f1, f2_levels, const double[:, :, ::1] coords,
                     int radius, double norm):
    cdef Py_ssize_t H = f1.shape[0], W = f1.shape[1]
    cdef Py_ssize_t K = 2 * radius + 1
    out_arr = np.zeros((H, W, len(f2_levels) * K * K))
    cdef double[:, :, ::1] out = out_arr
    cdef const double[:, :, ::1] f2
    cdef Py_ssize_t lvl
    for lvl in range(len(f2_levels)):
        f2 = f2_levels[lvl]
        with nogil:
            _lookup_level(f1, f2, coords, out, radius, 2.0 ** lvl, norm, lvl * K * K)
    return out_arr
