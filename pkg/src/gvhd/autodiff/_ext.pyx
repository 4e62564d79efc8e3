# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence and masked cell-lift kernels.

Signatures and results match ``_gru_numpy`` and ``_cell_numpy``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef void _gemm(bint ta, bint tb, int m, int n, int k,
                double* A, int lda, double* B, int ldb,
                double beta, double* C, int ldc) noexcept nogil:
    # Row-major C[m, n] = op(A) @ op(B) + beta * C, via column-major dgemm on the transposes.
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef double alpha = 1.0
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def gru_forward(double[:, :, ::1] xw, double[:, ::1] u, double[:, ::1] h0):
    cdef int B = xw.shape[0], T = xw.shape[1], h = xw.shape[2] // 3
    cdef int b, t, j
    hs_a = np.empty((B, T + 1, h))
    zs_a = np.empty((B, T, h))
    rs_a = np.empty((B, T, h))
    cs_a = np.empty((B, T, h))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] zs = zs_a
    cdef double[:, :, ::1] rs = rs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, ::1] azr = np.empty((B, 2 * h))
    cdef double[:, ::1] rh = np.empty((B, h))
    cdef double[:, ::1] ah = np.empty((B, h))
    cdef double z, r, c, hp
    if B == 0 or T == 0:
        hs_a[:, 0] = h0
        return hs_a, zs_a, rs_a, cs_a
    with nogil:
        for b in range(B):
            for j in range(h):
                hs[b, 0, j] = h0[b, j]
        for t in range(T):
            _gemm(False, False, B, 2 * h, h, &hs[0, t, 0], (T + 1) * h, &u[0, 0], 3 * h, 0.0, &azr[0, 0], 2 * h)
            for b in range(B):
                for j in range(h):
                    z = _sigmoid(xw[b, t, j] + azr[b, j])
                    r = _sigmoid(xw[b, t, h + j] + azr[b, h + j])
                    zs[b, t, j] = z
                    rs[b, t, j] = r
                    rh[b, j] = r * hs[b, t, j]
            _gemm(False, False, B, h, h, &rh[0, 0], h, &u[0, 2 * h], 3 * h, 0.0, &ah[0, 0], h)
            for b in range(B):
                for j in range(h):
                    c = tanh(xw[b, t, 2 * h + j] + ah[b, j])
                    cs[b, t, j] = c
                    hp = hs[b, t, j]
                    hs[b, t + 1, j] = hp + zs[b, t, j] * (c - hp)
    return hs_a, zs_a, rs_a, cs_a


def gru_backward(double[:, ::1] dh_last, double[:, ::1] u,
                 double[:, :, ::1] hs, double[:, :, ::1] zs,
                 double[:, :, ::1] rs, double[:, :, ::1] cs):
    cdef int B = zs.shape[0], T = zs.shape[1], h = zs.shape[2]
    cdef int b, t, j
    dxw_a = np.zeros((B, T, 3 * h))
    du_a = np.zeros((h, 3 * h))
    dh_a = np.array(dh_last, copy=True)
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] du = du_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dhp = np.empty((B, h))
    cdef double[:, ::1] dzv = np.empty((B, h))
    cdef double[:, ::1] rh = np.empty((B, h))
    cdef double[:, ::1] drh = np.empty((B, h))
    cdef double z, r, c, hp, g, dc
    if B == 0 or T == 0:
        return dxw_a, du_a, dh_a
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(h):
                    z = zs[b, t, j]
                    r = rs[b, t, j]
                    c = cs[b, t, j]
                    hp = hs[b, t, j]
                    g = dh[b, j]
                    dc = g * z
                    dzv[b, j] = g * (c - hp)
                    dhp[b, j] = g * (1.0 - z)
                    dxw[b, t, 2 * h + j] = dc * (1.0 - c * c)
                    rh[b, j] = r * hp
            _gemm(True, False, h, h, B, &rh[0, 0], h, &dxw[0, t, 2 * h], T * 3 * h, 1.0, &du[0, 2 * h], 3 * h)
            _gemm(False, True, B, h, h, &dxw[0, t, 2 * h], T * 3 * h, &u[0, 2 * h], 3 * h, 0.0, &drh[0, 0], h)
            for b in range(B):
                for j in range(h):
                    z = zs[b, t, j]
                    r = rs[b, t, j]
                    hp = hs[b, t, j]
                    dhp[b, j] += drh[b, j] * r
                    dxw[b, t, j] = dzv[b, j] * z * (1.0 - z)
                    dxw[b, t, h + j] = drh[b, j] * hp * r * (1.0 - r)
            _gemm(True, False, h, 2 * h, B, &hs[0, t, 0], (T + 1) * h, &dxw[0, t, 0], T * 3 * h, 1.0, &du[0, 0], 3 * h)
            _gemm(False, True, B, h, 2 * h, &dxw[0, t, 0], T * 3 * h, &u[0, 0], 3 * h, 1.0, &dhp[0, 0], h)
            for b in range(B):
                for j in range(h):
                    dh[b, j] = dhp[b, j]
    return dxw_a, du_a, dh_a


def cell_lift_forward(double[::1] v, double[::1] p, cnp.npy_bool[::1] observed,
                      double[:, ::1] w1o, double[::1] b1o, double[:, ::1] w2o, double[::1] b2o,
                      double[:, ::1] w1m, double[::1] b1m, double[:, ::1] w2m, double[::1] b2m):
    cdef Py_ssize_t N = v.shape[0], n
    cdef int H = b1o.shape[0], E = b2o.shape[0], i, k
    out_a = np.empty((N, E))
    cdef double[:, ::1] out = out_a
    cdef double a, acc
    with nogil:
        for n in range(N):
            for k in range(E):
                out[n, k] = b2o[k] if observed[n] else b2m[k]
            if observed[n]:
                for i in range(H):
                    a = v[n] * w1o[0, i] + p[n] * w1o[1, i] + b1o[i]
                    if a > 0:
                        for k in range(E):
                            out[n, k] += a * w2o[i, k]
            else:
                for i in range(H):
                    a = p[n] * w1m[0, i] + b1m[i]
                    if a > 0:
                        for k in range(E):
                            out[n, k] += a * w2m[i, k]
    return out_a


def cell_lift_backward(double[:, ::1] g, double[::1] v, double[::1] p, cnp.npy_bool[::1] observed,
                       double[:, ::1] w1o, double[::1] b1o, double[:, ::1] w2o, double[::1] b2o,
                       double[:, ::1] w1m, double[::1] b1m, double[:, ::1] w2m, double[::1] b2m):
    cdef Py_ssize_t N = v.shape[0], n
    cdef int H = b1o.shape[0], E = b2o.shape[0], i, k
    dp_a = np.zeros(N)
    dw1o_a = np.zeros((2, H)); db1o_a = np.zeros(H); dw2o_a = np.zeros((H, E)); db2o_a = np.zeros(E)
    dw1m_a = np.zeros((1, H)); db1m_a = np.zeros(H); dw2m_a = np.zeros((H, E)); db2m_a = np.zeros(E)
    cdef double[::1] dp = dp_a
    cdef double[:, ::1] dw1o = dw1o_a, dw2o = dw2o_a, dw1m = dw1m_a, dw2m = dw2m_a
    cdef double[::1] db1o = db1o_a, db2o = db2o_a, db1m = db1m_a, db2m = db2m_a
    cdef double a, da, acc
    with nogil:
        for n in range(N):
            if observed[n]:
                for k in range(E):
                    db2o[k] += g[n, k]
                for i in range(H):
                    a = v[n] * w1o[0, i] + p[n] * w1o[1, i] + b1o[i]
                    if a > 0:
                        da = 0.0
                        for k in range(E):
                            dw2o[i, k] += a * g[n, k]
                            da += g[n, k] * w2o[i, k]
                        dw1o[0, i] += da * v[n]
                        dw1o[1, i] += da * p[n]
                        db1o[i] += da
                        dp[n] += da * w1o[1, i]
            else:
                for k in range(E):
                    db2m[k] += g[n, k]
                for i in range(H):
                    a = p[n] * w1m[0, i] + b1m[i]
                    if a > 0:
                        da = 0.0
                        for k in range(E):
                            dw2m[i, k] += a * g[n, k]
                            da += g[n, k] * w2m[i, k]
                        dw1m[0, i] += da * p[n]
                        db1m[i] += da
                        dp[n] += da * w1m[0, i]
    return dp_a, dw1o_a, db1o_a, dw2o_a, db2o_a, dw1m_a, db1m_a, dw2m_a, db2m_a
