# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv2d and distance kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] bias):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t b, o, c, i, j, r, s, rr, ss, r0, r1, s0, s1
    cdef double wv
    out_arr = np.empty((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    for b in range(B):
        for o in range(O):
            for r in range(H):
                for s in range(W):
                    out[b, o, r, s] = bias[o]
            for c in range(C):
                for i in range(KH):
                    r0 = ph - i if ph - i > 0 else 0
                    r1 = H + ph - i if H + ph - i < H else H
                    for j in range(KW):
                        s0 = pw - j if pw - j > 0 else 0
                        s1 = W + pw - j if W + pw - j < W else W
                        wv = w[o, c, i, j]
                        for r in range(r0, r1):
                            rr = r + i - ph
                            for s in range(s0, s1):
                                out[b, o, r, s] += wv * x[b, c, rr, s + j - pw]
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[:, :, :, ::1] gout):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t b, o, c, i, j, r, s, rr, r0, r1, s0, s1
    cdef double wv, acc, g
    dx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    dw_arr = np.zeros((O, C, KH, KW), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    for b in range(B):
        for o in range(O):
            acc = 0.0
            for r in range(H):
                for s in range(W):
                    acc += gout[b, o, r, s]
            db[o] += acc
            for c in range(C):
                for i in range(KH):
                    r0 = ph - i if ph - i > 0 else 0
                    r1 = H + ph - i if H + ph - i < H else H
                    for j in range(KW):
                        s0 = pw - j if pw - j > 0 else 0
                        s1 = W + pw - j if W + pw - j < W else W
                        wv = w[o, c, i, j]
                        acc = 0.0
                        for r in range(r0, r1):
                            rr = r + i - ph
                            for s in range(s0, s1):
                                g = gout[b, o, r, s]
                                acc += g * x[b, c, rr, s + j - pw]
                                dx[b, c, rr, s + j - pw] += wv * g
                        dw[o, c, i, j] += acc
    return dx_arr, dw_arr, db_arr


def sq_dists(double[:, ::1] points, double[:, ::1] centers):
    cdef Py_ssize_t n = points.shape[0], k = centers.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for t in range(d):
                diff = points[i, t] - centers[j, t]
                acc += diff * diff
            out[i, j] = acc
    return out_arr
