# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the operational correlation and its adjoint.

Mirrors backend/python_ref.py; the test suite cross-checks both backends
on random problems, so any change here needs the same change there.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, cosh, exp, sin, sinh

cnp.import_array()

NAME = "compiled"

cdef enum:
    # largest supported kernel window (15x15); median scratch lives on the stack
    MAX_TAPS = 225


cdef inline double _clip(double u, double lim) noexcept nogil:
    if u > lim:
        return lim
    if u < -lim:
        return -lim
    return u


cdef inline double _guard(double y, double g) noexcept nogil:
    # sign-preserving floor on the magnitude; y == 0 counts as positive
    if y >= 0.0:
        return y if y > g else g
    return y if y < -g else -g


cdef inline double _nodal_eval(int nodal, double w, double y, double kn,
                               double kc, double g, double lim) noexcept nogil:
    cdef double u, yg
    if nodal == 0:
        return w * y
    elif nodal == 1:
        return kn * w * y * y * y
    elif nodal == 2:
        return sin(kn * w * y)
    elif nodal == 3:
        return exp(_clip(w * y, lim)) - 1.0
    elif nodal == 4:
        return sinh(_clip(kn * w * y, lim))
    elif nodal == 5:
        yg = _guard(y, g)
        return sin(kn * w * yg) / yg
    else:
        return sin(kc * w * y * y)


cdef inline double _nodal_gw(int nodal, double w, double y, double kn,
                             double kc, double g, double lim) noexcept nogil:
    cdef double u, yg
    if nodal == 0:
        return y
    elif nodal == 1:
        return kn * y * y * y
    elif nodal == 2:
        return kn * y * cos(kn * w * y)
    elif nodal == 3:
        u = w * y
        if u > lim or u < -lim:
            return 0.0
        return y * exp(u)
    elif nodal == 4:
        u = kn * w * y
        if u > lim or u < -lim:
            return 0.0
        return kn * y * cosh(u)
    elif nodal == 5:
        yg = _guard(y, g)
        return kn * cos(kn * w * yg)
    else:
        return kc * y * y * cos(kc * w * y * y)


cdef inline double _nodal_gy(int nodal, double w, double y, double kn,
                             double kc, double g, double lim) noexcept nogil:
    cdef double u, yg
    if nodal == 0:
        return w
    elif nodal == 1:
        return 3.0 * kn * w * y * y
    elif nodal == 2:
        return kn * w * cos(kn * w * y)
    elif nodal == 3:
        u = w * y
        if u > lim or u < -lim:
            return 0.0
        return w * exp(u)
    elif nodal == 4:
        u = kn * w * y
        if u > lim or u < -lim:
            return 0.0
        return kn * w * cosh(u)
    elif nodal == 5:
        yg = _guard(y, g)
        u = kn * w * yg
        return kn * w * cos(u) / yg - sin(u) / (yg * yg)
    else:
        return 2.0 * kc * w * y * cos(kc * w * y * y)


def pair_forward(double[:, ::1] w, double[:, ::1] ypad, int nodal, int pool,
                 consts):
    """Compiled twin of python_ref.pair_forward (same contract)."""
    cdef int kx = w.shape[0]
    cdef int ky = w.shape[1]
    cdef int H = ypad.shape[0] - kx + 1
    cdef int W = ypad.shape[1] - ky + 1
    cdef int ntap = kx * ky
    cdef double kn = consts.k_nodal
    cdef double kc = consts.k_chirp
    cdef double g = consts.sinc_guard
    cdef double lim = consts.arg_clip
    if ntap > MAX_TAPS:
        raise ValueError("kernel window larger than the compiled backend supports")

    out_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double terms[MAX_TAPS]
    cdef double order[MAX_TAPS]
    cdef int m, n, r, t, j, p
    cdef int q = (ntap - 1) // 2
    cdef double acc, key, med

    if pool == 0:
        with nogil:
            for m in range(H):
                for n in range(W):
                    acc = 0.0
                    for r in range(kx):
                        for t in range(ky):
                            acc += _nodal_eval(nodal, w[r, t],
                                               ypad[m + r, n + t],
                                               kn, kc, g, lim)
                    out[m, n] = acc
        return out_arr, None

    am_arr = np.empty((H, W), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] am = am_arr
    with nogil:
        for m in range(H):
            for n in range(W):
                j = 0
                for r in range(kx):
                    for t in range(ky):
                        terms[j] = _nodal_eval(nodal, w[r, t],
                                               ypad[m + r, n + t],
                                               kn, kc, g, lim)
                        order[j] = terms[j]
                        j += 1
                # insertion sort, then first tap holding the lower middle
                for j in range(1, ntap):
                    key = order[j]
                    p = j - 1
                    while p >= 0 and order[p] > key:
                        order[p + 1] = order[p]
                        p -= 1
                    order[p + 1] = key
                med = order[q]
                for j in range(ntap):
                    if terms[j] == med:
                        break
                out[m, n] = med
                am[m, n] = j
    return out_arr, am_arr


def pair_backward(double[:, ::1] w, double[:, ::1] ypad, double[:, ::1] dx,
                  argmed, int nodal, int pool, consts,
                  bint need_input_grad=True):
    """Compiled twin of python_ref.pair_backward (same contract)."""
    cdef int kx = w.shape[0]
    cdef int ky = w.shape[1]
    cdef int H = dx.shape[0]
    cdef int W = dx.shape[1]
    cdef double kn = consts.k_nodal
    cdef double kc = consts.k_chirp
    cdef double g = consts.sinc_guard
    cdef double lim = consts.arg_clip

    dw_arr = np.zeros((kx, ky), dtype=np.float64)
    dyp_arr = np.zeros((ypad.shape[0], ypad.shape[1]), dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, ::1] dyp = dyp_arr
    cdef cnp.int32_t[:, ::1] am
    cdef int m, n, r, t, j
    cdef double d, yv
    cdef bint want_dy = need_input_grad

    if pool == 0:
        with nogil:
            for m in range(H):
                for n in range(W):
                    d = dx[m, n]
                    for r in range(kx):
                        for t in range(ky):
                            yv = ypad[m + r, n + t]
                            dw[r, t] += d * _nodal_gw(nodal, w[r, t], yv,
                                                      kn, kc, g, lim)
                            if want_dy:
                                dyp[m + r, n + t] += d * _nodal_gy(
                                    nodal, w[r, t], yv, kn, kc, g, lim)
        return dw_arr, dyp_arr

    am = argmed
    with nogil:
        for m in range(H):
            for n in range(W):
                d = dx[m, n]
                j = am[m, n]
                r = j // ky
                t = j - r * ky
                yv = ypad[m + r, n + t]
                dw[r, t] += d * _nodal_gw(nodal, w[r, t], yv, kn, kc, g, lim)
                if want_dy:
                    dyp[m + r, n + t] += d * _nodal_gy(nodal, w[r, t], yv,
                                                       kn, kc, g, lim)
    return dw_arr, dyp_arr
