# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled risk-set accumulation for the Cox partial likelihood.

Same contract as ``patentsurv._pykernel.accumulate``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def accumulate(double[:, ::1] x, double[::1] eta, long[::1] event, long[::1] bounds, bint efron, bint detail):
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1]
    cdef Py_ssize_t ngroups = bounds.shape[0] - 1
    cdef Py_ssize_t g, i, j, k, r, lo, hi, nd
    # s2, d2 and ig are filled in the lower triangle only; ig is mirrored before use
    cdef double shift = -INFINITY, top, scale, w, s0 = 0.0, d0, frac, denom, inv
    cdef double loglik = 0.0, sum_inv, sum_frac_inv

    score_arr = np.zeros(p)
    info_arr = np.zeros((p, p))
    s1_arr = np.zeros(p)
    s2_arr = np.zeros((p, p))
    d1_arr = np.zeros(p)
    d2_arr = np.zeros((p, p))
    xsum_arr = np.zeros(p)
    a_arr = np.zeros(p)
    ug_arr = np.zeros(p)
    ig_arr = np.zeros((p, p))
    cdef double[::1] score = score_arr
    cdef double[:, ::1] info = info_arr
    cdef double[::1] s1 = s1_arr
    cdef double[:, ::1] s2 = s2_arr
    cdef double[::1] d1 = d1_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef double[::1] xsum = xsum_arr
    cdef double[::1] a = a_arr
    cdef double[::1] ug = ug_arr
    cdef double[:, ::1] ig = ig_arr
    cdef double[:, ::1] u_by_time
    cdef double[:, :, ::1] i_by_time

    if detail:
        u_arr = np.zeros((ngroups, p))
        i_arr = np.zeros((ngroups, p, p))
        u_by_time = u_arr
        i_by_time = i_arr
    else:
        u_arr = None
        i_arr = None

    for g in range(ngroups):
        lo = bounds[g]
        hi = bounds[g + 1]
        top = eta[lo]
        for r in range(lo + 1, hi):
            if eta[r] > top:
                top = eta[r]
        if top > shift:
            if s0 > 0.0:
                scale = exp(shift - top)
                s0 *= scale
                for i in range(p):
                    s1[i] *= scale
                    for j in range(p):
                        s2[i, j] *= scale
            shift = top

        nd = 0
        d0 = 0.0
        for i in range(p):
            d1[i] = 0.0
            xsum[i] = 0.0
            for j in range(p):
                d2[i, j] = 0.0
        for r in range(lo, hi):
            w = exp(eta[r] - shift)
            s0 += w
            for i in range(p):
                s1[i] += w * x[r, i]
                for j in range(i + 1):
                    s2[i, j] += w * x[r, i] * x[r, j]
            if event[r] != 0:
                nd += 1
                d0 += w
                loglik += eta[r]
                for i in range(p):
                    xsum[i] += x[r, i]
                    d1[i] += w * x[r, i]
                    for j in range(i + 1):
                        d2[i, j] += w * x[r, i] * x[r, j]
        if nd == 0:
            continue

        for i in range(p):
            ug[i] = xsum[i]
            for j in range(p):
                ig[i, j] = 0.0
        if efron and nd > 1:
            sum_inv = 0.0
            sum_frac_inv = 0.0
            for k in range(nd):
                frac = <double>k / <double>nd
                denom = s0 - frac * d0
                inv = 1.0 / denom
                sum_inv += inv
                sum_frac_inv += frac * inv
                loglik -= log(denom) + shift
                for i in range(p):
                    a[i] = (s1[i] - frac * d1[i]) * inv
                    ug[i] -= a[i]
                    for j in range(i + 1):
                        ig[i, j] -= a[i] * a[j]
            for i in range(p):
                for j in range(i + 1):
                    ig[i, j] += sum_inv * s2[i, j] - sum_frac_inv * d2[i, j]
        else:
            inv = 1.0 / s0
            loglik -= nd * (log(s0) + shift)
            for i in range(p):
                a[i] = s1[i] * inv
                ug[i] -= nd * a[i]
            for i in range(p):
                for j in range(i + 1):
                    ig[i, j] = nd * (s2[i, j] * inv - a[i] * a[j])

        for i in range(p):
            for j in range(i):
                ig[j, i] = ig[i, j]
        for i in range(p):
            score[i] += ug[i]
            for j in range(p):
                info[i, j] += ig[i, j]
        if detail:
            for i in range(p):
                u_by_time[g, i] = ug[i]
                for j in range(p):
                    i_by_time[g, i, j] = ig[i, j]

    return loglik, score_arr, info_arr, u_arr, i_arr
