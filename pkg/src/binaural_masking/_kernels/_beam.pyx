# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled candidate scorer for the per-band mask beam search.

Hot loop of the mask optimizer: for every partial-mask candidate of one
modulation window, mask the noisy amplitudes, clip against the clean
window and compute the cell correlation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def score_candidates(cnp.uint8_t[:, ::1] bits,
                     double[::1] yw,
                     double[::1] xw,
                     double x_norm,
                     double[::1] xc,
                     double xc_norm,
                     double lam):
    """See binaural_masking._kernels.pure.score_candidates."""
    cdef Py_ssize_t C = bits.shape[0]
    cdef Py_ssize_t M = bits.shape[1]
    out_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] out = out_arr
    if x_norm <= 0.0 or xc_norm <= 0.0:
        return out_arr

    zt_arr = np.empty(M, dtype=np.float64)
    cdef double[::1] zt = zt_arr
    cdef Py_ssize_t c, t
    cdef double z, zsq, cap, zsum, zmean, num, dev, den2, den

    for c in range(C):
        zsq = 0.0
        for t in range(M):
            if bits[c, t]:
                zsq += yw[t] * yw[t]
        cap = lam * sqrt(zsq) / x_norm
        zsum = 0.0
        for t in range(M):
            z = yw[t] if bits[c, t] else 0.0
            if z > cap * xw[t]:
                z = cap * xw[t]
            zt[t] = z
            zsum += z
        zmean = zsum / M
        num = 0.0
        den2 = 0.0
        for t in range(M):
            num += xc[t] * zt[t]
            dev = zt[t] - zmean
            den2 += dev * dev
        den = xc_norm * sqrt(den2)
        if den > 0.0:
            out[c] = num / den
    return out_arr
