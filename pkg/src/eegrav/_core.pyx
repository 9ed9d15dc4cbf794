# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-cell kernels; same contract as ``_core_py``.

Small counts use direct summation for Q0/Q1, which is exact up to rounding
for any psi; large counts use the power series, Stirling expansions when
1/psi is large, or the Gamma functions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p
from scipy.special.cython_special cimport gammaln, psi as digamma

cnp.import_array()

DEF POISSON_PSI = 1e-12
DEF SERIES_X = 1e-3
DEF DIRECT_MAX = 64
DEF STIRLING_R = 50.0


cdef inline double _lgamma_tail(double x) noexcept nogil:
    cdef double x2 = x * x
    return (1.0 / 12 - (1.0 / 360 - (1.0 / 1260 - 1.0 / (1680 * x2)) / x2) / x2) / x


cdef inline double _digamma_tail(double x) noexcept nogil:
    cdef double x2 = x * x
    return -0.5 / x - (1.0 / 12 - (1.0 / 120 - (1.0 / 252 - 1.0 / (240 * x2)) / x2) / x2) / x2


cdef inline void _q_terms(double y, double p, double *q0, double *q1) noexcept nogil:
    cdef double n, s1, s2, s3, s4, r, kp
    cdef long k, ny
    q0[0] = 0.0
    q1[0] = 0.0
    if y <= 0:
        return
    if y <= DIRECT_MAX:
        ny = <long>y
        for k in range(1, ny):
            kp = k * p
            q0[0] += log1p(kp)
            q1[0] += kp / (1.0 + kp)
        return
    if y * p < SERIES_X:
        n = y - 1.0
        s1 = n * (n + 1) / 2
        s2 = n * (n + 1) * (2 * n + 1) / 6
        s3 = s1 * s1
        s4 = n * (n + 1) * (2 * n + 1) * (3 * n * n + 3 * n - 1) / 30
        q0[0] = p * (s1 - p * (s2 / 2 - p * (s3 / 3 - p * s4 / 4)))
        q1[0] = p * (s1 - p * (s2 - p * (s3 - p * s4)))
        return
    r = 1.0 / p
    if r >= STIRLING_R:
        n = log1p(y / r)
        q0[0] = (r + y - 0.5) * n - y + _lgamma_tail(r + y) - _lgamma_tail(r)
        q1[0] = y - r * n - r * (_digamma_tail(r + y) - _digamma_tail(r))
        return
    q0[0] = gammaln(y + r) - gammaln(r) - y * log(r)
    q1[0] = y - r * (digamma(y + r) - digamma(r))


def nb_terms(y, mu, psi):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ma = np.ascontiguousarray(mu, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pa = np.ascontiguousarray(psi, dtype=np.float64)
    cdef Py_ssize_t n = ya.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dmu = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dlp = np.empty(n)
    cdef double yi, mi, pi_, x, l1p, q0, q1, ylogmu, h
    with nogil:
        for i in range(n):
            yi = ya[i]
            mi = ma[i]
            pi_ = pa[i]
            ylogmu = yi * log(mi) if yi > 0 else 0.0
            if pi_ < POISSON_PSI:
                ll[i] = ylogmu - mi - gammaln(yi + 1.0)
                dmu[i] = yi / mi - 1.0
                dlp[i] = pi_ * ((yi - mi) * (yi - mi) - yi) / 2
                continue
            _q_terms(yi, pi_, &q0, &q1)
            x = mi * pi_
            l1p = log1p(x)
            ll[i] = ylogmu - gammaln(yi + 1.0) + q0 - (yi + 1.0 / pi_) * l1p
            dmu[i] = yi / mi - (yi * pi_ + 1.0) / (1.0 + x)
            if x < SERIES_X:
                h = mi * x * (0.5 - x * (2.0 / 3.0 - x * (0.75 - 0.8 * x)))
            else:
                h = (l1p - x / (1.0 + x)) / pi_
            dlp[i] = q1 - yi * x / (1.0 + x) + h
    return ll, dmu, dlp


def lag_sums(Y, u, Py_ssize_t start):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Ya = np.ascontiguousarray(Y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ua = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t P = Ya.shape[0], T = Ya.shape[1], D = ua.shape[0]
    cdef Py_ssize_t i, t, d
    cdef double acc
    if start < D:
        raise ValueError("start must leave room for every lag")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((P, T - start))
    with nogil:
        for i in range(P):
            for t in range(start, T):
                acc = 0.0
                for d in range(1, D + 1):
                    acc = acc + ua[d - 1] * Ya[i, t - d]
                out[i, t - start] = acc
    return out
