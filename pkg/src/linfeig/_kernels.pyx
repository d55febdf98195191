# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled reductions for max-factored p-power means."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow

cnp.import_array()


cdef inline double _ipow(double x, long k) nogil:
    """x^k for integer k >= 0 by repeated squaring."""
    cdef double acc = 1.0
    while k > 0:
        if k & 1:
            acc *= x
        x *= x
        k >>= 1
    return acc


cdef inline long _int_exponent(double e):
    """e as a small nonnegative integer, or -1 when pow() must be used."""
    if e >= 0.0 and e <= 1048576.0 and e == <double>(<long>e):
        return <long>e
    return -1


cdef inline double _power(double x, double e, long k) nogil:
    if k >= 0:
        return _ipow(x, k)
    return pow(x, e)


def factored_power(double[::1] values, double[::1] weights, double p):
    """Return ``(m, S, coeff)`` with m = max|v|, S = sum w (|v|/m)^p and
    coeff_i = w_i (|v_i|/m)^(p-1).

    Summation runs in node order, so results are reproducible bit for bit.
    """
    cdef Py_ssize_t i, n = values.shape[0]
    cdef double m = 0.0, a, r, rp1, s = 0.0
    coeff_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] coeff = coeff_arr
    for i in range(n):
        a = fabs(values[i])
        if a > m:
            m = a
    if m == 0.0:
        return 0.0, 0.0, coeff_arr
    cdef long k = _int_exponent(p - 1.0)
    for i in range(n):
        r = fabs(values[i]) / m
        if r > 0.0:
            rp1 = _power(r, p - 1.0, k)
            coeff[i] = weights[i] * rp1
            s += coeff[i] * r
    return m, s, coeff_arr


def power_sum(double[::1] values, double[::1] weights, double p):
    """Return ``(m, S)`` without materialising the coefficient array."""
    cdef Py_ssize_t i, n = values.shape[0]
    cdef double m = 0.0, a, s = 0.0
    for i in range(n):
        a = fabs(values[i])
        if a > m:
            m = a
    if m == 0.0:
        return 0.0, 0.0
    cdef long k = _int_exponent(p)
    for i in range(n):
        a = fabs(values[i]) / m
        if a > 0.0:
            s += weights[i] * _power(a, p, k)
    return m, s


def log_power_weights(double[::1] values, double scale, double p):
    """(|v|/scale)^(p-1); zeros stay zero."""
    cdef Py_ssize_t i, n = values.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef long k = _int_exponent(p - 1.0)
    for i in range(n):
        if values[i] != 0.0:
            out[i] = _power(fabs(values[i]) / scale, p - 1.0, k)
    return out_arr
