"""Pure-numpy fallback for the compiled power-mean kernels."""

import numpy as np


def _pow_nonzero(r, e):
    out = np.zeros_like(r)
    nz = r > 0.0
    out[nz] = r[nz] ** e
    return out


def factored_power(values, weights, p):
    a = np.abs(np.asarray(values, dtype=np.float64))
    m = float(a.max()) if a.shape[0] else 0.0
    if m == 0.0:
        return 0.0, 0.0, np.zeros(a.shape[0])
    r = a / m
    coeff = weights * _pow_nonzero(r, p - 1.0)
    # sequential accumulation mirrors the compiled kernel's summation order
    s = float(np.add.accumulate(coeff * r)[-1])
    return m, s, coeff


def power_sum(values, weights, p):
    a = np.abs(np.asarray(values, dtype=np.float64))
    m = float(a.max()) if a.shape[0] else 0.0
    if m == 0.0:
        return 0.0, 0.0
    return m, float(np.add.accumulate(weights * _pow_nonzero(a / m, p))[-1])


def log_power_weights(values, scale, p):
    a = np.abs(np.asarray(values, dtype=np.float64))
    return _pow_nonzero(a / scale, p - 1.0)
