"""Kernel backend selection: compiled extension when importable, numpy otherwise.

Set ``LINFEIG_BACKEND=python`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("LINFEIG_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def factored_power(values, weights, p):
    return kernels.factored_power(_c(values), _c(weights), float(p))


def power_sum(values, weights, p):
    return kernels.power_sum(_c(values), _c(weights), float(p))


def log_power_weights(values, scale, p):
    return kernels.log_power_weights(_c(values), float(scale), float(p))
