"""Compiled and pure-numpy kernel backends must agree; the fallback must be selectable."""

import os
import subprocess
import sys

import numpy as np
import pytest

from linfeig import _accel, _kernels_py

try:
    from linfeig import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

needs_ext = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")


@needs_ext
class TestParity:
    @pytest.mark.parametrize("p", [1.0, 2.0, 4.0, 7.3, 64.0, 512.0, 1e4])
    def test_factored_power(self, p, rng):
        v, w = rng.standard_normal(500), rng.random(500)
        m1, s1, c1 = _compiled.factored_power(v, w, p)
        m2, s2, c2 = _kernels_py.factored_power(v, w, p)
        assert m1 == m2
        assert s1 == pytest.approx(s2, rel=1e-13)
        assert np.allclose(c1, c2, rtol=1e-13, atol=0)

    @pytest.mark.parametrize("p", [1.0, 3.0, 8.5, 256.0])
    def test_power_sum(self, p, rng):
        v, w = rng.standard_normal(300), rng.random(300)
        m1, s1 = _compiled.power_sum(v, w, p)
        m2, s2 = _kernels_py.power_sum(v, w, p)
        assert m1 == m2
        assert s1 == pytest.approx(s2, rel=1e-13)

    @pytest.mark.parametrize("p", [2.0, 5.5, 128.0])
    def test_log_power_weights(self, p, rng):
        v = rng.random(200) * 3
        assert np.allclose(_compiled.log_power_weights(v, 2.5, p),
                           _kernels_py.log_power_weights(v, 2.5, p), rtol=1e-13, atol=0)

    def test_zero_field(self):
        z = np.zeros(5)
        assert _compiled.factored_power(z, np.ones(5), 4.0)[:2] == (0.0, 0.0)
        assert _kernels_py.factored_power(z, np.ones(5), 4.0)[:2] == (0.0, 0.0)

    def test_compiled_selected_by_default(self):
        assert _accel.BACKEND == ("python" if os.environ.get("LINFEIG_BACKEND") == "python"
                                  else "cython")


def test_env_forces_fallback():
    env = dict(os.environ, LINFEIG_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import linfeig; print(linfeig.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_accel_coerces_inputs():
    m, s = _accel.power_sum([1, -2, 0], [1, 1, 1], 2)
    assert m == 2.0
    assert s == pytest.approx(1.25)
