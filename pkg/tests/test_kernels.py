import os
import subprocess
import sys

import numpy as np
import pytest

from flowstab import _kernels as K
from flowstab.fields import build_field
from flowstab.variational import IntegratorConfig, integrate_flow

needs_numba = pytest.mark.skipif(not K._HAVE_NUMBA, reason="numba not installed")

CASES = [
    {"family": "Y1", "n": 2, "alpha": [-2.0, -1.0],
     "perturbation": {"kind": "Bounded", "gamma": 0.2, "coupled": True}},
    {"family": "Y2", "n": 3, "beta": [-1, -1.5, -2], "m": [2, 2, 4],
     "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
    {"family": "Y3", "n": 2, "alpha": [-1.0, -0.5], "beta": [-1.0, -0.3], "m": [2, 4],
     "perturbation": {"kind": "PowerInBall", "gamma": 0.1, "coupled": True}},
    {"family": "Y1", "n": 1, "alpha": [-1.0], "perturbation": {"kind": "LinearGrowth", "gamma": 0.3}},
    {"family": "X3", "n": 4, "alpha": [-1.0] * 4, "beta": [-0.5] * 4, "m": [2] * 4},
]


@needs_numba
@pytest.mark.parametrize("cfg", CASES)
def test_field_backends_agree(cfg):
    f = build_field(cfg, certify=False)
    P = np.random.Generator(np.random.Philox(3)).uniform(-2, 2, (50, f.n))
    np.testing.assert_allclose(K.catalog_field(P, f.params, use_numba=True),
                               K.catalog_field(P, f.params, use_numba=False), rtol=1e-14, atol=1e-15)


@needs_numba
@pytest.mark.parametrize("method", ["dopri", "rk4"])
@pytest.mark.parametrize("cfg", CASES)
def test_integrator_backends_agree(cfg, method):
    f = build_field(cfg, certify=False)
    X0 = np.random.Generator(np.random.Philox(5)).uniform(-1.5, 1.5, (8, f.n))
    ic = IntegratorConfig(method=method, fixed_h=1e-2)
    a = integrate_flow(f, X0, 3.0, ic, use_numba=True)
    b = integrate_flow(f, X0, 3.0, ic, use_numba=False)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-14)


def test_environment_switch():
    code = "from flowstab._kernels import backend; print(backend())"
    env = dict(os.environ, FLOWSTAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == "numpy"
