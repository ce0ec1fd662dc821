import json
import os
import subprocess
import sys

import numpy as np
import pytest

from l3cav import kernels
from l3cav._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12))


@needs_numba
def test_phase_sum_backends_agree(rng):
    m, nh = 500, 40
    args = (rng.normal(size=m) * 0.02, rng.normal(size=m) * 0.02, rng.uniform(-3000, 3000, nh),
            rng.uniform(-2000, 2000, nh), rng.normal(size=(m, 3)), rng.integers(0, 3, nh))
    a = kernels.phase_sum_numpy(*args)
    b = kernels._phase_sum_numba(*args)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()


def test_phase_sum_matches_direct_sum(rng):
    m, nh = 50, 7
    dgx, dgy = rng.normal(size=m) * 0.02, rng.normal(size=m) * 0.02
    cx, cy = rng.uniform(-300, 300, nh), rng.uniform(-200, 200, nh)
    form, rid = rng.normal(size=(m, 2)), rng.integers(0, 2, nh)
    want = np.array([sum(form[i, rid[h]] * np.exp(-1j * (dgx[i] * cx[h] + dgy[i] * cy[h]))
                         for h in range(nh)) for i in range(m)])
    np.testing.assert_allclose(kernels.phase_sum(dgx, dgy, cx, cy, form, rid), want, rtol=1e-12)


@needs_numba
def test_neff_root_backends_agree():
    g = np.linspace(1e-3, 0.05, 300)
    for order in (0, 1):
        a = kernels.neff_roots_numpy(g, 1.0, 3.17 ** 2, 1.0, 310.0, 1.0, 1.0, order)
        b = kernels._neff_roots_numba(g, 1.0, 3.17 ** 2, 1.0, 310.0, 1.0, 1.0, order, 2000, 60)
        assert np.array_equal(np.isnan(a), np.isnan(b))
        ok = ~np.isnan(a)
        assert np.abs(a[ok] - b[ok]).max() < 1e-12


@needs_numba
def test_overlap_backends_agree(rng):
    n, ng = 60, 30

    def prof():
        return rng.normal(size=(n, 3, 3)) + 1j * rng.normal(size=(n, 3, 3))

    args = (prof(), prof(), rng.uniform(0.001, 0.02, (n, 3)) + 0j, rng.integers(0, ng, n),
            prof(), prof(), rng.uniform(0.001, 0.02, (n, 3)) + 0j, rng.integers(0, ng, n),
            rng.normal(size=(ng, ng)) + 0j, np.array([1.0, 0.5]), 310.0)
    a = kernels.overlap_numpy(*args)
    b = kernels._overlap_numba(*args)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()


_PROBE = """
import json, numpy as np
from l3cav import _accel, geometry as G, gme
lat = G.build_l3_supercell(G.triangular_lattice(425.0, 115.0, (12, 8)), G.L3Design())
f = [m.frequency for m in gme.solve_modes(lat, gme.GmeBasis(1.25), window=(0.2, 0.32))]
print(json.dumps({"backend": _accel.backend_name(), "f": f}))
"""


def _run(flag):
    env = dict(os.environ, L3CAV_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_environment_switch_selects_backend():
    off = _run("0")
    assert off["backend"] == "numpy"
    if HAVE_NUMBA:
        on = _run("1")
        assert on["backend"] == "numba"
        np.testing.assert_allclose(on["f"], off["f"], rtol=1e-12)
