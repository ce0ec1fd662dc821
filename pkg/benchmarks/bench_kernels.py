"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py            # kernels only
    python3 benchmarks/bench_kernels.py --e2e      # also a full GME assembly per backend

The end-to-end run starts a child process with ``L3CAV_NUMBA=0`` or ``1`` so
the module-level backend switch is exercised the way users set it.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from l3cav import kernels
from l3cav._accel import HAVE_NUMBA


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(rng):
    m, nh = 20000, 150
    dgx, dgy = rng.normal(size=m) * 0.02, rng.normal(size=m) * 0.02
    cx, cy = rng.uniform(-3000, 3000, nh), rng.uniform(-2000, 2000, nh)
    form = rng.normal(size=(m, 4))
    rid = rng.integers(0, 4, nh)
    yield ("phase_sum", lambda: kernels.phase_sum_numpy(dgx, dgy, cx, cy, form, rid),
           lambda: kernels._phase_sum_numba(dgx, dgy, cx, cy, form, rid))

    g = np.linspace(1e-4, 0.03, 3000)
    args = (g, 1.0, 9.0, 1.0, 310.0, 1.0 / 1.0, 1.0 / 1.0, 1, 2000, 60)
    yield ("neff_roots", lambda: kernels.neff_roots_numpy(*args),
           lambda: kernels._neff_roots_numba(*args))

    n, ng = 800, 400

    def prof():
        return (rng.normal(size=(n, 3, 3)) + 1j * rng.normal(size=(n, 3, 3)))

    fa_p, fa_m, fb_p, fb_m = prof(), prof(), prof(), prof()
    ka = rng.uniform(0.001, 0.02, (n, 3)) + 0j
    kb = rng.uniform(0.001, 0.02, (n, 3)) + 0j
    ga, gb = rng.integers(0, ng, n), rng.integers(0, ng, n)
    eta = rng.normal(size=(ng, ng)) + 0j
    clad = np.array([1.0, 1.0])
    a = (fa_p, fa_m, ka, ga, fb_p, fb_m, kb, gb, eta, clad, 310.0)
    yield ("overlap", lambda: kernels.overlap_numpy(*a), lambda: kernels._overlap_numba(*a))


def bench_kernels(repeat=3, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    rows = []
    for name, f_np, f_nb in _cases(rng):
        t_np, r_np = _best_of(f_np, repeat)
        if HAVE_NUMBA:
            f_nb()                                  # compile outside the timing
            t_nb, r_nb = _best_of(f_nb, repeat)
            a, b = np.asarray(r_nb), np.asarray(r_np)
            # both backends mark "no guided mode" with NaN
            if not np.array_equal(np.isnan(a), np.isnan(b)):
                err = float("inf")
            else:
                err = float(np.nanmax(np.abs(a - b)) / max(np.nanmax(np.abs(b)), 1e-300))
        else:
            t_nb, err = float("nan"), float("nan")
        rows.append((name, t_np, t_nb, err))
    return rows


_E2E = """
import time
from l3cav import geometry, gme
from l3cav._accel import backend_name
base, d = geometry.reference_geometry()
lat = geometry.build_l3_supercell(base, d)
gme.assemble(lat, gme.GmeBasis(1.2))            # warm-up (jit compile)
t0 = time.perf_counter()
gme.assemble(lat, gme.GmeBasis({gmax}))
print(backend_name(), time.perf_counter() - t0)
"""


def bench_e2e(gmax=2.0):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, L3CAV_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _E2E.format(gmax=gmax)], env=env,
                             capture_output=True, text=True, check=True)
        name, secs = res.stdout.split()[-2:]
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--e2e", action="store_true")
    ap.add_argument("--gmax", type=float, default=2.0)
    a = ap.parse_args()
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<12}{'numpy [s]':>12}{'numba [s]':>12}{'speed-up':>10}{'rel. diff':>12}")
    for name, t_np, t_nb, err in bench_kernels(a.repeat):
        print(f"{name:<12}{t_np:12.4f}{t_nb:12.4f}{t_np / t_nb:10.1f}{err:12.2e}")
    if a.e2e:
        for name, secs in bench_e2e(a.gmax).items():
            print(f"assemble gmax={a.gmax} [{name}]: {secs:.2f} s")


if __name__ == "__main__":
    main()
