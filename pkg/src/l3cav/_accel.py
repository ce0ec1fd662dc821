"""Numba detection and the backend switch for the hot kernels.

Set ``L3CAV_NUMBA=0`` in the environment to force the pure-numpy paths.
"""
import os

import numpy as np


def _numba_wanted():
    return os.environ.get("L3CAV_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def _probe_numba():
    if not _numba_wanted():
        return False, None
    try:
        import numba

        @numba.njit(cache=False)
        def _probe(x):
            return np.sum(x * x)

        _probe(np.ones(3))
    except Exception:  # broken llvmlite, missing numba, ...
        return False, None
    return True, numba


HAVE_NUMBA, _numba = _probe_numba()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


prange = _numba.prange if HAVE_NUMBA else range


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
