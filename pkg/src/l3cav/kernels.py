"""Hot numerical kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of this module resolve to the numba versions
when numba is importable and ``L3CAV_NUMBA`` is not ``0``.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

# Layer order used by every kernel: 0 = lower cladding, 1 = core, 2 = upper cladding.
LOWER, CORE, UPPER = 0, 1, 2


# --------------------------------------------------------------------------
# Structure factor of a set of holes
# --------------------------------------------------------------------------

def phase_sum_numpy(dgx, dgy, cx, cy, form, rid, chunk=2048):
    """out[m] = sum_h form[m, rid[h]] * exp(-i (dgx[m] cx[h] + dgy[m] cy[h]))."""
    m = dgx.size
    out = np.zeros(m, dtype=np.complex128)
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        arg = np.outer(dgx[sl], cx) + np.outer(dgy[sl], cy)
        w = form[sl][:, rid]
        out[sl] = np.sum(w * (np.cos(arg) - 1j * np.sin(arg)), axis=1)
    return out


@njit
def _phase_sum_numba(dgx, dgy, cx, cy, form, rid):
    m = dgx.size
    nh = cx.size
    out = np.zeros(m, dtype=np.complex128)
    for i in range(m):
        re = 0.0
        im = 0.0
        for h in range(nh):
            arg = dgx[i] * cx[h] + dgy[i] * cy[h]
            w = form[i, rid[h]]
            re += w * np.cos(arg)
            im -= w * np.sin(arg)
        out[i] = re + 1j * im
    return out


# --------------------------------------------------------------------------
# Slab dispersion relation
# --------------------------------------------------------------------------

def _disp_fn(n, g, e1, e2, e3, d, w1, w3):
    # w1, w3: cladding weights relative to the core (1 for TE, eps2/eps_j for TM)
    k = g * np.sqrt(np.maximum(e2 / (n * n) - 1.0, 0.0))
    x1 = g * np.sqrt(np.maximum(1.0 - e1 / (n * n), 0.0))
    x3 = g * np.sqrt(np.maximum(1.0 - e3 / (n * n), 0.0))
    p = w1 * x1
    q = w3 * x3
    num = (k * k - p * q) * np.sin(k * d) - k * (p + q) * np.cos(k * d)
    scale = k * k + p * q + k * (p + q)
    return num / scale


def neff_roots_numpy(g, e1, e2, e3, d, w1, w3, order, ngrid=2000, iters=60):
    """n_eff of the ``order``-th guided mode for every entry of ``g``; NaN if absent."""
    g = np.asarray(g, dtype=float)
    lo = np.sqrt(max(e1, e3))
    hi = np.sqrt(e2)
    span = hi - lo
    grid = np.linspace(hi - 1e-13 * span, lo + 1e-13 * span, ngrid)  # descending n_eff
    vals = _disp_fn(grid[:, None], g[None, :], e1, e2, e3, d, w1, w3)
    sgn = np.signbit(vals)
    change = sgn[1:] != sgn[:-1]
    csum = np.cumsum(change, axis=0)
    hit = change & (csum == order + 1)
    found = hit.any(axis=0)
    j = np.argmax(hit, axis=0)
    out = np.full(g.shape, np.nan)
    if not found.any():
        return out
    gi = g[found]
    a = grid[j[found]]
    b = grid[j[found] + 1]
    fa = _disp_fn(a, gi, e1, e2, e3, d, w1, w3)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = _disp_fn(m, gi, e1, e2, e3, d, w1, w3)
        same = np.signbit(fm) == np.signbit(fa)
        a = np.where(same, m, a)
        fa = np.where(same, fm, fa)
        b = np.where(same, b, m)
    out[found] = 0.5 * (a + b)
    return out


@njit
def _disp_scalar(n, g, e1, e2, e3, d, w1, w3):
    k = g * np.sqrt(max(e2 / (n * n) - 1.0, 0.0))
    x1 = g * np.sqrt(max(1.0 - e1 / (n * n), 0.0))
    x3 = g * np.sqrt(max(1.0 - e3 / (n * n), 0.0))
    p = w1 * x1
    q = w3 * x3
    num = (k * k - p * q) * np.sin(k * d) - k * (p + q) * np.cos(k * d)
    return num / (k * k + p * q + k * (p + q))


@njit
def _neff_roots_numba(g, e1, e2, e3, d, w1, w3, order, ngrid, iters):
    lo = np.sqrt(max(e1, e3))
    hi = np.sqrt(e2)
    span = hi - lo
    top = hi - 1e-13 * span
    step = ((lo + 1e-13 * span) - top) / (ngrid - 1)
    out = np.empty(g.size)
    for i in range(g.size):
        out[i] = np.nan
        gi = g[i]
        count = 0
        prev = _disp_scalar(top, gi, e1, e2, e3, d, w1, w3)
        for j in range(1, ngrid):
            n = top + j * step
            cur = _disp_scalar(n, gi, e1, e2, e3, d, w1, w3)
            if (cur < 0.0) != (prev < 0.0):
                if count == order:
                    a = n - step
                    b = n
                    fa = prev
                    for _ in range(iters):
                        m = 0.5 * (a + b)
                        fm = _disp_scalar(m, gi, e1, e2, e3, d, w1, w3)
                        if (fm < 0.0) == (fa < 0.0):
                            a = m
                            fa = fm
                        else:
                            b = m
                    out[i] = 0.5 * (a + b)
                    break
                count += 1
            prev = cur
    return out


# --------------------------------------------------------------------------
# Overlap integrals of layered plane-wave profiles
# --------------------------------------------------------------------------
#
# Every profile is stored per layer as two vector coefficients (for the
# e^{+ikz} and e^{-ikz} terms) and the complex z-wavevector k.  Core terms use
# absolute z with the slab centred at 0; cladding terms use z measured from
# the nearest slab face.

def _z_integral(layer, kappa, d):
    if layer == CORE:
        small = np.abs(kappa) < 1e-12
        safe = np.where(small, 1.0, kappa)
        return np.where(small, d, 2.0 * np.sin(0.5 * safe * d) / safe)
    safe = np.where(kappa == 0, 1.0, kappa)
    if layer == UPPER:
        return 1j / safe
    return -1j / safe


def overlap_numpy(fa_p, fa_m, ka, ga, fb_p, fb_m, kb, gb, eta, inv_eps_clad, d, chunk=256):
    """Cross matrix  M[a, b] = sum_layers w_l(a, b) * int conj(F_a) . F_b dz.

    ``w_core = eta[ga, gb]``; ``w_clad = delta(ga, gb) * inv_eps_clad[l]``.
    """
    na = ga.size
    nb = gb.size
    out = np.zeros((na, nb), dtype=np.complex128)
    for start in range(0, na, chunk):
        sl = slice(start, min(start + chunk, na))
        same_g = ga[sl][:, None] == gb[None, :]
        for layer in (LOWER, CORE, UPPER):
            acc = np.zeros((sl.stop - sl.start, nb), dtype=np.complex128)
            for s, fa in ((1, fa_p), (-1, fa_m)):
                cfa = np.conj(fa[sl, layer, :])
                if not np.any(cfa):
                    continue
                for t, fb in ((1, fb_p), (-1, fb_m)):
                    fbl = fb[:, layer, :]
                    if not np.any(fbl):
                        continue
                    dots = cfa @ fbl.T
                    nz = dots != 0
                    if not nz.any():
                        continue
                    kappa = t * kb[None, :, layer] - s * np.conj(ka[sl, layer])[:, None]
                    val = np.zeros_like(dots)
                    val[nz] = dots[nz] * _z_integral(layer, kappa[nz], d)
                    acc += val
            if layer == CORE:
                out[sl] += eta[np.ix_(ga[sl], gb)] * acc
            else:
                w = inv_eps_clad[0] if layer == LOWER else inv_eps_clad[1]
                out[sl] += np.where(same_g, w * acc, 0.0)
    return out


@njit
def _zint_scalar(layer, kappa, d):
    if layer == 1:
        if abs(kappa) < 1e-12:
            return d + 0j
        return 2.0 * np.sin(0.5 * kappa * d) / kappa
    if kappa == 0:
        return 0j
    if layer == 2:
        return 1j / kappa
    return -1j / kappa


@njit(parallel=False)
def _overlap_numba(fa_p, fa_m, ka, ga, fb_p, fb_m, kb, gb, eta, inv_eps_clad, d):
    na = ga.size
    nb = gb.size
    out = np.zeros((na, nb), dtype=np.complex128)
    for i in prange(na):
        for j in range(nb):
            total = 0j
            for layer in range(3):
                if layer != 1 and ga[i] != gb[j]:
                    continue
                acc = 0j
                for si in range(2):
                    s = 1.0 - 2.0 * si
                    for ti in range(2):
                        t = 1.0 - 2.0 * ti
                        dot = 0j
                        for c in range(3):
                            a = fa_p[i, layer, c] if si == 0 else fa_m[i, layer, c]
                            b = fb_p[j, layer, c] if ti == 0 else fb_m[j, layer, c]
                            dot += np.conj(a) * b
                        if dot == 0:
                            continue
                        kappa = t * kb[j, layer] - s * np.conj(ka[i, layer])
                        acc += dot * _zint_scalar(layer, kappa, d)
                if layer == 1:
                    total += eta[ga[i], gb[j]] * acc
                elif layer == 0:
                    total += inv_eps_clad[0] * acc
                else:
                    total += inv_eps_clad[1] * acc
            out[i, j] = total
    return out


def self_norm(h_p, h_m, k, d):
    """int |h|^2 dz over all three layers, for every profile (diagonal only)."""
    total = np.zeros(k.shape[0])
    for layer in (LOWER, CORE, UPPER):
        for s, ha in ((1, h_p), (-1, h_m)):
            for t, hb in ((1, h_p), (-1, h_m)):
                dot = np.sum(np.conj(ha[:, layer, :]) * hb[:, layer, :], axis=1)
                nz = dot != 0
                if not nz.any():
                    continue
                kappa = t * k[nz, layer] - s * np.conj(k[nz, layer])
                total[nz] += np.real(dot[nz] * _z_integral(layer, kappa, d))
    return total


# --------------------------------------------------------------------------
# Backend selection
# --------------------------------------------------------------------------

def phase_sum(dgx, dgy, cx, cy, form, rid):
    if HAVE_NUMBA:
        return _phase_sum_numba(dgx, dgy, cx, cy, form, rid)
    return phase_sum_numpy(dgx, dgy, cx, cy, form, rid)


def neff_roots(g, e1, e2, e3, d, w1, w3, order, ngrid=2000, iters=60):
    g = np.ascontiguousarray(g, dtype=float)
    if HAVE_NUMBA:
        return _neff_roots_numba(g, float(e1), float(e2), float(e3), float(d),
                                 float(w1), float(w3), int(order), int(ngrid), int(iters))
    return neff_roots_numpy(g, e1, e2, e3, d, w1, w3, order, ngrid, iters)


def overlap(fa_p, fa_m, ka, ga, fb_p, fb_m, kb, gb, eta, inv_eps_clad, d):
    args = (np.ascontiguousarray(fa_p), np.ascontiguousarray(fa_m), np.ascontiguousarray(ka),
            np.ascontiguousarray(ga, dtype=np.int64), np.ascontiguousarray(fb_p),
            np.ascontiguousarray(fb_m), np.ascontiguousarray(kb),
            np.ascontiguousarray(gb, dtype=np.int64), np.ascontiguousarray(eta, dtype=np.complex128),
            np.asarray(inv_eps_clad, dtype=float), float(d))
    if HAVE_NUMBA:
        return _overlap_numba(*args)
    return overlap_numpy(*args)
