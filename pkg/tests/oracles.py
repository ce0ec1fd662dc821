"""Independent reference calculations shared by several test modules.

Nothing here imports the package; each oracle is a direct transcription of
a textbook relation solved by brute-force root bracketing.
"""
import numpy as np


def _even_mode_condition(n, k0, n_core, n_clad, d, pol):
    kap = k0 * np.sqrt(n_core ** 2 - n ** 2)
    gam = k0 * np.sqrt(n ** 2 - n_clad ** 2)
    w = 1.0 if pol == "TE" else (n_core / n_clad) ** 2
    # kap tan(kap d/2) = w gam, written without poles
    return kap * np.sin(kap * d / 2) - w * gam * np.cos(kap * d / 2)


def _bisect(f, ns):
    vals = f(ns)
    i = int(np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0])
    hi, lo = ns[i], ns[i + 1]
    fhi = np.sign(f(hi))
    while hi - lo > 1e-14:
        mid = 0.5 * (hi + lo)
        if np.sign(f(mid)) == fhi:
            hi = mid
        else:
            lo = mid
    return 0.5 * (hi + lo)


def slab_neff_at_wavelength(n_core, n_clad, d, lam, pol="TE", grid=1e-4):
    """Fundamental even-mode index of a symmetric slab at fixed vacuum wavelength."""
    k0 = 2 * np.pi / lam
    ns = np.arange(n_core - 1e-9, n_clad, -grid)
    return _bisect(lambda n: _even_mode_condition(n, k0, n_core, n_clad, d, "TE" if pol == "TE" else "TM"), ns)


def slab_neff_at_wavevector(g, n_core, n_clad, d, pol="TE", grid=1e-4):
    """Same mode at fixed in-plane wavevector g (k0 = g / n along the scan)."""
    ns = np.arange(n_core - 1e-9, n_clad + 1e-12, -grid)
    return _bisect(lambda n: _even_mode_condition(n, g / n, n_core, n_clad, d, pol), ns)


def fresnel_r(n1, n2):
    return ((n1 - n2) / (n1 + n2)) ** 2


def central_jacobian(f, p, rel_steps=(1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)):
    """Central differences with one Richardson step, column by column.

    No single step suits every column (a centre near 1550 needs a tiny
    relative step, a narrow width a large one), so each column is
    estimated over a ladder of steps and the estimate taken where
    neighbouring steps agree best: the plateau between truncation error
    (large steps) and rounding noise (small ones).
    """
    p = np.asarray(p, float)
    cols = []
    for i in range(p.size):
        def d(step):
            up, dn = p.copy(), p.copy()
            up[i] += step
            dn[i] -= step
            return (f(up) - f(dn)) / (up[i] - dn[i])

        ests = []
        for rel in rel_steps:
            h = rel * max(abs(p[i]), 1e-3)
            ests.append((4 * d(h / 2) - d(h)) / 3)
        gaps = [np.linalg.norm(a - b) for a, b in zip(ests, ests[1:])]
        k = int(np.argmin(gaps))
        cols.append(ests[k + 1])
    return np.column_stack(cols)


def jacobian_mismatch(analytic, numeric):
    """Worst column-wise relative difference."""
    worst = 0.0
    for a, n in zip(np.asarray(analytic).T, np.asarray(numeric).T):
        scale = max(np.linalg.norm(n), np.linalg.norm(a), 1e-300)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def gauss_convolved_decay(u, tau, sigma):
    """exp(-s/tau) H(s) smeared by a unit Gaussian of width sigma, by adaptive quadrature."""
    from scipy.integrate import quad
    out = []
    for uk in np.atleast_1d(u):
        g = lambda s: np.exp(-s / tau - 0.5 * ((uk - s) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
        hi = max(uk, 0.0) + 40 * sigma + 40 * tau
        out.append(quad(g, 0.0, hi, points=[max(uk, 0.0)], epsabs=0, epsrel=1e-12, limit=500)[0])
    return np.array(out)
