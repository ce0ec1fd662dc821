"""Guided and radiative modes of a uniform three-layer dielectric slab.

Internally every length is measured in units of a reference length
(the lattice period for the GME) and frequencies are ``omega * L / c``.
The scalar field is ``E_q`` (TE) or ``H_q`` (TM), with ``q = p x z`` and
``p`` the unit in-plane wavevector.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List

import numpy as np

from . import kernels
from .geometry import SlabSpec

C_NM_PER_S = 299792458.0e9
TE, TM = 0, 1
_POL = {"TE": TE, "TM": TM}


class NoModeError(RuntimeError):
    pass


@dataclass
class GuidedModeBranch:
    polarization: str
    order: int
    k_inplane: np.ndarray   # 1/nm
    omega: np.ndarray       # rad/s
    n_eff: np.ndarray
    normalization: np.ndarray
    residual: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "omega", "n_eff"])
            for row in zip(self.k_inplane, self.omega, self.n_eff):
                w.writerow([repr(float(v)) for v in row])


def _weights(pol, e1, e2, e3):
    if pol == TE:
        return 1.0, 1.0
    return e2 / e1, e2 / e3


def dispersion_residual(n_eff, g, eps, d, pol):
    """Normalised residual of the slab transcendental equation (zero at a mode)."""
    e1, e2, e3 = eps
    w1, w3 = _weights(pol, e1, e2, e3)
    return kernels._disp_fn(np.asarray(n_eff, float), np.asarray(g, float), e1, e2, e3, d, w1, w3)


def guided_neff(g, eps, d, pol=TE, order=0, ngrid=2000):
    """Effective index of guided mode ``order`` at in-plane wavevectors ``g``.

    ``eps`` is ``(below, core, above)``; ``g`` and ``d`` share length units.
    Returns NaN where the mode is cut off.
    """
    e1, e2, e3 = (float(v) for v in eps)
    w1, w3 = _weights(pol, e1, e2, e3)
    return kernels.neff_roots(np.atleast_1d(np.asarray(g, float)), e1, e2, e3, float(d),
                              w1, w3, order, ngrid=ngrid)


def solve_guided_modes(slab: SlabSpec, k_inplane, max_order=0,
                       polarizations=("TE", "TM")) -> List[GuidedModeBranch]:
    """All guided modes up to ``max_order`` at in-plane wavevector(s) ``k_inplane`` (1/nm).

    Modes come back ordered by decreasing effective index at the first
    sample.  Raises :class:`NoModeError` when nothing is guided.
    """
    k = np.atleast_1d(np.asarray(k_inplane, dtype=float))
    if np.any(k <= 0):
        raise ValueError("k_inplane must be positive")
    e1, e3 = slab.eps_claddings
    eps = (e1, slab.eps_core, e3)
    d = slab.thickness_nm
    out = []
    for name in polarizations:
        pol = _POL[name]
        for m in range(max_order + 1):
            n = guided_neff(k, eps, d, pol, m)
            if np.all(np.isnan(n)):
                continue
            omega = C_NM_PER_S * k / n
            res = dispersion_residual(n, k, eps, d, pol)
            norm = np.full(k.shape, np.nan)
            ok = ~np.isnan(n)
            if ok.any():
                om_d = k[ok] / n[ok] * d
                prof = guided_profiles(k[ok] * d, np.column_stack([k[ok] * d, 0 * k[ok]]),
                                       om_d, eps, 1.0, pol, normalize=False)
                norm[ok] = prof.norm
            out.append(GuidedModeBranch(name, m, k, omega, n, norm, res))
    if not out:
        raise NoModeError(f"no guided mode at k = {k} 1/nm for {slab}")
    out.sort(key=lambda b: -np.nanmax(b.n_eff))
    return out


@dataclass
class Profiles:
    """Per-profile, per-layer plane-wave coefficients (see :mod:`kernels`)."""

    kz: np.ndarray    # (N, 3) complex z-wavevectors
    f_p: np.ndarray   # (N, 3, 3) curl H coefficients of the e^{+ikz} term
    f_m: np.ndarray
    h_p: np.ndarray   # (N, 3, 3) H coefficients
    h_m: np.ndarray
    norm: np.ndarray  # int |H|^2 dz before normalisation

    def __len__(self):
        return self.kz.shape[0]

    def take(self, idx):
        return Profiles(self.kz[idx], self.f_p[idx], self.f_m[idx], self.h_p[idx],
                        self.h_m[idx], self.norm[idx])


def _kz(eps_l, omega, g):
    arg = eps_l * omega ** 2 - g ** 2
    return np.where(arg >= 0, np.sqrt(np.abs(arg)) + 0j, 1j * np.sqrt(np.abs(arg)))


def _frame(gvec):
    g = np.hypot(gvec[:, 0], gvec[:, 1])
    zero = g < 1e-14
    safe = np.where(zero, 1.0, g)
    p = np.column_stack([gvec[:, 0] / safe, gvec[:, 1] / safe, np.zeros(g.size)])
    p[zero] = (1.0, 0.0, 0.0)
    q = np.column_stack([p[:, 1], -p[:, 0], np.zeros(g.size)])
    return p, q


def _vector_terms(coef_a, coef_b, kz, g, gvec, omega, eps_layers, pol):
    """Turn scalar layer coefficients into H and curl-H vector coefficients."""
    n = g.size
    p, q = _frame(gvec)
    z = np.array([0.0, 0.0, 1.0])
    h_p = np.zeros((n, 3, 3), complex)
    h_m = np.zeros((n, 3, 3), complex)
    f_p = np.zeros((n, 3, 3), complex)
    f_m = np.zeros((n, 3, 3), complex)
    om = omega[:, None]
    for layer in range(3):
        k = kz[:, layer][:, None]
        A = coef_a[:, layer][:, None]
        B = coef_b[:, layer][:, None]
        gg = g[:, None]
        if pol == TE:
            h_p[:, layer] = (k * p - gg * z) * A / om
            h_m[:, layer] = (-k * p - gg * z) * B / om
            f_p[:, layer] = -1j * om * eps_layers[layer] * q * A
            f_m[:, layer] = -1j * om * eps_layers[layer] * q * B
        else:
            h_p[:, layer] = q * A
            h_m[:, layer] = q * B
            f_p[:, layer] = 1j * (k * p - gg * z) * A
            f_m[:, layer] = 1j * (-k * p - gg * z) * B
    return h_p, h_m, f_p, f_m


def guided_profiles(g, gvec, omega, eps, d, pol, normalize=True) -> Profiles:
    """Guided-mode coefficients for in-plane wavevectors ``gvec`` at frequencies ``omega``.

    The slab occupies ``|z| < d/2``.  Profiles are normalised to
    ``int |H|^2 dz = 1`` unless ``normalize`` is False.
    """
    g = np.asarray(g, float)
    omega = np.asarray(omega, float)
    e1, e2, e3 = eps
    w1, _ = _weights(pol, e1, e2, e3)
    kz = np.column_stack([_kz(e1, omega, g), _kz(e2, omega, g), _kz(e3, omega, g)])
    k = kz[:, 1].real
    x1 = kz[:, 0].imag
    safe_k = np.where(k == 0, 1e-300, k)
    P = w1 * x1 / safe_k
    coef_a = np.zeros((g.size, 3), complex)
    coef_b = np.zeros((g.size, 3), complex)
    coef_b[:, 0] = 1.0
    coef_a[:, 1] = 0.5 * (1 - 1j * P) * np.exp(0.5j * k * d)
    coef_b[:, 1] = 0.5 * (1 + 1j * P) * np.exp(-0.5j * k * d)
    coef_a[:, 2] = np.cos(k * d) + P * np.sin(k * d)
    h_p, h_m, f_p, f_m = _vector_terms(coef_a, coef_b, kz, g, gvec, omega, (e1, e2, e3), pol)
    norm = kernels.self_norm(h_p, h_m, kz, d)
    if normalize:
        s = 1.0 / np.sqrt(norm)[:, None, None]
        h_p, h_m, f_p, f_m = h_p * s, h_m * s, f_p * s, f_m * s
    return Profiles(kz, f_p, f_m, h_p, h_m, norm)


def radiative_out_states(gvec, omega, eps, d, pol, clad):
    """Energy-normalised radiation states with a single outgoing wave in ``clad``.

    ``clad`` is ``"below"`` or ``"above"``.  Each state is the time reverse of
    the scattering state incident from that cladding; the incident amplitude is
    fixed so that ``<r_E | r_E'> = delta(E - E')`` with ``E = omega^2``.
    Every entry of ``gvec`` must lie inside the light cone of ``clad``.
    """
    gvec = np.atleast_2d(np.asarray(gvec, float))
    g = np.hypot(gvec[:, 0], gvec[:, 1])
    n = g.size
    om = np.full(n, float(omega))
    e1, e2, e3 = eps
    w = (1.0, 1.0, 1.0) if pol == TE else (1 / e1, 1 / e2, 1 / e3)
    kz = np.column_stack([_kz(e1, om, g), _kz(e2, om, g), _kz(e3, om, g)])
    j = 0 if clad == "below" else 2
    kj = kz[:, j]
    if np.any(np.abs(kj.imag) > 0) or np.any(kj.real <= 0):
        raise ValueError("radiation channel closed for some in-plane wavevectors")
    k1, k2, k3 = kz[:, 0], kz[:, 1], kz[:, 2]
    ep = np.exp(0.5j * k2 * d)
    em = np.exp(-0.5j * k2 * d)
    # unknowns: A2, B2, A3 (out, up), B1 (out, down); incident B3 (above) or A1 (below)
    M = np.zeros((n, 4, 4), complex)
    rhs = np.zeros((n, 4), complex)
    M[:, 0, 0], M[:, 0, 1], M[:, 0, 2] = ep, em, -1
    M[:, 1, 0], M[:, 1, 1], M[:, 1, 2] = w[1] * k2 * ep, -w[1] * k2 * em, -w[2] * k3
    M[:, 2, 0], M[:, 2, 1], M[:, 2, 3] = em, ep, -1
    M[:, 3, 0], M[:, 3, 1], M[:, 3, 3] = w[1] * k2 * em, -w[1] * k2 * ep, w[0] * k1
    eps_j = eps[j]
    amp = np.sqrt((1.0 if pol == TE else eps_j) / (4 * np.pi * kj.real))
    if clad == "above":
        rhs[:, 0] = amp
        rhs[:, 1] = -w[2] * k3 * amp
    else:
        rhs[:, 2] = amp
        rhs[:, 3] = w[0] * k1 * amp
    sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    a_in = np.zeros((n, 3), complex)
    b_in = np.zeros((n, 3), complex)
    a_in[:, 1], b_in[:, 1] = sol[:, 0], sol[:, 1]
    a_in[:, 2], b_in[:, 0] = sol[:, 2], sol[:, 3]
    if clad == "above":
        b_in[:, 2] = amp
    else:
        a_in[:, 0] = amp
    # time reversal of the scalar profile: swap and conjugate the two terms
    coef_a = np.conj(b_in)
    coef_b = np.conj(a_in)
    h_p, h_m, f_p, f_m = _vector_terms(coef_a, coef_b, kz, g, gvec, om, eps, pol)
    return Profiles(kz, f_p, f_m, h_p, h_m, np.full(n, np.nan))


def scattering_fluxes(gvec, omega, eps, d, pol, clad):
    """(incident, reflected, transmitted) z-fluxes of the incident-from-``clad``
    scattering state; used to check energy conservation of the radiation basis."""
    st = radiative_out_states(gvec, omega, eps, d, pol, clad)
    j, l = (0, 2) if clad == "below" else (2, 0)
    # out-state = conj(in-state): in-state outgoing amplitudes are conj of out incoming ones
    def _amp2(h):
        return np.sum(np.abs(h) ** 2, axis=-1)
    kz = st.kz.real
    e = np.array(eps)
    if clad == "above":
        inc = _amp2(st.h_p[:, 2])   # outgoing of out-state == incident of in-state
        refl = _amp2(st.h_m[:, 2])
        trans = _amp2(st.h_p[:, 0])
    else:
        inc = _amp2(st.h_m[:, 0])
        refl = _amp2(st.h_p[:, 0])
        trans = _amp2(st.h_m[:, 2])
    return inc * kz[:, j] / e[j], refl * kz[:, j] / e[j], trans * kz[:, l] / e[l]
