"""Guided-mode expansion for photonic-crystal slab supercells.

The magnetic field is expanded on guided modes of the effective uniform slab
(core permittivity replaced by its in-plane average), one set per in-plane
wavevector ``k + G``.  The Hermitian problem

    sum_nu H[mu, nu] c_nu = (omega a / c)^2 c_mu,
    H[mu, nu] = int (1/eps) (curl H_mu)^* . (curl H_nu) dV

uses the inverse of the Fourier permittivity matrix inside the slab.
Radiative losses follow from first-order coupling of the guided solution to
the energy-normalised radiation continuum of the same effective slab, summed
separately over the upper and lower claddings.

Dimensionless units throughout: lengths in lattice periods, frequencies as
``omega a / (2 pi c)``.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import kernels, slab_modes
from .geometry import Lattice, _eps_matrix_from_indices, reciprocal_points, triangular_lattice
from .slab_modes import TE, TM

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1


class GmeError(RuntimeError):
    pass


class BasisTooLargeError(GmeError):
    pass


class ConvergenceError(GmeError):
    pass


class EmptyWindowError(GmeError):
    pass


class AboveLightLineError(GmeError):
    pass


class DivergentQError(AboveLightLineError):
    """No radiative coupling at all: Q is unbounded (e.g. an unpatterned slab)."""


@dataclass(frozen=True)
class GmeBasis:
    """Truncation of the expansion.

    ``g_cutoff`` is the largest ``|G|`` kept, in units of ``2 pi / a``;
    ``guided_orders`` guided modes are used per polarisation in
    ``polarizations``.  ``max_size`` caps the dense problem (memory budget).
    """

    g_cutoff: float = 2.0
    guided_orders: int = 1
    polarizations: Tuple[str, ...] = ("TE",)
    max_size: int = 5000

    def __post_init__(self):
        if not self.g_cutoff > 0:
            raise ValueError("g_cutoff must be positive")
        if self.guided_orders < 1:
            raise ValueError("need at least one guided order")

    def g_vectors(self, lattice: Lattice):
        """Plane waves kept for ``lattice``, in 1/nm."""
        return reciprocal_points(lattice, self.g_cutoff)[1]

    def size(self, lattice: Lattice):
        return self.g_vectors(lattice).shape[0] * self.guided_orders * len(self.polarizations)

    def doubled(self):
        """Basis with (about) twice as many plane waves."""
        return dataclasses.replace(self, g_cutoff=self.g_cutoff * np.sqrt(2.0))


@dataclass
class CavityMode:
    frequency: float                       # omega a / (2 pi c)
    period_a_nm: float
    coefficients: np.ndarray
    parity: Dict[str, str]
    parity_values: Dict[str, float]
    q_factor: Optional[float] = None
    q_above: Optional[float] = None
    q_below: Optional[float] = None
    mode_volume: Optional[float] = None
    problem: Optional["GmeProblem"] = field(default=None, repr=False, compare=False)

    @property
    def omega_c(self):
        return self.frequency

    @property
    def wavelength_nm(self):
        return self.period_a_nm / self.frequency

    def report(self):
        return {
            "wavelength_nm": float(self.wavelength_nm),
            "frequency_a_over_lambda": float(self.frequency),
            "q_factor": None if self.q_factor is None else float(self.q_factor),
            "mode_volume": None if self.mode_volume is None else float(self.mode_volume),
            "parity": dict(self.parity),
        }


class GmeProblem:
    """Basis, permittivity matrices and guided profiles for one lattice."""

    def __init__(self, lattice: Lattice, basis: GmeBasis, kpoint=(0.0, 0.0)):
        self.lattice = lattice
        self.basis = basis
        a = lattice.period_a_nm
        self.a = a
        self.kpoint = np.asarray(kpoint, float)  # in units of 1/a
        self.gidx, gv = reciprocal_points(lattice, basis.g_cutoff)
        self.gvec = gv * a
        ng = self.gidx.shape[0]
        if ng * basis.guided_orders * len(basis.polarizations) > basis.max_size:
            raise BasisTooLargeError(
                f"basis of {ng} plane waves x {basis.guided_orders * len(basis.polarizations)} "
                f"guided modes exceeds max_size={basis.max_size}")
        self.eps_mat = _eps_matrix_from_indices(lattice, self.gidx)
        self.eps_mat = 0.5 * (self.eps_mat + self.eps_mat.conj().T)
        self.eps_eff = float(np.real(self.eps_mat[0, 0]))
        eta = scipy.linalg.inv(self.eps_mat)
        self.eta = 0.5 * (eta + eta.conj().T)
        e_lo, e_hi = lattice.slab.eps_claddings
        self.eps_layers = (e_lo, self.eps_eff, e_hi)
        self.d = lattice.slab.thickness_nm / a
        self._lookup = {(int(i), int(j)): n for n, (i, j) in enumerate(self.gidx)}
        self._build_guided()

    # -- basis ---------------------------------------------------------------
    def _build_guided(self):
        gk = self.gvec + self.kpoint
        gn = np.hypot(gk[:, 0], gk[:, 1])
        parts = []
        for pol_name in self.basis.polarizations:
            pol = slab_modes._POL[pol_name]
            for order in range(self.basis.guided_orders):
                ok = gn > 1e-9
                n = np.full(gn.shape, np.nan)
                n[ok] = slab_modes.guided_neff(gn[ok], self.eps_layers, self.d, pol, order)
                ok &= ~np.isnan(n)
                sel = np.flatnonzero(ok)
                if sel.size == 0:
                    continue
                omega = gn[sel] / n[sel]
                prof = slab_modes.guided_profiles(gn[sel], gk[sel], omega, self.eps_layers,
                                                  self.d, pol)
                parts.append((sel, np.full(sel.size, pol), np.full(sel.size, order), omega, prof))
        if not parts:
            raise GmeError("no guided modes in the effective slab")
        self.basis_g = np.concatenate([p[0] for p in parts])
        self.basis_pol = np.concatenate([p[1] for p in parts])
        self.basis_order = np.concatenate([p[2] for p in parts])
        self.basis_omega = np.concatenate([p[3] for p in parts])
        self.profiles = slab_modes.Profiles(
            *(np.concatenate([getattr(p[4], f.name) for p in parts])
              for f in dataclasses.fields(slab_modes.Profiles)))

    @property
    def size(self):
        return self.basis_g.size

    # -- Hermitian problem -----------------------------------------------------
    def matrix(self):
        if getattr(self, "_matrix", None) is None:
            P = self.profiles
            inv_clad = (1.0 / self.eps_layers[0], 1.0 / self.eps_layers[2])
            H = kernels.overlap(P.f_p, P.f_m, P.kz, self.basis_g, P.f_p, P.f_m, P.kz,
                                self.basis_g, self.eta, inv_clad, self.d)
            H = 0.5 * (H + H.conj().T)
            scale = np.abs(H).max()
            if np.abs(H.imag).max() <= 1e-13 * scale:
                H = np.ascontiguousarray(H.real)
            self._matrix = H
        return self._matrix

    def eigh(self, window):
        """Eigenpairs with ``omega a / 2 pi c`` in ``window`` (sorted)."""
        lo, hi = window
        H = self.matrix()
        try:
            w, v = scipy.linalg.eigh(H, subset_by_value=((2 * np.pi * lo) ** 2,
                                                         (2 * np.pi * hi) ** 2),
                                     driver="evr")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ConvergenceError(f"eigensolver failed: {exc}") from exc
        if np.any(w <= 0):
            raise ConvergenceError("non-positive eigenvalue in window")
        return np.sqrt(w) / (2 * np.pi), v

    def all_frequencies(self):
        """Every eigenfrequency, counting dropped ``|k+G| = 0`` functions as zero modes."""
        w = scipy.linalg.eigvalsh(self.matrix())
        gk = self.gvec + self.kpoint
        n_zero = int(np.count_nonzero(np.hypot(gk[:, 0], gk[:, 1]) <= 1e-9))
        n_zero *= self.basis.guided_orders * len(self.basis.polarizations)
        f = np.sqrt(np.clip(w, 0, None)) / (2 * np.pi)
        return np.concatenate([np.zeros(n_zero), f])

    # -- field helpers ---------------------------------------------------------
    def mirror_index(self, axis):
        """Index map G -> mirror(G) for x -> -x (axis=0) or y -> -y (axis=1)."""
        sign = np.array([1, 1])
        sign[axis] = -1
        return np.array([self._lookup[(int(i) * sign[0], int(j) * sign[1])]
                         for i, j in self.gidx])

    def hz_plane(self, coeffs):
        """Per-G coefficients of H_z at the slab mid-plane."""
        P = self.profiles
        hz = (P.h_p[:, 1, 2] + P.h_m[:, 1, 2]) * coeffs
        out = np.zeros(self.gidx.shape[0], complex)
        np.add.at(out, self.basis_g, hz)
        return out

    def parity(self, coeffs):
        hz = self.hz_plane(coeffs)
        norm = np.vdot(hz, hz).real
        vals = {}
        for name, axis in (("cavity_axis", 1), ("perpendicular", 0)):
            if norm == 0:
                vals[name] = 0.0
            else:
                vals[name] = float(np.vdot(hz, hz[self.mirror_index(axis)]).real / norm)
        labels = {k: ("even" if v > 0.5 else "odd" if v < -0.5 else "mixed")
                  for k, v in vals.items()}
        return labels, vals


_CACHE: "OrderedDict[tuple, GmeProblem]" = OrderedDict()
_CACHE_SIZE = 4


def get_problem(lattice: Lattice, basis: GmeBasis, kpoint=(0.0, 0.0)) -> GmeProblem:
    key = (lattice.fingerprint(), basis, tuple(np.round(kpoint, 14)))
    prob = _CACHE.get(key)
    if prob is None:
        prob = GmeProblem(lattice, basis, kpoint)
        _CACHE[key] = prob
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(key)
    return prob


def clear_cache():
    _CACHE.clear()


def assemble(lattice: Lattice, basis: GmeBasis) -> np.ndarray:
    """Hermitian GME matrix at the supercell Gamma point."""
    return get_problem(lattice, basis).matrix()


def solve_modes(lattice: Lattice, basis: GmeBasis, window=None, with_q=False,
                with_volume=False) -> List[CavityMode]:
    """Eigenmodes with normalised frequency ``omega a / 2 pi c`` inside ``window``.

    ``window`` defaults to the photonic band gap of the unperturbed lattice
    (see :func:`band_gap`).  Modes are sorted by frequency; coefficient
    vectors have unit norm.
    """
    if window is None:
        window = band_gap(lattice, basis)
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError(f"bad frequency window {window}")
    prob = get_problem(lattice, basis)
    f, v = prob.eigh((lo, hi))
    if f.size == 0:
        raise EmptyWindowError(f"no eigenmodes with a/lambda in [{lo:.5f}, {hi:.5f}]")
    modes = []
    for i in range(f.size):
        c = v[:, i].astype(complex)
        labels, vals = prob.parity(c)
        modes.append(CavityMode(float(f[i]), lattice.period_a_nm, c, labels, vals, problem=prob))
    if with_q:
        modes = [_attach_q(m, lattice) for m in modes]
    if with_volume:
        modes = [dataclasses.replace(m, mode_volume=mode_volume(m, lattice)) for m in modes]
    return modes


def _attach_q(mode, lattice):
    try:
        q, qa, qb = radiative_q(mode, lattice)
    except AboveLightLineError:
        return mode
    return dataclasses.replace(mode, q_factor=q, q_above=qa, q_below=qb)


def light_cone_weight(mode: CavityMode, lattice: Lattice):
    """Fraction of the mode's norm carried by basis functions inside the light cone."""
    prob = mode.problem or get_problem(lattice, GmeBasis())
    gk = prob.gvec[prob.basis_g] + prob.kpoint
    gn = np.hypot(gk[:, 0], gk[:, 1])
    n_clad = np.sqrt(max(prob.eps_layers[0], prob.eps_layers[2]))
    inside = gn < n_clad * 2 * np.pi * mode.frequency
    w = np.abs(mode.coefficients) ** 2
    return float(w[inside].sum() / w.sum())


def radiative_q(mode: CavityMode, lattice: Lattice):
    """(Q_total, Q_above, Q_below) from golden-rule coupling to radiation modes."""
    prob = mode.problem
    if prob is None:
        raise GmeError("mode carries no solver state; solve it with solve_modes first")
    if light_cone_weight(mode, lattice) > 0.5:
        raise AboveLightLineError(
            f"mode at a/lambda={mode.frequency:.5f} lies mostly above the light line")
    omega = 2 * np.pi * mode.frequency
    E = omega ** 2
    c = mode.coefficients
    P = prob.profiles
    inv_clad = (1.0 / prob.eps_layers[0], 1.0 / prob.eps_layers[2])
    gk = prob.gvec + prob.kpoint
    gn = np.hypot(gk[:, 0], gk[:, 1])
    rates = {}
    for clad, eps_j in (("below", prob.eps_layers[0]), ("above", prob.eps_layers[2])):
        open_g = np.flatnonzero(gn < np.sqrt(eps_j) * omega * (1 - 1e-12))
        total = 0.0
        for pol in (TE, TM):
            if open_g.size == 0:
                continue
            rad = slab_modes.radiative_out_states(gk[open_g], omega, prob.eps_layers, prob.d,
                                                  pol, clad)
            X = kernels.overlap(rad.f_p, rad.f_m, rad.kz, open_g, P.f_p, P.f_m, P.kz,
                                prob.basis_g, prob.eta, inv_clad, prob.d)
            total += float(np.sum(np.abs(X @ c) ** 2))
        rates[clad] = np.pi * total
    gamma = rates["below"] + rates["above"]
    if not gamma > 1e-300 * E:
        raise DivergentQError(f"mode at a/lambda={mode.frequency:.5f} has no radiative coupling")
    q_of = lambda r: float(E / r) if r > 0 else float("inf")
    return q_of(gamma), q_of(rates["above"]), q_of(rates["below"])


def compute_q(mode: CavityMode, lattice: Lattice) -> float:
    """Total radiative Q, ``1 / (1/Q_above + 1/Q_below)``."""
    return radiative_q(mode, lattice)[0]


# --------------------------------------------------------------------------
# Mode volume
# --------------------------------------------------------------------------

def effective_volume(energy_density, cell_volume):
    """``sum(u) dV / max(u)`` for samples ``u`` of equal volume element."""
    u = np.asarray(energy_density, float)
    return float(u.sum() / u.size * cell_volume / u.max())


def electric_energy_density(mode: CavityMode, lattice: Lattice, points_per_period=64,
                            z_points=64):
    """Sample eps|E|^2 (up to a common factor) inside the slab.

    Returns ``(z, density)`` with ``density`` of shape ``(len(z), nx, ny)``.
    """
    prob = mode.problem
    nx_cell, ny_cell = lattice.supercell
    lx = nx_cell
    ly = ny_cell * np.sqrt(3) / 2
    nx = int(points_per_period * lx)
    ny = int(round(points_per_period * ly))
    _, _, eps = _eps_grid(lattice, nx, ny)
    z = np.linspace(-prob.d / 2, prob.d / 2, z_points + 1)
    P = prob.profiles
    c = mode.coefficients
    i1 = prob.gidx[:, 0]
    i2 = prob.gidx[:, 1]
    # cell-centred sampling: x_i = -lx/2 + (i + 1/2) lx / nx
    shift = np.exp(1j * np.pi * i1 * (-1 + 1 / nx)) * np.exp(1j * np.pi * i2 * (-1 + 1 / ny))
    kz = P.kz[:, 1]
    out = np.empty((z.size, nx, ny))
    for iz, zz in enumerate(z):
        fz = (P.f_p[:, 1, :] * np.exp(1j * kz * zz)[:, None]
              + P.f_m[:, 1, :] * np.exp(-1j * kz * zz)[:, None]) * c[:, None]
        per_g = np.zeros((prob.gidx.shape[0], 3), complex)
        np.add.at(per_g, prob.basis_g, fz)
        dens = np.zeros((nx, ny))
        for comp in range(3):
            grid = np.zeros((nx, ny), complex)
            grid[i1 % nx, i2 % ny] = per_g[:, comp] * shift
            dens += np.abs(np.fft.ifft2(grid) * (nx * ny)) ** 2
        out[iz] = dens / eps
    return z, out


def _eps_grid(lattice, nx, ny):
    from .geometry import eps_on_grid
    return eps_on_grid(lattice, nx, ny)


def _cladding_energy(prob: GmeProblem, c):
    """int |curl H|^2 / eps over both claddings, per unit area."""
    P = prob.profiles
    total = 0.0
    for layer, term, eps_l in ((0, P.f_m, prob.eps_layers[0]), (2, P.f_p, prob.eps_layers[2])):
        vec = term[:, layer, :] * c[:, None]
        chi = P.kz[:, layer].imag
        order = np.argsort(prob.basis_g, kind="stable")
        g_sorted = prob.basis_g[order]
        bounds = np.flatnonzero(np.diff(g_sorted)) + 1
        for grp in np.split(order, bounds):
            v = vec[grp]
            x = chi[grp]
            gram = (v.conj() @ v.T) / (x[:, None] + x[None, :])
            total += float(np.real(gram.sum())) / eps_l
    return total


def mode_volume(mode: CavityMode, lattice: Lattice, points_per_period=64, z_points=64,
                peak="dielectric"):
    """Mode volume in units of ``(lambda / n_core)^3``.

    ``V = int eps|E|^2 dV / max(eps|E|^2)``; the slab interior is sampled on a
    grid of ``points_per_period`` per period in-plane and ``z_points``
    intervals through the thickness (Simpson rule), the claddings are
    integrated analytically.

    ``peak="dielectric"`` takes the maximum over the high-index material,
    where an emitter can sit.  The truncated expansion smooths the jump of
    the normal field at hole walls, so the global maximum (``peak="global"``)
    lands inside a hole and is not a converged quantity.
    """
    from scipy.integrate import simpson
    if peak not in ("dielectric", "global"):
        raise ValueError(f"unknown peak convention {peak!r}")
    prob = mode.problem
    z, dens = electric_energy_density(mode, lattice, points_per_period, z_points)
    area = lattice.supercell[0] * lattice.supercell[1] * np.sqrt(3) / 2
    core = simpson(dens.mean(axis=(1, 2)) * area, x=z)
    clad = _cladding_energy(prob, mode.coefficients) * area
    if peak == "global":
        top = dens.max()
    else:
        _, _, eps = _eps_grid(lattice, dens.shape[1], dens.shape[2])
        solid = eps > 0.5 * (lattice.slab.eps_core + lattice.hole_index ** 2)
        top = dens[:, solid].max() if solid.any() else dens.max()
    vol_a3 = (core + clad) / top
    n = lattice.slab.core_index
    return float(vol_a3 * (mode.frequency * n) ** 3)


def localization(mode: CavityMode, lattice: Lattice, points_per_period=8):
    """Share of mid-plane |H_z|^2 inside the central quarter of the supercell.

    About 0.25 for a mode spread evenly over the supercell, close to 1 for a
    well-confined cavity mode.
    """
    prob = mode.problem
    hz = prob.hz_plane(mode.coefficients)
    nx_cell, ny_cell = lattice.supercell
    nx = max(8, int(points_per_period * nx_cell))
    ny = max(8, int(points_per_period * ny_cell))
    grid = np.zeros((nx, ny), complex)
    np.add.at(grid, (prob.gidx[:, 0] % nx, prob.gidx[:, 1] % ny), hz)
    field = np.abs(np.fft.fftshift(np.fft.ifft2(grid))) ** 2
    cx, cy = nx // 2, ny // 2
    box = field[cx - nx // 4: cx + nx // 4, cy - ny // 4: cy + ny // 4]
    total = field.sum()
    return float(box.sum() / total) if total > 0 else 0.0


# --------------------------------------------------------------------------
# Band gap of the unperturbed lattice
# --------------------------------------------------------------------------

_GAP_CACHE: Dict[tuple, Tuple[float, float]] = {}


def band_gap(lattice: Lattice, basis: GmeBasis = GmeBasis(), nk=7):
    """(upper edge of band 1, lower edge of band 2) of the bulk triangular lattice.

    Uses the two-hole rectangular cell and a ``nk`` x ``nk`` grid over its
    irreducible Brillouin-zone quarter, with the same plane-wave cutoff and
    guided modes as ``basis``.  With ``nk - 1`` divisible by 3 the grid
    contains the folded K point, where band 1 peaks.
    """
    key = (lattice.period_a_nm, lattice.base_radius_nm, lattice.slab, lattice.hole_index,
           basis.g_cutoff, basis.guided_orders, basis.polarizations, nk)
    if key in _GAP_CACHE:
        return _GAP_CACHE[key]
    cell = triangular_lattice(lattice.period_a_nm, lattice.base_radius_nm, (1, 2), lattice.slab,
                              lattice.hole_index)
    small = dataclasses.replace(basis, max_size=10 ** 6)
    kx = np.linspace(0, np.pi, nk)
    ky = np.linspace(0, np.pi / np.sqrt(3), nk)
    lo, hi = 0.0, np.inf
    for a in kx:
        for b in ky:
            prob = GmeProblem(cell, small, (a, b))
            f = prob.all_frequencies()
            lo = max(lo, f[1])
            hi = min(hi, f[2])
    _GAP_CACHE[key] = (float(lo), float(hi))
    return _GAP_CACHE[key]


FUNDAMENTAL_PARITY = {"cavity_axis": "even", "perpendicular": "odd"}


def cavity_modes(modes: Sequence[CavityMode], lattice: Lattice, threshold=0.8):
    """Modes confined to the defect (see :func:`localization`), lowest frequency first."""
    return [m for m in modes if localization(m, lattice) > threshold]


def fundamental_mode(modes: Sequence[CavityMode], lattice: Optional[Lattice] = None):
    """Lowest-frequency confined mode with the symmetry of the L3 ground state.

    The ground state has H_z even about the cavity axis and odd about the
    perpendicular mirror.  Without ``lattice`` no localisation filter is
    applied.  Falls back to weaker selections if nothing matches.
    """
    pool = list(modes) if lattice is None else (cavity_modes(modes, lattice) or list(modes))
    if not pool:
        raise EmptyWindowError("no modes to choose from")
    for want in (FUNDAMENTAL_PARITY, {"cavity_axis": "even"}):
        hit = [m for m in pool if all(m.parity.get(k) == v for k, v in want.items())]
        if hit:
            return hit[0]
    return pool[0]


def mode_report(modes: Sequence[CavityMode]):
    return {"schema": REPORT_SCHEMA, "modes": [m.report() for m in modes]}


def write_field_csv(mode: CavityMode, lattice: Lattice, path, points_per_period=16):
    """Mid-plane eps|E|^2 slice as CSV rows ``x_nm, y_nm, energy_density``."""
    z, dens = electric_energy_density(mode, lattice, points_per_period, z_points=2)
    mid = dens[1]
    nx, ny = mid.shape
    lx, ly = lattice.size_nm
    x = (np.arange(nx) + 0.5) / nx * lx - lx / 2
    y = (np.arange(ny) + 0.5) / ny * ly - ly / 2
    with open(path, "w") as fh:
        fh.write("x_nm,y_nm,energy_density\n")
        for i in range(nx):
            for j in range(ny):
                fh.write(f"{x[i]:.6f},{y[j]:.6f},{mid[i, j] / mid.max():.8e}\n")
