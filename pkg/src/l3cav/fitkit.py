"""Least-squares fitting of spectra, decay curves and Purcell detuning data.

Unbounded fits run MINPACK Levenberg-Marquardt (``scipy.optimize.least_squares``
with ``method="lm"``) on analytic Jacobians; the bounded Purcell fit uses
``"trf"``.  Count data start from weights ``1 / max(count, 1)`` and are then
re-fitted with model-variance weights until the model settles, which is the
Poisson maximum-likelihood estimate.
"""
from __future__ import annotations

import math
import warnings
from itertools import combinations
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.signal import find_peaks, peak_widths
from scipy.special import erfc, erfcx, wofz

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
HC_EV_NM = 1239.841984332
HBAR_EV_S = 6.582119569e-16
MAX_ITER = 500
MAX_REWEIGHT = 20
XTOL = 1e-10


class FitError(RuntimeError):
    pass


class ConvergenceError(FitError):
    pass


class DegenerateDataError(FitError, ValueError):
    pass


class InsufficientDataError(FitError, ValueError):
    pass


class SchemaError(ValueError):
    pass


class IdentifiabilityWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------

@dataclass
class Spectrum:
    wavelength_nm: np.ndarray
    counts: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.wavelength_nm = np.asarray(self.wavelength_nm, float)
        self.counts = np.asarray(self.counts, float)
        if self.wavelength_nm.shape != self.counts.shape or self.counts.ndim != 1:
            raise SchemaError("wavelength and counts must be 1-D arrays of equal length")
        if self.counts.size < 8:
            raise InsufficientDataError("a spectrum needs at least 8 samples")
        if np.any(np.diff(self.wavelength_nm) <= 0):
            raise SchemaError("wavelengths must be strictly ascending")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise SchemaError("counts must be finite and non-negative")


@dataclass
class DecayCurve:
    time_ns: np.ndarray
    counts: np.ndarray
    irf_fwhm_ns: float = 0.025

    def __post_init__(self):
        self.time_ns = np.asarray(self.time_ns, float)
        self.counts = np.asarray(self.counts, float)
        if self.time_ns.shape != self.counts.shape or self.counts.ndim != 1:
            raise SchemaError("time and counts must be 1-D arrays of equal length")
        if self.counts.size < 8:
            raise InsufficientDataError("a decay curve needs at least 8 bins")
        dt = np.diff(self.time_ns)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
            raise SchemaError("time bins must be uniform and ascending")
        if not np.all(np.isfinite(self.counts)):
            raise SchemaError("counts must be finite")
        if self.irf_fwhm_ns < 0:
            raise SchemaError("IRF width must be non-negative")

    @property
    def bin_ns(self):
        return float(self.time_ns[1] - self.time_ns[0])


@dataclass
class FitResult:
    names: List[str]
    values: np.ndarray
    covariance: np.ndarray
    reduced_chi2: float
    residuals: np.ndarray
    converged: bool
    iterations: int
    extras: Dict = field(default_factory=dict)

    @property
    def params(self):
        return dict(zip(self.names, map(float, self.values)))

    @property
    def sigmas(self):
        return dict(zip(self.names, map(float, np.sqrt(np.clip(np.diag(self.covariance), 0, None)))))

    def to_dict(self):
        return {
            "schema": 1,
            "params": self.params,
            "sigmas": self.sigmas,
            "covariance": self.covariance.tolist(),
            "reduced_chi2": float(self.reduced_chi2),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            **{k: v for k, v in self.extras.items()},
        }


def _fit(residual, jac, p0, names, absolute_sigma=True, allow_nonconverged=False):
    """LM solve + covariance.  ``residual``/``jac`` are already weighted."""
    p0 = np.asarray(p0, float)
    with np.errstate(all="ignore"):
        res = least_squares(residual, p0, jac=jac, method="lm", xtol=XTOL, ftol=XTOL, gtol=1e-15,
                            max_nfev=MAX_ITER * (p0.size + 1))
    r = res.fun
    dof = max(r.size - p0.size, 1)
    chi2 = float(r @ r) / dof
    J = res.jac
    try:
        cov = np.linalg.pinv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((p0.size, p0.size), np.nan)
    if not absolute_sigma:
        cov = cov * chi2
    cov = 0.5 * (cov + cov.T)
    ok = bool(res.success) and np.all(np.isfinite(res.x))
    if not ok and not allow_nonconverged:
        raise ConvergenceError(f"least squares did not converge: {res.message}")
    return FitResult(list(names), res.x.copy(), cov, chi2, r, ok, int(res.nfev))


def _poisson_refine(fit: FitResult, model, jac, y, allow_nonconverged=False):
    """Re-fit with weights ``1/model`` until the model stops moving.

    Data-based weights ``1/max(y, 1)`` bias sparse tails low; at the fixed
    point of this iteration the normal equations coincide with the Poisson
    likelihood score, so the result is the Poisson maximum-likelihood fit and
    ``J^T W J`` is its Fisher information.
    """
    extras = fit.extras
    for _ in range(MAX_REWEIGHT):
        m = model(fit.values)
        w = 1.0 / np.sqrt(np.maximum(m, 1e-9 * max(float(np.abs(m).max()), 1e-300)))
        new = _fit(lambda q: w * (model(q) - y), lambda q: w[:, None] * jac(q), fit.values,
                   fit.names, allow_nonconverged=True)
        settled = np.max(np.abs(model(new.values) - m)) <= 1e-10 * max(float(m.max()), 1e-300)
        fit = new
        if not new.converged or settled:
            break
    if not fit.converged and not allow_nonconverged:
        raise ConvergenceError("Poisson re-weighting did not converge")
    fit.extras = extras
    return fit


# --------------------------------------------------------------------------
# Voigt profile
# --------------------------------------------------------------------------

_SIGMA_FLOOR = 1e-12


def voigt(x, center, area, sigma, gamma):
    """Area-normalised Voigt profile (Gaussian sigma, Lorentzian HWHM gamma)."""
    s = max(abs(sigma), _SIGMA_FLOOR)
    z = (np.asarray(x, float) - center + 1j * abs(gamma)) / (s * SQRT2)
    return area * wofz(z).real / (s * SQRT2PI)


def voigt_fwhm(sigma, gamma):
    """Full width at half maximum of a Voigt profile, found by root bracketing."""
    sigma, gamma = abs(float(sigma)), abs(float(gamma))
    if sigma == 0.0:
        return 2.0 * gamma
    if gamma == 0.0:
        return FWHM_PER_SIGMA * sigma
    half = 0.5 * voigt(0.0, 0.0, 1.0, sigma, gamma)
    upper = 0.5 * (FWHM_PER_SIGMA * sigma + 2 * gamma) * 2.0
    x = brentq(lambda u: voigt(u, 0.0, 1.0, sigma, gamma) - half, 0.0, upper, xtol=1e-15 * upper,
               rtol=4 * np.finfo(float).eps)
    return 2.0 * x


def voigt_fwhm_approx(sigma, gamma):
    """Olivero-Longbothum closed form (about 0.02 % accurate)."""
    fg = FWHM_PER_SIGMA * abs(sigma)
    fl = 2.0 * abs(gamma)
    return 0.5346 * fl + math.sqrt(0.2166 * fl * fl + fg * fg)


def voigt_gamma_for_fwhm(fwhm, sigma):
    """Lorentzian HWHM that gives a Voigt of total width ``fwhm`` at Gaussian ``sigma``."""
    if FWHM_PER_SIGMA * sigma >= fwhm:
        raise ValueError("Gaussian part alone is wider than the requested FWHM")
    return brentq(lambda g: voigt_fwhm(sigma, g) - fwhm, 0.0, fwhm, xtol=1e-16, rtol=1e-15)


def _voigt_and_grad(x, c, A, s, g):
    ss = max(abs(s), _SIGMA_FLOOR)
    sgn_s = 1.0 if s >= 0 else -1.0
    sgn_g = 1.0 if g >= 0 else -1.0
    z = (x - c + 1j * abs(g)) / (ss * SQRT2)
    w = wofz(z)
    dw = -2.0 * z * w + 2j / math.sqrt(math.pi)
    norm = 1.0 / (ss * SQRT2PI)
    f = A * w.real * norm
    d_c = A * norm * (dw * (-1.0 / (ss * SQRT2))).real
    d_A = w.real * norm
    d_s = A * norm * ((dw * (-z / ss)).real - w.real / ss) * sgn_s
    d_g = A * norm * (dw * (1j / (ss * SQRT2))).real * sgn_g
    return f, (d_c, d_A, d_s, d_g)


def voigt_model(x, p):
    """Sum of Voigt peaks plus constant; ``p = [c, A, sigma, gamma] * n + [baseline]``."""
    x = np.asarray(x, float)
    out = np.full(x.shape, p[-1], dtype=float)
    for k in range((len(p) - 1) // 4):
        out += _voigt_and_grad(x, *p[4 * k: 4 * k + 4])[0]
    return out


def voigt_jacobian(x, p):
    x = np.asarray(x, float)
    J = np.empty((x.size, len(p)))
    for k in range((len(p) - 1) // 4):
        _, grads = _voigt_and_grad(x, *p[4 * k: 4 * k + 4])
        for j, gcol in enumerate(grads):
            J[:, 4 * k + j] = gcol
    J[:, -1] = 1.0
    return J


def _initial_peaks(x, y, n_peaks):
    base = float(np.percentile(y, 10))
    yy = y - base
    idx, _ = find_peaks(yy)
    if idx.size == 0:
        idx = np.array([int(np.argmax(yy))])
    idx = idx[np.argsort(yy[idx])[::-1][:n_peaks]]
    if idx.size < n_peaks:
        raise DegenerateDataError(f"found only {idx.size} peak(s), {n_peaks} requested")
    widths = peak_widths(yy, idx, rel_height=0.5)[0]
    dx = float(np.mean(np.diff(x)))
    p = []
    for i, wbin in zip(sorted(idx), widths[np.argsort(idx)]):
        fw = max(wbin * dx, 2 * dx)
        p += [x[i], yy[i] * fw * 1.2, fw / 4.0, fw / 4.0]
    return p + [base]


def fit_voigt(spectrum: Spectrum, n_peaks=1, weighted=True, allow_nonconverged=False) -> FitResult:
    """Fit ``n_peaks`` Voigt profiles over a constant baseline.

    With ``weighted=True`` the result is the Poisson maximum-likelihood fit
    (see :func:`_poisson_refine`); otherwise plain least squares.

    ``extras["peaks"]`` lists per peak ``center_nm``, ``fwhm_nm`` and ``Q``.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    x, y = spectrum.wavelength_nm, spectrum.counts
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        raise DegenerateDataError("flat spectrum: nothing to fit")
    w = 1.0 / np.sqrt(np.maximum(y, 1.0)) if weighted else np.ones_like(y)
    p0 = _initial_peaks(x, y, n_peaks)
    names = [f"{n}_{k}" for k in range(n_peaks) for n in ("center_nm", "area", "sigma_nm", "gamma_nm")]
    names.append("baseline")
    fit = _fit(lambda p: w * (voigt_model(x, p) - y), lambda p: w[:, None] * voigt_jacobian(x, p),
               p0, names, absolute_sigma=weighted, allow_nonconverged=allow_nonconverged)
    if weighted and fit.converged:
        fit = _poisson_refine(fit, lambda p: voigt_model(x, p), lambda p: voigt_jacobian(x, p), y,
                              allow_nonconverged)
    peaks = []
    for k in range(n_peaks):
        c, A, s, g = fit.values[4 * k: 4 * k + 4]
        fit.values[4 * k + 2] = abs(s)
        fit.values[4 * k + 3] = abs(g)
        fw = voigt_fwhm(s, g)
        # sigma of the FWHM by propagating through (sigma, gamma)
        eps = 1e-6 * max(fw, 1e-12)
        dfs = (voigt_fwhm(abs(s) + eps, g) - voigt_fwhm(max(abs(s) - eps, 0), g)) / (
            abs(s) + eps - max(abs(s) - eps, 0))
        dfg = (voigt_fwhm(s, abs(g) + eps) - voigt_fwhm(s, max(abs(g) - eps, 0))) / (
            abs(g) + eps - max(abs(g) - eps, 0))
        sub = fit.covariance[4 * k + 2: 4 * k + 4, 4 * k + 2: 4 * k + 4]
        grad = np.array([dfs, dfg])
        sfw = float(np.sqrt(max(grad @ sub @ grad, 0.0)))
        q = c / fw
        peaks.append({"center_nm": float(c), "fwhm_nm": float(fw), "sigma_fwhm_nm": sfw,
                      "Q": float(q), "sigma_Q": float(q * sfw / fw)})
    peaks.sort(key=lambda d: d["center_nm"])
    fit.extras["peaks"] = peaks
    return fit


# --------------------------------------------------------------------------
# Decay curves
# --------------------------------------------------------------------------

def emg(u, tau, sigma):
    """Unit-amplitude exponential decay started at u = 0, convolved with a Gaussian."""
    u = np.asarray(u, float)
    if sigma <= 0:
        return np.where(u >= 0, np.exp(-np.maximum(u, 0) / tau), 0.0)
    z = (sigma / tau - u / sigma) / SQRT2
    pos = z > 0
    out = np.empty_like(u)
    out[pos] = 0.5 * np.exp(-0.5 * (u[pos] / sigma) ** 2) * erfcx(z[pos])
    up = u[~pos]
    out[~pos] = 0.5 * np.exp(0.5 * (sigma / tau) ** 2 - up / tau) * erfc(z[~pos])
    return out


def _emg_grads(u, tau, sigma):
    f = emg(u, tau, sigma)
    if sigma <= 0:
        return f, -f / tau, f * u / tau ** 2
    g = np.exp(-0.5 * (u / sigma) ** 2) / (sigma * SQRT2PI)
    d_u = -f / tau + g
    d_tau = f * (-(sigma ** 2) / tau ** 3 + u / tau ** 2) + sigma ** 2 / tau ** 2 * g
    return f, d_u, d_tau


@dataclass(frozen=True)
class DecayLayout:
    n_exp: int
    spike: bool

    @property
    def names(self):
        n = ["t0_ns"]
        for i in range(self.n_exp):
            n += [f"amplitude_{i}", f"tau_{i}_ns"]
        if self.spike:
            n.append("spike_amplitude")
        return n + ["background"]


def decay_model(t, p, layout: DecayLayout, sigma):
    t = np.asarray(t, float)
    u = t - p[0]
    out = np.full(t.shape, p[-1], dtype=float)
    for i in range(layout.n_exp):
        out += p[1 + 2 * i] * emg(u, p[2 + 2 * i], sigma)
    if layout.spike:
        out += p[1 + 2 * layout.n_exp] * _spike(u, sigma)
    return out


def _spike(u, sigma):
    s = max(sigma, 1e-6)
    return np.exp(-0.5 * (u / s) ** 2)


def decay_jacobian(t, p, layout: DecayLayout, sigma):
    t = np.asarray(t, float)
    u = t - p[0]
    J = np.zeros((t.size, len(p)))
    for i in range(layout.n_exp):
        A, tau = p[1 + 2 * i], p[2 + 2 * i]
        f, du, dtau = _emg_grads(u, tau, sigma)
        J[:, 0] -= A * du
        J[:, 1 + 2 * i] = f
        J[:, 2 + 2 * i] = A * dtau
    if layout.spike:
        s = max(sigma, 1e-6)
        S = p[1 + 2 * layout.n_exp]
        g = _spike(u, sigma)
        J[:, 1 + 2 * layout.n_exp] = g
        J[:, 0] += S * g * u / s ** 2
    J[:, -1] = 1.0
    return J


def _linear_design(t, t0, taus, layout, sigma):
    u = t - t0
    cols = [emg(u, tau, sigma) for tau in taus]
    if layout.spike:
        cols.append(_spike(u, sigma))
    cols.append(np.ones_like(t))
    return np.column_stack(cols)


def _pack(t0, taus, coef, layout):
    p = [t0]
    for tau, a in zip(taus, coef):
        p += [a, tau]
    p += list(coef[len(taus):])
    return np.array(p, float)


def _decay_candidates(t, y, w, layout, sigma, keep=4):
    """Grid over (t0, lifetimes) with amplitudes solved linearly (variable projection)."""
    i_max = int(np.argmax(y))
    base = float(np.median(y[: max(i_max // 2, 1)]))
    half = base + 0.5 * (y[i_max] - base)
    rise = np.flatnonzero(y[: i_max + 1] < half)
    t_half = float(t[rise[-1]]) if rise.size else float(t[i_max])
    width = max(sigma, t[1] - t[0])
    t0s = t_half + np.linspace(-2.0, 4.0, 25) * width
    span = t[-1] - t[i_max]
    grid = np.geomspace(max(5 * (t[1] - t[0]), 0.5 * sigma), span / 2, 14)
    scored = []
    for t0 in t0s:
        for taus in combinations(grid, layout.n_exp):
            A = _linear_design(t, t0, taus, layout, sigma) * w[:, None]
            coef, *_ = np.linalg.lstsq(A, w * y, rcond=None)
            r = A @ coef - w * y
            scored.append((float(r @ r), t0, taus, coef))
    scored.sort(key=lambda v: v[0])
    return [_pack(t0, taus, coef, layout) for _, t0, taus, coef in scored[:keep]]


def fit_decay(curve: DecayCurve, n_exp=1, fit_irf_spike=False, weighted=True,
              allow_nonconverged=False) -> FitResult:
    """Fit ``n_exp`` Gaussian-convolved exponentials (+ optional IRF spike) and a background.

    The IRF width is fixed by ``curve.irf_fwhm_ns``; the onset ``t0`` is free.
    Weighted fits are Poisson maximum-likelihood, as for spectra.
    Lifetimes come back sorted ascending (``tau_0_ns`` fastest).
    """
    if n_exp not in (1, 2, 3):
        raise ValueError("n_exp must be 1, 2 or 3")
    t, y = curve.time_ns, curve.counts
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        raise DegenerateDataError("decay curve is flat: nothing to fit")
    sigma = curve.irf_fwhm_ns / FWHM_PER_SIGMA
    layout = DecayLayout(n_exp, bool(fit_irf_spike))
    w = 1.0 / np.sqrt(np.maximum(y, 1.0)) if weighted else np.ones_like(y)
    best = None
    for p0 in _decay_candidates(t, y, w, layout, sigma):
        try:
            fit = _fit(lambda p: w * (decay_model(t, p, layout, sigma) - y),
                       lambda p: w[:, None] * decay_jacobian(t, p, layout, sigma),
                       p0, layout.names, absolute_sigma=weighted, allow_nonconverged=True)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or (fit.converged, -fit.reduced_chi2) > (best.converged, -best.reduced_chi2):
            best = fit
    if best is None or (not best.converged and not allow_nonconverged):
        raise ConvergenceError("decay fit did not converge from any starting point")
    if weighted and best.converged:
        best = _poisson_refine(best, lambda p: decay_model(t, p, layout, sigma),
                               lambda p: decay_jacobian(t, p, layout, sigma), y, allow_nonconverged)
    _sort_lifetimes(best, n_exp)
    taus = sorted(best.params[f"tau_{i}_ns"] for i in range(n_exp))
    for a, b in zip(taus, taus[1:]):
        if b - a < 0.1 * b:
            warnings.warn(f"lifetimes {a:.4g} and {b:.4g} ns are within 10 %: not separately "
                          "identifiable", IdentifiabilityWarning, stacklevel=2)
    best.extras["lifetimes_ns"] = taus
    best.extras["irf_fwhm_ns"] = curve.irf_fwhm_ns
    return best


def _sort_lifetimes(fit: FitResult, n_exp):
    taus = np.array([abs(fit.values[2 + 2 * i]) for i in range(n_exp)])
    order = np.argsort(taus)
    perm = list(range(len(fit.values)))
    for new, old in enumerate(order):
        perm[1 + 2 * new] = 1 + 2 * old
        perm[2 + 2 * new] = 2 + 2 * old
    fit.values = fit.values[perm]
    fit.values[[2 + 2 * i for i in range(n_exp)]] = np.abs(fit.values[[2 + 2 * i for i in range(n_exp)]])
    fit.covariance = fit.covariance[np.ix_(perm, perm)]


# --------------------------------------------------------------------------
# Purcell factor
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EmitterCavity:
    """Symbols of the point-emitter Purcell formula.

    Frequencies are angular (rad/s).  ``background_rate`` is an optional
    decay channel added to F_P in the lifetime (``tau_cav = tau_bulk /
    (F_P + background_rate)``); it is zero by default, matching the formula
    exactly.
    """

    omega: float
    omega_c: float
    q_factor: float
    mode_volume: float
    epsilon: float
    tau_bulk_ns: float
    background_rate: float = 0.0

    def __post_init__(self):
        for name in ("omega", "omega_c", "q_factor", "mode_volume", "tau_bulk_ns"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.background_rate < 0:
            raise ValueError("background_rate must be non-negative")

    @classmethod
    def from_detuning(cls, detuning_mev, cavity_wavelength_nm, q_factor, mode_volume, epsilon,
                      tau_bulk_ns, background_rate=0.0):
        """Detuning = E_emitter - E_cavity in meV (negative: emitter red of the cavity)."""
        e_c = HC_EV_NM / cavity_wavelength_nm
        omega_c = e_c / HBAR_EV_S
        omega = (e_c + 1e-3 * detuning_mev) / HBAR_EV_S
        return cls(omega, omega_c, q_factor, mode_volume, epsilon, tau_bulk_ns, background_rate)


def lorentzian_factor(omega, omega_c, q):
    return omega_c ** 2 / (4 * q * q * (omega - omega_c) ** 2 + omega_c ** 2)


def purcell_curve(system: EmitterCavity):
    """{"F_P", "tau_cav_ns", "lorentzian"} for one emitter-cavity configuration."""
    L = lorentzian_factor(system.omega, system.omega_c, system.q_factor)
    fp = 3 * system.q_factor / (4 * math.pi ** 2 * system.mode_volume) * L * system.epsilon ** 2
    rate = fp + system.background_rate
    tau = system.tau_bulk_ns / rate if rate > 0 else math.inf
    return {"F_P": fp, "tau_cav_ns": tau, "lorentzian": L}


def purcell_ratio(tau_bulk_ns, tau_cav_ns):
    """Measured Purcell factor tau_bulk / tau_cav."""
    return tau_bulk_ns / tau_cav_ns


def _purcell_k(detuning_mev, fixed):
    e_c = HC_EV_NM / fixed["cavity_wavelength_nm"] * 1e3   # meV
    d = np.asarray(detuning_mev, float)
    L = e_c ** 2 / (4 * fixed["q_factor"] ** 2 * d ** 2 + e_c ** 2)
    return 3 * fixed["q_factor"] / (4 * math.pi ** 2 * fixed["mode_volume"]) * L


def purcell_tau_model(detuning_mev, p, fixed):
    k = _purcell_k(detuning_mev, fixed)
    return fixed["tau_bulk_ns"] / (k * p[0] ** 2 + fixed.get("background_rate", 0.0))


def purcell_tau_jacobian(detuning_mev, p, fixed):
    k = _purcell_k(detuning_mev, fixed)
    rate = k * p[0] ** 2 + fixed.get("background_rate", 0.0)
    return (-fixed["tau_bulk_ns"] * 2 * k * p[0] / rate ** 2)[:, None]


PURCELL_FIXED_KEYS = ("q_factor", "cavity_wavelength_nm", "mode_volume", "tau_bulk_ns")


def fit_purcell(detuning_mev, tau_cav_ns, fixed: Dict[str, float], sign=1.0) -> FitResult:
    """Least-squares overlap factor epsilon from lifetime-vs-detuning points.

    ``fixed`` holds ``q_factor``, ``cavity_wavelength_nm``, ``mode_volume``,
    ``tau_bulk_ns`` and optionally ``background_rate``.  Residuals are
    relative (``(model - tau) / tau``).  ``sign=-1`` flips the detuning
    convention.  Epsilon is confined to [0, 1]; ``extras["at_bound"]``
    reports a solution on the boundary.
    """
    d = sign * np.asarray(detuning_mev, float)
    tau = np.asarray(tau_cav_ns, float)
    if d.shape != tau.shape or d.ndim != 1:
        raise SchemaError("detuning and lifetime arrays must be 1-D and equal length")
    if d.size < 3:
        raise InsufficientDataError(f"need at least 3 points, got {d.size}")
    missing = [k for k in PURCELL_FIXED_KEYS if k not in fixed]
    if missing:
        raise ValueError(f"missing fixed parameters: {missing}")
    if any(not fixed[k] > 0 for k in PURCELL_FIXED_KEYS) or np.any(tau <= 0):
        raise ValueError("fixed parameters and lifetimes must be positive")
    w = 1.0 / tau
    resid = lambda p: w * (purcell_tau_model(d, p, fixed) - tau)
    jac = lambda p: w[:, None] * purcell_tau_jacobian(d, p, fixed)
    # rate data are linear in eps^2: closed-form start
    k = _purcell_k(d, fixed)
    rate = fixed["tau_bulk_ns"] / tau - fixed.get("background_rate", 0.0)
    e2 = float(np.sum(k * rate) / np.sum(k * k))
    start = math.sqrt(min(max(e2, 1e-8), 1.0))
    with np.errstate(all="ignore"):
        res = least_squares(resid, [start], jac=jac, bounds=([0.0], [1.0]), method="trf",
                            xtol=XTOL, ftol=XTOL, gtol=1e-15, max_nfev=MAX_ITER)
    r = res.fun
    dof = max(r.size - 1, 1)
    chi2 = float(r @ r) / dof
    J = res.jac
    jtj = float(J[:, 0] @ J[:, 0])
    var = chi2 / jtj if jtj > 0 else math.inf
    eps = float(res.x[0])
    at_bound = eps <= 1e-6 or eps >= 1 - 1e-6
    fit = FitResult(["epsilon"], np.array([eps]), np.array([[var]]), chi2, r, bool(res.success),
                    int(res.nfev), {"at_bound": bool(at_bound), "fixed": dict(fixed)})
    return fit


# --------------------------------------------------------------------------
# CSV input
# --------------------------------------------------------------------------

def read_csv(path, columns: Sequence[str]):
    """Two or more numeric columns with a header naming them; '#' lines are comments."""
    header, rows = None, []
    try:
        with open(path) as fh:
            for line in fh:
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                if header is None:
                    header = [c.strip() for c in s.split(",")]
                    continue
                rows.append(s)
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{path}: empty file")
    if header[: len(columns)] != list(columns):
        raise SchemaError(f"{path}: expected header {','.join(columns)}, got {','.join(header)}")
    try:
        data = np.array([[float(v) for v in r.split(",")[: len(columns)]] for r in rows])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric entry ({exc})") from exc
    if data.size == 0:
        data = np.empty((0, len(columns)))
    return [data[:, i] for i in range(len(columns))]


# registry used by the Jacobian checks
def fit_models():
    """name -> (model(x, p), jacobian(x, p), sample(rng) -> (x, p))."""
    def voigt_sample(rng):
        n = int(rng.integers(1, 3))
        p = []
        for _ in range(n):
            p += [1550 + rng.uniform(-0.5, 0.5), rng.uniform(50, 500), rng.uniform(0.02, 0.2),
                  rng.uniform(0.02, 0.2)]
        return np.linspace(1548.5, 1551.5, 301), np.array(p + [rng.uniform(0, 50)])

    def decay_sample(rng, spike):
        n = int(rng.integers(1, 4))
        lay = DecayLayout(n, spike)
        p = [rng.uniform(0.8, 1.2)]
        for _ in range(n):
            p += [rng.uniform(100, 1000), rng.uniform(0.2, 3.0)]
        if spike:
            p.append(rng.uniform(10, 300))
        p.append(rng.uniform(0, 20))
        return np.linspace(0, 10, 500), np.array(p), lay

    def decay_entry(spike):
        state = {}

        def sample(rng):
            x, p, lay = decay_sample(rng, spike)
            state["lay"] = lay
            return x, p
        sigma = 0.05 / FWHM_PER_SIGMA
        return (lambda x, p: decay_model(x, p, state["lay"], sigma),
                lambda x, p: decay_jacobian(x, p, state["lay"], sigma), sample)

    fixed = {"q_factor": 5704.0, "cavity_wavelength_nm": 1523.2, "mode_volume": 0.8,
             "tau_bulk_ns": 1.78}
    return {
        "voigt": (voigt_model, voigt_jacobian, voigt_sample),
        "decay": decay_entry(False),
        "decay_spike": decay_entry(True),
        "purcell": (lambda x, p: purcell_tau_model(x, p, fixed),
                    lambda x, p: purcell_tau_jacobian(x, p, fixed),
                    lambda rng: (np.linspace(-1.2, 0.3, 25), np.array([rng.uniform(0.05, 1.0)]))),
    }
