"""Seeded synthetic measurement records.

Random numbers come from ``numpy.random.Generator(numpy.random.Philox(seed))``
(Philox4x64-10, counter-based); the algorithm name and seed are written into
every CSV header together with the generating parameters.

The model evaluations here are written independently of the fitting code
(log-space EMG via ``log_ndtr``, direct Voigt from the Faddeeva function) so
that generator and fitter check each other.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, wofz

from .fitkit import DecayCurve, Spectrum
from .photon_stats import DEFAULT_REP_PERIOD_NS, CorrelationHistogram

RNG_NAME = "numpy.random.Philox"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    noise: str = "poisson"       # "poisson" or "none"
    counts_scale: float = 1.0

    def __post_init__(self):
        if self.noise not in ("poisson", "none"):
            raise ValueError("noise must be 'poisson' or 'none'")
        if not self.counts_scale > 0:
            raise ValueError("counts_scale must be positive")

    def rng(self):
        return np.random.Generator(np.random.Philox(int(self.seed)))

    def realise(self, expected):
        lam = np.asarray(expected, float) * self.counts_scale
        if self.noise == "none":
            return lam
        return self.rng().poisson(np.maximum(lam, 0.0)).astype(float)


def _voigt_peak_shape(x, center, sigma, gamma):
    """Voigt normalised to unit height at the centre."""
    if sigma == 0:
        return gamma ** 2 / ((x - center) ** 2 + gamma ** 2)
    z = (x - center + 1j * gamma) / (sigma * math.sqrt(2))
    z0 = 1j * gamma / (sigma * math.sqrt(2))
    return wofz(z).real / wofz(z0).real


def gen_spectrum(peaks: Sequence[Dict[str, float]], baseline: float, wavelength_nm,
                 config: SynthConfig = SynthConfig()) -> Spectrum:
    """Voigt peaks (keys center_nm, sigma_nm, gamma_nm, height) on a flat baseline."""
    x = np.asarray(wavelength_nm, float)
    y = np.full(x.shape, float(baseline))
    for p in peaks:
        y += p["height"] * _voigt_peak_shape(x, p["center_nm"], p["sigma_nm"], p["gamma_nm"])
    meta = {"generator": "gen_spectrum", "peaks": repr(list(peaks)), "baseline": repr(baseline),
            **_meta(config)}
    return Spectrum(x, config.realise(y), meta)


def _emg_log(u, tau, sigma):
    """log of 0.5 exp(sigma^2/2tau^2 - u/tau) erfc((sigma/tau - u/sigma)/sqrt 2)."""
    # erfc(z) = 2 Phi(-sqrt(2) z)
    return 0.5 * (sigma / tau) ** 2 - u / tau + log_ndtr(u / sigma - sigma / tau)


def decay_expected(time_ns, lifetimes, amplitudes, irf_fwhm_ns=0.0, t0_ns=1.0, spike=0.0,
                   background=0.0):
    t = np.asarray(time_ns, float)
    u = t - t0_ns
    sigma = irf_fwhm_ns / (2 * math.sqrt(2 * math.log(2)))
    y = np.full(t.shape, float(background))
    for tau, amp in zip(lifetimes, amplitudes):
        if sigma == 0:
            y += amp * np.where(u >= 0, np.exp(-np.clip(u, 0, None) / tau), 0.0)
        else:
            y += amp * np.exp(_emg_log(u, tau, sigma))
    if spike:
        s = max(sigma, 1e-6)
        y += spike * np.exp(-0.5 * (u / s) ** 2)
    return y


def gen_decay(lifetimes, amplitudes, irf_fwhm_ns=0.025, spike=0.0,
              config: SynthConfig = SynthConfig(), time_ns=None, t0_ns=1.0,
              background=0.0) -> DecayCurve:
    """Exponential decays (amplitude = counts per bin at onset) convolved with a Gaussian IRF.

    ``spike`` is the peak height of an IRF-shaped component at ``t0_ns``
    (zero disables it).
    """
    if any(t <= 0 for t in lifetimes):
        raise ValueError("lifetimes must be positive")
    if len(lifetimes) != len(amplitudes):
        raise ValueError("one amplitude per lifetime")
    if time_ns is None:
        time_ns = np.arange(0.0, 12.0, 0.004)
    y = decay_expected(time_ns, lifetimes, amplitudes, irf_fwhm_ns, t0_ns, spike, background)
    return DecayCurve(np.asarray(time_ns, float), config.realise(y), irf_fwhm_ns)


@dataclass(frozen=True)
class PeakShape:
    """Per-peak coincidence shape: a QD component and an optional sharp component."""

    tau_ns: float = 0.343
    sharp_tau_ns: float = 0.03
    sharp_fraction: float = 0.0      # share of the peak area in the sharp component
    side_area: float = 5000.0        # counts in each side peak
    background: float = 0.0          # flat counts per bin


def hbt_expected(delay_ns, g2_true, shape: PeakShape, rep_period_ns, n_side, centers=None):
    t = np.asarray(delay_ns, float)
    bin_ns = t[1] - t[0]
    y = np.full(t.shape, float(shape.background))
    a_sharp = shape.side_area * shape.sharp_fraction / (2 * shape.sharp_tau_ns) * bin_ns
    a_qd = shape.side_area * (1 - shape.sharp_fraction) / (2 * shape.tau_ns) * bin_ns
    for i, k in enumerate(range(-n_side - 1, n_side + 2)):
        c = k * rep_period_ns if centers is None else centers[i]
        scale = g2_true if k == 0 else 1.0
        u = np.abs(t - c)
        y += scale * (a_qd * np.exp(-u / shape.tau_ns) + a_sharp * np.exp(-u / shape.sharp_tau_ns))
    return y


def gen_hbt(g2_true, shape: PeakShape = PeakShape(), n_side_peaks=5,
            config: SynthConfig = SynthConfig(), rep_period_ns=DEFAULT_REP_PERIOD_NS,
            bin_ns=0.004, center_jitter=0.0) -> CorrelationHistogram:
    """Pulsed coincidence histogram with equal side peaks and a zero-delay peak of g2 x side area.

    Peaks are generated one period beyond the analysed span so edge windows
    see realistic tails.  ``center_jitter`` displaces each peak centre by a
    uniform random fraction of the period (peak-finding tests).
    """
    if not 0.0 <= g2_true <= 1.5:
        raise ValueError("g2_true must lie in [0, 1.5]")
    half = (n_side_peaks + 0.5) * rep_period_ns
    nb = int(round(2 * half / bin_ns))
    t = -half + (np.arange(nb) + 0.5) * bin_ns
    centers = None
    if center_jitter:
        rng = np.random.Generator(np.random.Philox(int(config.seed) + 0x5EED))
        ks = np.arange(-n_side_peaks - 1, n_side_peaks + 2)
        centers = ks * rep_period_ns + rng.uniform(-1, 1, ks.size) * center_jitter * rep_period_ns
    y = hbt_expected(t, g2_true, shape, rep_period_ns, n_side_peaks, centers)
    hist = CorrelationHistogram(t, config.realise(y), rep_period_ns)
    hist.true_centers = centers
    return hist


def _meta(config: SynthConfig):
    return {"rng": RNG_NAME, "seed": str(config.seed), "noise": config.noise,
            "counts_scale": repr(config.counts_scale), "numpy": np.__version__}


def write_csv(path, columns, arrays, params: Optional[Dict] = None, config: Optional[SynthConfig] = None):
    """CSV with ``# key: value`` header comments describing how the data were made."""
    lines = []
    meta = dict(params or {})
    if config is not None:
        meta.update(_meta(config))
    for k, v in meta.items():
        lines.append(f"# {k}: {v}")
    lines.append(",".join(columns))
    cols = [np.asarray(a, float) for a in arrays]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
