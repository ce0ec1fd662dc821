"""Pulsed HBT analysis: peak windows, two-sided double-exponential peak fits, g2(0).

Peak fits weight residuals by the Poisson variance of the *model*, refreshed
until the weights settle (which lands on the Poisson maximum-likelihood
fit).  Unlike a data-based weight with a floor at one count, this keeps the
estimate equivariant under rescaling of the histogram, so g2 does not depend
on the count scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import least_squares

from .fitkit import MAX_ITER, MAX_REWEIGHT, XTOL, ConvergenceError, FitResult, SchemaError

DEFAULT_REP_PERIOD_NS = 12.5


class SpanError(ValueError):
    pass


@dataclass
class CorrelationHistogram:
    delay_ns: np.ndarray
    coincidences: np.ndarray
    rep_period_ns: float = DEFAULT_REP_PERIOD_NS

    def __post_init__(self):
        self.delay_ns = np.asarray(self.delay_ns, float)
        self.coincidences = np.asarray(self.coincidences, float)
        if self.delay_ns.ndim != 1 or self.delay_ns.shape != self.coincidences.shape:
            raise SchemaError("delay and coincidence arrays must be 1-D and equal length")
        if self.delay_ns.size < 2:
            raise SchemaError("histogram needs at least two bins")
        d = np.diff(self.delay_ns)
        if np.any(d <= 0) or np.ptp(d) > 1e-6 * d.mean():
            raise SchemaError("histogram bins must be uniform and ascending")
        if not self.rep_period_ns > 0:
            raise SchemaError("repetition period must be positive")
        if np.any(self.coincidences < 0) or not np.all(np.isfinite(self.coincidences)):
            raise SchemaError("coincidences must be finite and non-negative")

    @property
    def bin_ns(self):
        return float(self.delay_ns[1] - self.delay_ns[0])

    def scaled(self, factor):
        return CorrelationHistogram(self.delay_ns, self.coincidences * factor, self.rep_period_ns)


@dataclass(frozen=True)
class PeakWindow:
    index: int            # k: peak at k * T
    center_ns: float
    lo_ns: float
    hi_ns: float


def segment_peaks(hist: CorrelationHistogram, n_side=5, refine=False, zero_delay_ns=0.0):
    """Windows of one period width centred on ``zero_delay + k T`` for |k| <= n_side.

    With ``refine=True`` each reported centre is replaced by the fitted peak
    centre; window bounds stay on the nominal grid so windows never overlap.
    """
    T = hist.rep_period_ns
    lo, hi = hist.delay_ns[0], hist.delay_ns[-1]
    need = n_side * T
    tol = 0.5 * hist.bin_ns
    if lo - zero_delay_ns > -need + tol or hi - zero_delay_ns < need - tol:
        covered = int(min(np.floor((zero_delay_ns - lo + tol) / T), np.floor((hi - zero_delay_ns + tol) / T)))
        raise SpanError(f"histogram covers {2 * max(covered, 0) + 1} peaks; "
                        f"{2 * n_side + 1} are required")
    wins = []
    for k in range(-n_side, n_side + 1):
        c = zero_delay_ns + k * T
        wins.append(PeakWindow(k, c, c - T / 2, c + T / 2))
    if refine:
        wins = [PeakWindow(w.index, fit_peak(hist, w).center_ns, w.lo_ns, w.hi_ns) for w in wins]
    return wins


@dataclass
class PeakFit:
    index: int
    center_ns: float
    area: float
    sigma_area: float
    tau_fast_ns: float
    tau_slow_ns: float
    amp_fast: float
    amp_slow: float
    background: float
    raw_counts: float
    fit: FitResult = field(repr=False)
    # area as a fraction of the whole histogram's counts; ratios of these
    # never see the count scale
    area_share: float = field(default=math.nan, repr=False)

    @property
    def rise_fast_ns(self):
        return self.tau_fast_ns

    @property
    def decay_fast_ns(self):
        return self.tau_fast_ns

    @property
    def rise_slow_ns(self):
        return self.tau_slow_ns

    @property
    def decay_slow_ns(self):
        return self.tau_slow_ns

    @property
    def amplitude_split(self):
        fa = self.amp_fast * self.tau_fast_ns
        tot = fa + self.amp_slow * self.tau_slow_ns
        return fa / tot if tot > 0 else math.nan

    def to_dict(self):
        return {"index": self.index, "center_ns": self.center_ns, "area": self.area,
                "sigma_area": self.sigma_area, "tau_fast_ns": self.tau_fast_ns,
                "tau_slow_ns": self.tau_slow_ns, "amp_fast": self.amp_fast,
                "amp_slow": self.amp_slow, "background": self.background,
                "raw_counts": self.raw_counts}


# p = [c, A_fast, tau_fast, A_slow, tau_slow, bg]
PEAK_NAMES = ["center_ns", "amp_fast", "tau_fast_ns", "amp_slow", "tau_slow_ns", "background"]


def peak_model(t, p):
    u = np.abs(np.asarray(t, float) - p[0])
    return p[5] + p[1] * np.exp(-u / p[2]) + p[3] * np.exp(-u / p[4])


def peak_jacobian(t, p):
    t = np.asarray(t, float)
    u = t - p[0]
    a = np.abs(u)
    s = np.sign(u)
    e1 = np.exp(-a / p[2])
    e2 = np.exp(-a / p[4])
    J = np.empty((t.size, 6))
    J[:, 0] = s * (p[1] * e1 / p[2] + p[3] * e2 / p[4])
    J[:, 1] = e1
    J[:, 2] = p[1] * e1 * a / p[2] ** 2
    J[:, 3] = e2
    J[:, 4] = p[3] * e2 * a / p[4] ** 2
    J[:, 5] = 1.0
    return J


def peak_area(p):
    return 2.0 * (p[1] * p[2] + p[3] * p[4])


def _area_grad(p):
    return np.array([0.0, 2 * p[2], 2 * p[1], 2 * p[4], 2 * p[3], 0.0])


def _lm(resid, jac, p0, free, lower, upper):
    """Bounded trust-region least squares over the ``free`` parameters."""
    free = np.asarray(free)
    p_full = np.asarray(p0, float).copy()
    lb = np.asarray(lower, float)[free]
    ub = np.asarray(upper, float)[free]

    def r(q):
        p = p_full.copy()
        p[free] = q
        return resid(p)

    def j(q):
        p = p_full.copy()
        p[free] = q
        return jac(p)[:, free]

    x0 = np.clip(p_full[free], lb, ub)
    with np.errstate(all="ignore"):
        res = least_squares(r, x0, jac=j, bounds=(lb, ub), method="trf", x_scale="jac",
                            xtol=XTOL, ftol=XTOL, gtol=1e-15, max_nfev=MAX_ITER * (free.size + 1))
    p = p_full.copy()
    p[free] = res.x
    return p, res


def fit_peak(hist: CorrelationHistogram, window: PeakWindow, shape=None) -> PeakFit:
    """Fit one coincidence peak.

    ``shape = (center, tau_fast, tau_slow[, single])`` freezes the peak
    shape and fits only the amplitudes and the background (a linear
    problem), which is how the suppressed zero-delay peak is handled by
    :func:`g2_zero`.  With ``single`` true the slow amplitude stays at zero.
    """
    sel = (hist.delay_ns >= window.lo_ns) & (hist.delay_ns < window.hi_ns)
    t = hist.delay_ns[sel]
    raw = float(hist.coincidences[sel].sum())
    # work in units of the histogram total so the optimiser sees the same
    # numbers whatever the count scale (exact rescaling invariance)
    total = float(hist.coincidences.sum()) or 1.0
    y = hist.coincidences[sel] / total
    if t.size < 8:
        raise ConvergenceError(f"peak {window.index}: window holds only {t.size} bins")
    if shape is None and np.ptp(y) <= 0:
        raise ConvergenceError(f"peak {window.index}: window is flat, no peak to fit")
    bg0 = float(np.percentile(y, 5))
    if shape is None:
        i = int(np.argmax(y))
        height = max(float(y[i] - bg0), 1e-300)
        above = t[(y - bg0) > 0.5 * height]
        hw = max(0.5 * (above.max() - above.min()) if above.size else 0.0, hist.bin_ns)
        # two starts: components distinct by about an order of magnitude
        p0 = np.array([t[i], 0.5 * height, hw / math.log(2) / 3, 0.5 * height, hw / math.log(2) * 3,
                       bg0])
        free = np.arange(6)
    else:
        c, tf, ts = shape[:3]
        single = len(shape) > 3 and shape[3]
        height = max(float(y.max() - bg0), 0.0)
        p0 = np.array([c, 0.5 * height, tf, 0.0 if single else 0.5 * height, ts, bg0])
        free = np.array([1, 5]) if single else np.array([1, 3, 5])

    # time constants between one bin (unresolvable below) and one period
    # (beyond that a component is indistinguishable from background)
    lower = np.array([-np.inf, 0.0, hist.bin_ns, 0.0, hist.bin_ns, 0.0])
    T = hist.rep_period_ns
    upper = np.array([np.inf, np.inf, T, np.inf, T, np.inf])
    # uniform-weight start, then weights 1/model refreshed until they settle:
    # the fixed point is the Poisson maximum-likelihood fit
    p, res = _lm(lambda p: peak_model(t, p) - y, lambda p: peak_jacobian(t, p), p0, free, lower, upper)
    for _ in range(MAX_REWEIGHT):
        m = peak_model(t, p)
        floor = 1e-9 * max(float(np.abs(m).max()), 1e-300)
        w = 1.0 / np.sqrt(np.maximum(m, floor))
        p, res = _lm(lambda q: w * (peak_model(t, q) - y),
                     lambda q: w[:, None] * peak_jacobian(t, q), p, free, lower, upper)
        if not res.success:
            break
        if np.max(np.abs(peak_model(t, p) - m)) <= 1e-10 * max(float(m.max()), 1e-300):
            break
    if not res.success or not np.all(np.isfinite(p)):
        raise ConvergenceError(f"peak {window.index}: fit did not converge ({res.message})")
    # order components fast/slow
    if p[2] > p[4]:
        p = p[[0, 3, 4, 1, 2, 5]]
        idx_map = {0: 0, 1: 3, 2: 4, 3: 1, 4: 2, 5: 5}
        free = np.array(sorted(idx_map[int(f)] for f in free))
    m = peak_model(t, p)
    w = 1.0 / np.sqrt(np.maximum(m, 1e-9 * max(float(np.abs(m).max()), 1e-300)))
    J = (w[:, None] * peak_jacobian(t, p))[:, free]
    cov = np.zeros((6, 6))
    # Poisson variance of the normalised data is model / total
    cov[np.ix_(free, free)] = np.linalg.pinv(J.T @ J) / total
    r = w * (m - y) * math.sqrt(total)
    chi2 = float(r @ r) / max(r.size - free.size, 1)
    share = float(peak_area(p) / hist.bin_ns)
    # back to counts per bin
    d = np.array([1.0, total, 1.0, total, 1.0, total])
    p = p * d
    cov = cov * np.outer(d, d)
    fit = FitResult(list(PEAK_NAMES), p, cov, chi2, r, True, int(res.nfev))
    # model integral (counts/bin x ns) divided by the bin width gives counts
    g = _area_grad(p) / hist.bin_ns
    sig = float(np.sqrt(max(g @ cov @ g, 0.0)))
    return PeakFit(window.index, float(p[0]), float(peak_area(p) / hist.bin_ns), sig, float(p[2]),
                   float(p[4]), float(p[1]), float(p[3]), float(p[5]), raw, fit, share)


@dataclass
class G2Result:
    g2: float
    sigma: float
    sigma_poisson: float
    g2_counts: float
    used_peaks: List[int]
    peaks: List[PeakFit]
    label: Optional[str] = None

    def to_dict(self):
        return {"schema": 1, "g2": self.g2, "sigma": self.sigma,
                "sigma_poisson": self.sigma_poisson, "g2_window_counts": self.g2_counts,
                "used_peaks": self.used_peaks, "temperature_label": self.label,
                "peaks": [p.to_dict() for p in self.peaks]}


LIVE_SHARE = 1e-3


def _shared_shape(side, period, zero_delay_ns):
    """(centre, tau_fast, tau_slow, single) for the zero-delay peak, from the side-peak fits.

    Medians keep one odd side peak from distorting the shape.  A component
    carrying less than ``LIVE_SHARE`` of a peak's area is treated as absent;
    if most side peaks are single-component, so is the zero-delay model.
    """
    off = float(np.median([f.center_ns - (zero_delay_ns + f.index * period) for f in side]))
    fast, slow, single = [], [], []
    for f in side:
        a_f, a_s = f.amp_fast * f.tau_fast_ns, f.amp_slow * f.tau_slow_ns
        tot = a_f + a_s
        live_f, live_s = a_f > LIVE_SHARE * tot, a_s > LIVE_SHARE * tot
        if live_f and live_s:
            fast.append(f.tau_fast_ns)
            slow.append(f.tau_slow_ns)
        else:
            single.append(f.tau_fast_ns if live_f else f.tau_slow_ns)
    if len(single) > len(fast):
        tau = float(np.median(single))
        return zero_delay_ns + off, tau, tau, True
    return zero_delay_ns + off, float(np.median(fast)), float(np.median(slow)), False


def g2_zero(hist: CorrelationHistogram, n_side=5, zero_delay_ns=0.0,
            central_shape="shared", label=None) -> G2Result:
    """g2(0) as the zero-delay peak area over the mean of the ``n_side`` nearest peaks per side.

    ``sigma`` propagates the fit covariances to first order; ``sigma_poisson``
    is the counting error of the raw window sums, whose ratio is reported as
    ``g2_counts``.  ``central_shape="shared"`` fits the zero-delay peak with
    the side peaks' mean centre offset and time constants (only amplitudes
    free); ``"free"`` fits it like any other peak.
    """
    if central_shape not in ("shared", "free"):
        raise ValueError("central_shape must be 'shared' or 'free'")
    # side-peak centres are free in their fits, so no separate refinement pass
    wins = segment_peaks(hist, n_side, zero_delay_ns=zero_delay_ns)
    fits: Dict[int, PeakFit] = {}
    for w in wins:
        if w.index == 0:
            continue
        try:
            fits[w.index] = fit_peak(hist, w)
        except ConvergenceError as exc:
            raise ConvergenceError(f"side peak k={w.index}: {exc}") from exc
    side = [fits[k] for k in sorted(fits)]
    central_win = next(w for w in wins if w.index == 0)
    if central_shape == "shared":
        central = fit_peak(hist, central_win,
                           shape=_shared_shape(side, hist.rep_period_ns, zero_delay_ns))
    else:
        central = fit_peak(hist, central_win)
    areas = np.array([f.area for f in side])
    sig = np.array([f.sigma_area for f in side])
    mean = float(areas.mean())
    if not mean > 0:
        raise ConvergenceError("side peaks have no area; g2 undefined")
    # the ratio is formed from the normalised areas: with integer counts and
    # an integer or power-of-two rescaling the fits see bit-identical input
    g2 = central.area_share / float(np.mean([f.area_share for f in side]))
    var = (central.sigma_area / mean) ** 2 + (central.area / mean ** 2) ** 2 * float(
        np.sum(sig ** 2)) / areas.size ** 2
    raw = np.array([f.raw_counts for f in side])
    rmean = raw.mean()
    g2c = central.raw_counts / rmean
    var_p = central.raw_counts / rmean ** 2 + (central.raw_counts / rmean ** 2) ** 2 * raw.sum() / raw.size ** 2
    peaks = sorted(side + [central], key=lambda f: f.index)
    return G2Result(float(g2), float(math.sqrt(var)), float(math.sqrt(var_p)), float(g2c),
                    [f.index for f in side], peaks, label)
