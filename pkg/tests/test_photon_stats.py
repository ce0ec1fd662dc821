import json

import numpy as np
import pytest

from l3cav import photon_stats as P, synth
from l3cav.synth import PeakShape, SynthConfig
from oracles import central_jacobian, jacobian_mismatch

NOISELESS = SynthConfig(noise="none")


def test_eleven_windows_on_the_period_grid():
    h = synth.gen_hbt(0.2, config=NOISELESS)
    wins = P.segment_peaks(h, 5)
    assert [w.index for w in wins] == list(range(-5, 6))
    assert wins[0].center_ns == -62.5 and wins[-1].center_ns == 62.5
    for a, b in zip(wins, wins[1:]):
        assert a.hi_ns == pytest.approx(b.lo_ns) and a.hi_ns - a.lo_ns == pytest.approx(12.5)


def test_span_error_when_too_few_periods():
    h = synth.gen_hbt(0.2, n_side_peaks=3, config=NOISELESS)
    with pytest.raises(P.SpanError, match="7 peaks"):
        P.segment_peaks(h, 5)
    with pytest.raises(P.SpanError):
        P.g2_zero(h, 5)


def test_histogram_validation():
    t = np.linspace(0, 1, 20)
    with pytest.raises(P.SchemaError):
        P.CorrelationHistogram(np.r_[t[:10], t[10:] + 0.3], np.ones(20))
    with pytest.raises(P.SchemaError):
        P.CorrelationHistogram(t, -np.ones(20))
    with pytest.raises(P.SchemaError):
        P.CorrelationHistogram(t, np.ones(20), rep_period_ns=0.0)


def test_refined_centres_track_jittered_peaks():
    h = synth.gen_hbt(1.0, config=NOISELESS, center_jitter=0.01)
    wins = P.segment_peaks(h, 5, refine=True)
    truth = h.true_centers[1:-1]          # generator also places one peak beyond each end
    err = np.abs(np.array([w.center_ns for w in wins]) - truth)
    assert err.max() < 0.1 * h.bin_ns


def test_peak_area_equals_counts():
    h = synth.gen_hbt(1.0, PeakShape(side_area=5000.0), config=NOISELESS)
    f = P.fit_peak(h, P.segment_peaks(h, 5)[3])
    assert f.area == pytest.approx(5000.0, rel=1e-6)
    assert f.area == pytest.approx(2 * (f.amp_fast * f.tau_fast_ns + f.amp_slow * f.tau_slow_ns)
                                   / h.bin_ns, rel=1e-14)


def test_sharp_and_broad_components_recovered():
    shape = PeakShape(sharp_fraction=0.3)
    h = synth.gen_hbt(1.0, shape, config=NOISELESS)
    f = P.fit_peak(h, P.segment_peaks(h, 5)[2])
    assert f.tau_fast_ns == pytest.approx(0.03, rel=0.05)
    assert f.tau_slow_ns == pytest.approx(0.343, rel=0.05)
    assert f.amplitude_split == pytest.approx(0.3, rel=0.05)
    assert f.rise_fast_ns == f.decay_fast_ns and f.rise_slow_ns == f.decay_slow_ns


def test_empty_window_fails():
    h = synth.gen_hbt(0.0, config=NOISELESS)
    h0 = P.CorrelationHistogram(h.delay_ns, np.where(np.abs(h.delay_ns) < 6.25, 0.0,
                                                      h.coincidences))
    with pytest.raises(P.ConvergenceError):
        P.fit_peak(h0, P.segment_peaks(h0, 5)[5])


@pytest.mark.parametrize("g2", [0.0, 0.164, 0.172, 1.0])
def test_noiseless_g2_exact(g2):
    assert P.g2_zero(synth.gen_hbt(g2, config=NOISELESS)).g2 == pytest.approx(g2, abs=1e-6)


def test_g2_scale_invariance():
    h = synth.gen_hbt(0.164, config=SynthConfig(seed=5))
    r = P.g2_zero(h)
    # integer counts times an integer (or power-of-two) factor are exact floats,
    # so the result must not move at all
    for f in (0.25, 2.0, 3.0, 4.0, 7.0, 1000.0, 1024.0):
        assert P.g2_zero(h.scaled(f)).g2 == r.g2
    # other factors round the input itself; agreement is then far inside the error bar
    for f in (3.7, 0.31):
        assert abs(P.g2_zero(h.scaled(f)).g2 - r.g2) < 1e-6 * r.g2 < 1e-4 * r.sigma


def test_g2_translation_invariance():
    h = synth.gen_hbt(0.164, config=SynthConfig(seed=6))
    shifted = P.CorrelationHistogram(h.delay_ns + 0.37, h.coincidences, h.rep_period_ns)
    a = P.g2_zero(h).g2
    b = P.g2_zero(shifted, zero_delay_ns=0.37).g2
    assert b == pytest.approx(a, abs=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_noisy_g2_within_quoted_error(seed):
    r = P.g2_zero(synth.gen_hbt(0.164, config=SynthConfig(seed=seed)))
    assert abs(r.g2 - 0.164) < 4 * r.sigma
    assert abs(r.g2_counts - 0.164) < 4 * r.sigma_poisson + 0.01
    assert r.used_peaks == [-5, -4, -3, -2, -1, 1, 2, 3, 4, 5]


def test_background_is_fitted_not_counted():
    shape = PeakShape(background=3.0)
    r = P.g2_zero(synth.gen_hbt(0.3, shape, config=SynthConfig(seed=8)))
    assert abs(r.g2 - 0.3) < 4 * r.sigma
    # raw window sums include the flat floor and overshoot
    assert r.g2_counts > 0.3 + 4 * r.sigma_poisson


def test_shared_and_free_central_agree():
    h = synth.gen_hbt(0.5, config=SynthConfig(seed=9))
    a = P.g2_zero(h, central_shape="shared")
    b = P.g2_zero(h, central_shape="free")
    assert abs(a.g2 - b.g2) < 2 * max(a.sigma, b.sigma)
    with pytest.raises(ValueError):
        P.g2_zero(h, central_shape="other")


def test_result_serialises():
    r = P.g2_zero(synth.gen_hbt(0.2, config=SynthConfig(seed=1)), label="4 K")
    d = json.loads(json.dumps(r.to_dict()))
    assert d["temperature_label"] == "4 K" and len(d["peaks"]) == 11


def test_peak_jacobian():
    rng = np.random.Generator(np.random.Philox(3))
    t = np.linspace(-6, 6, 3001) + 1e-4
    for _ in range(10):
        p = np.array([rng.uniform(-0.3, 0.3), rng.uniform(1, 100), rng.uniform(0.01, 0.1),
                      rng.uniform(1, 100), rng.uniform(0.2, 1.0), rng.uniform(0, 5)])
        num = central_jacobian(lambda q: P.peak_model(t, q), p)
        assert jacobian_mismatch(P.peak_jacobian(t, p), num) < 1e-6
