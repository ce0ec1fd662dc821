import dataclasses

import numpy as np
import pytest

from l3cav import geometry as G, gme, kernels
from l3cav.geometry import L3Design, SlabSpec
from oracles import slab_neff_at_wavevector

SMALL = gme.GmeBasis(1.5)


@pytest.fixture(scope="module")
def small_l3():
    base = G.triangular_lattice(425.0, 115.0, (12, 8))
    lat = G.build_l3_supercell(base, L3Design())
    modes = gme.solve_modes(lat, SMALL)
    return lat, modes


@pytest.fixture(scope="module")
def ref_modes():
    base, design = G.reference_geometry()
    lat = G.build_l3_supercell(base, design)
    modes = gme.solve_modes(lat, gme.GmeBasis(2.0), with_q=True)
    return lat, modes


def test_raw_matrix_is_hermitian(small_l3):
    lat, modes = small_l3
    prob = modes[0].problem
    P = prob.profiles
    eps = prob.eps_layers
    H = kernels.overlap(P.f_p, P.f_m, P.kz, prob.basis_g, P.f_p, P.f_m, P.kz, prob.basis_g,
                        prob.eta, (1 / eps[0], 1 / eps[2]), prob.d)
    assert np.linalg.norm(H - H.conj().T) <= 1e-10 * np.linalg.norm(H)


def test_uniform_slab_matches_folded_dispersion():
    slab = SlabSpec()
    cell = G.triangular_lattice(425.0, 0.0, (1, 2), slab)
    prob = gme.GmeProblem(cell, gme.GmeBasis(2.0))
    got = np.sort(prob.all_frequencies())
    d = slab.thickness_nm / 425.0
    gn = np.sort(np.hypot(prob.gvec[:, 0], prob.gvec[:, 1]))
    want = [0.0 if g < 1e-12 else g / slab_neff_at_wavevector(g, slab.core_index, 1.0, d)
            / (2 * np.pi) for g in gn]
    np.testing.assert_allclose(got, np.sort(want), rtol=1e-6, atol=1e-12)


def test_scale_invariance():
    freqs = []
    for s in (1.0, 1.7):
        base = G.triangular_lattice(425.0 * s, 115.0 * s, (12, 8), SlabSpec(thickness_nm=310.0 * s))
        lat = G.build_l3_supercell(base, L3Design())
        freqs.append(np.array([m.frequency for m in gme.solve_modes(lat, SMALL)]))
    assert freqs[0].shape == freqs[1].shape
    np.testing.assert_allclose(freqs[1], freqs[0], rtol=1e-8)


def test_q_and_volume_ignore_global_phase(ref_modes):
    lat, modes = ref_modes
    m = gme.fundamental_mode(modes, lat)
    turned = dataclasses.replace(m, coefficients=m.coefficients * np.exp(0.7j))
    assert gme.compute_q(turned, lat) == pytest.approx(m.q_factor, rel=1e-10)
    v0 = gme.mode_volume(m, lat, points_per_period=16, z_points=16)
    v1 = gme.mode_volume(turned, lat, points_per_period=16, z_points=16)
    assert v1 == pytest.approx(v0, rel=1e-10)


def test_fundamental_parity_and_golden_rule_sum(ref_modes):
    lat, modes = ref_modes
    m = gme.fundamental_mode(modes, lat)
    assert m.parity == gme.FUNDAMENTAL_PARITY
    assert gme.localization(m, lat) > 0.8
    assert 1 / m.q_factor == pytest.approx(1 / m.q_above + 1 / m.q_below, rel=1e-12)
    # symmetric claddings radiate equally up and down
    assert m.q_above == pytest.approx(m.q_below, rel=1e-6)


def test_fundamental_parity_stable_under_basis_growth():
    base, design = G.reference_geometry()
    lat = G.build_l3_supercell(base, design)
    picks = [gme.fundamental_mode(gme.solve_modes(lat, gme.GmeBasis(gc)), lat)
             for gc in (1.5, 2.0)]
    assert all(p.parity == gme.FUNDAMENTAL_PARITY for p in picks)
    assert abs(picks[0].frequency - picks[1].frequency) < 0.01


def test_q_deterministic(small_l3):
    lat, modes = small_l3
    q0 = gme.compute_q(gme.fundamental_mode(modes, lat), lat)
    gme.clear_cache()
    again = gme.solve_modes(lat, SMALL)
    q1 = gme.compute_q(gme.fundamental_mode(again, lat), lat)
    assert q1 == pytest.approx(q0, rel=1e-9)


def test_unpatterned_slab_has_no_finite_q():
    lat = G.triangular_lattice(425.0, 115.0, (12, 8)).with_radii(0.0)
    # the window below the light line at the first folded G holds guided modes only
    with pytest.raises((gme.AboveLightLineError, gme.EmptyWindowError)):
        modes = gme.solve_modes(lat, SMALL, window=(0.2, 0.3))
        for m in modes:
            gme.compute_q(m, lat)


def test_unpatterned_slab_guided_mode_diverges():
    lat = G.triangular_lattice(425.0, 115.0, (12, 8)).with_radii(0.0)
    prob = gme.get_problem(lat, SMALL)
    f = prob.all_frequencies()
    f = f[f > 0]
    modes = gme.solve_modes(lat, SMALL, window=(f.min() * 0.999, f.min() * 1.001))
    with pytest.raises(gme.DivergentQError):
        gme.radiative_q(modes[0], lat)


def test_effective_volume_of_uniform_density():
    u = np.full((8, 16, 4), 2.5)
    assert gme.effective_volume(u, 12.3) == pytest.approx(12.3, rel=1e-15)
    # any concentration only shrinks it
    u[0, 0, 0] = 10.0
    assert gme.effective_volume(u, 12.3) < 12.3


def test_mode_volume_scale_invariant():
    vols = []
    for s in (1.0, 1.3):
        base = G.triangular_lattice(425.0 * s, 115.0 * s, (12, 8), SlabSpec(thickness_nm=310.0 * s))
        lat = G.build_l3_supercell(base, L3Design())
        m = gme.fundamental_mode(gme.solve_modes(lat, SMALL), lat)
        vols.append(gme.mode_volume(m, lat, points_per_period=16, z_points=16))
    assert vols[1] == pytest.approx(vols[0], rel=1e-8)


def test_basis_too_large():
    base = G.triangular_lattice(425.0, 115.0, (12, 8))
    lat = G.build_l3_supercell(base, L3Design())
    with pytest.raises(gme.BasisTooLargeError):
        gme.GmeProblem(lat, gme.GmeBasis(3.0, max_size=100))


def test_empty_window(small_l3):
    lat, _ = small_l3
    with pytest.raises(gme.EmptyWindowError):
        gme.solve_modes(lat, SMALL, window=(0.01, 0.011))
    with pytest.raises(ValueError):
        gme.solve_modes(lat, SMALL, window=(0.3, 0.2))


def test_band_gap_brackets_cavity_mode(small_l3):
    lat, modes = small_l3
    lo, hi = gme.band_gap(lat, SMALL)
    assert 0.2 < lo < hi < 0.4
    assert all(lo <= m.frequency <= hi for m in modes)


def test_frequency_converges_with_cutoff():
    base, design = G.reference_geometry()
    lat = G.build_l3_supercell(base, design)
    f = [gme.fundamental_mode(gme.solve_modes(lat, gme.GmeBasis(gc)), lat).frequency
         for gc in (1.25, 1.25 * 2 ** 0.5, 2.5)]
    steps = np.abs(np.diff(f))
    assert steps[1] < steps[0]


def test_report_and_field_csv(small_l3, tmp_path):
    lat, modes = small_l3
    m = gme.fundamental_mode(modes, lat)
    rep = gme.mode_report([m])
    assert rep["schema"] == gme.REPORT_SCHEMA
    assert rep["modes"][0]["wavelength_nm"] == pytest.approx(425.0 / m.frequency)
    p = tmp_path / "field.csv"
    gme.write_field_csv(m, lat, p, points_per_period=4)
    rows = p.read_text().strip().splitlines()
    vals = np.loadtxt(p, delimiter=",", skiprows=1)
    assert len(rows) == 1 + len(vals)
    assert np.all(vals[:, 2] >= 0) and vals[:, 2].max() == pytest.approx(1.0, rel=1e-7)
    lx, ly = lat.size_nm
    assert np.all(np.abs(vals[:, 0]) < lx / 2) and np.all(np.abs(vals[:, 1]) < ly / 2)
