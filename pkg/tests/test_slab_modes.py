import numpy as np
import pytest

from l3cav import slab_modes as S
from l3cav.geometry import SlabSpec
from oracles import slab_neff_at_wavelength as _oracle_neff


@pytest.mark.parametrize("pol", ["TE", "TM"])
def test_fundamental_neff_matches_bisection_oracle(pol):
    n_ref = _oracle_neff(3.17, 1.0, 310.0, 1550.0, pol)
    g = n_ref * 2 * np.pi / 1550.0
    n = S.guided_neff(g, (1.0, 3.17 ** 2, 1.0), 310.0, S._POL[pol], 0)[0]
    assert abs(n - n_ref) < 1e-8
    assert 1.0 < n < 3.17


def test_residual_small_and_order_sorted():
    slab = SlabSpec(thickness_nm=900.0)
    k = np.linspace(0.005, 0.04, 30)
    branches = S.solve_guided_modes(slab, k, max_order=2)
    assert branches
    for b in branches:
        ok = ~np.isnan(b.n_eff)
        assert np.all(np.abs(b.residual[ok]) < 1e-10)
        assert np.all((b.n_eff[ok] > 1.0) & (b.n_eff[ok] < 3.17))
        # dispersion monotone increasing in k
        assert np.all(np.diff(b.omega[ok]) > 0)
    for pol in ("TE", "TM"):
        ns = [b.n_eff for b in branches if b.polarization == pol]
        for a, c in zip(ns, ns[1:]):
            both = ~np.isnan(a) & ~np.isnan(c)
            assert np.all(a[both] > c[both])
    firsts = [np.nanmax(b.n_eff) for b in branches]
    assert firsts == sorted(firsts, reverse=True)


def test_te0_exists_at_every_k():
    slab = SlabSpec(thickness_nm=50.0)
    k = np.geomspace(1e-4, 0.1, 40)
    te0 = S.solve_guided_modes(slab, k, 0, ("TE",))[0]
    assert not np.any(np.isnan(te0.n_eff))


def test_thick_slab_limit():
    n_ref = _oracle_neff(3.17, 1.0, 1e5, 1550.0)
    assert abs(n_ref - 3.17) < 1e-3
    g = n_ref * 2 * np.pi / 1550.0
    n = S.guided_neff(g, (1.0, 3.17 ** 2, 1.0), 1e5, S.TE, 0, ngrid=20000)[0]
    assert abs(n - 3.17) < 1e-3


def test_mode_count_grows_with_thickness():
    k = np.array([2 * np.pi * 3.0 / 1550.0])
    counts = []
    for d in (100.0, 300.0, 600.0, 1200.0, 2400.0):
        bs = S.solve_guided_modes(SlabSpec(thickness_nm=d), k, max_order=8)
        counts.append(sum(int(not np.isnan(b.n_eff[0])) for b in bs))
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


def test_no_mode_error_for_asymmetric_cutoff():
    slab = SlabSpec(thickness_nm=20.0, core_index=3.17, cladding_index_below=3.1,
                    cladding_index_above=1.0)
    with pytest.raises(S.NoModeError):
        S.solve_guided_modes(slab, [0.002], 0, ("TE",))


def test_nonpositive_k_rejected():
    with pytest.raises(ValueError):
        S.solve_guided_modes(SlabSpec(), [0.0])


def test_numpy_and_numba_roots_agree():
    from l3cav import kernels
    from l3cav._accel import HAVE_NUMBA
    if not HAVE_NUMBA:
        pytest.skip("numba unavailable")
    g = np.linspace(1e-3, 0.05, 200)
    a = kernels._neff_roots_numba(g, 1.0, 3.17 ** 2, 1.0, 310.0, 1.0, 1.0, 1, 2000, 60)
    b = kernels.neff_roots_numpy(g, 1.0, 3.17 ** 2, 1.0, 310.0, 1.0, 1.0, 1, 2000, 60)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)], rtol=0, atol=1e-12)


def test_dispersion_csv(tmp_path):
    b = S.solve_guided_modes(SlabSpec(), [0.01, 0.02], 0, ("TE",))[0]
    p = tmp_path / "disp.csv"
    b.to_csv(p)
    rows = p.read_text().strip().splitlines()
    assert rows[0] == "k,omega,n_eff" and len(rows) == 3
