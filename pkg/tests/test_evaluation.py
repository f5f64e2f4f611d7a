import csv

import numpy as np
import pytest

from aamagls import array_encoding as ae
from aamagls import evaluation as ev
from aamagls import hrtf, pipelines, sh

FS = 48000.0


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        rows = list(csv.reader(fh))
    return first, rows[0], rows[1:]


# --- null space --------------------------------------------------------------

def gram_schmidt(cols):
    basis = []
    for v in cols.T:
        w = v.astype(complex).copy()
        for u in basis:
            w -= np.vdot(u, w) * u
        if np.linalg.norm(w) > 1e-12:
            basis.append(w / np.linalg.norm(w))
    return np.array(basis).T


def test_null_space_matches_gram_schmidt(rng):
    V = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    U = gram_schmidt(V.conj().T)
    for _ in range(20):
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        resid = y - U @ (U.conj().T @ y)
        want = 10 * np.log10(np.vdot(resid, resid).real / np.vdot(y, y).real)
        assert abs(ev.null_space_metric(V, y) - want) < 1e-9


def test_row_space_vector_is_encodable(rng):
    V = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    y = V.conj().T @ rng.standard_normal(3)
    assert ev.null_space_metric(V, y) <= -100


def test_null_space_bounded_by_zero_db(rng):
    for _ in range(50):
        M, Q = rng.integers(1, 6), rng.integers(6, 30)
        V = rng.standard_normal((M, Q)) + 1j * rng.standard_normal((M, Q))
        y = rng.standard_normal(Q) + 1j * rng.standard_normal(Q)
        assert ev.null_space_metric(V, y) <= 0.0


def test_null_space_errors():
    with pytest.raises(ev.UndefinedMetricError):
        ev.null_space_metric(np.ones((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ev.null_space_metric(np.ones((2, 3)), np.ones(3), svd_rel_tol=0.0)


def test_second_order_not_encodable_at_2khz(wearable, leb2702):
    V = ae.steering_matrices(wearable, leb2702, [2000.0])
    rep = ev.null_space_report(V, leb2702, 2, [2000.0])
    assert rep.xi_null[0, sh.acn_index(2, 0)] > ev.TH_DB
    # report agrees with the single-vector metric
    y = sh.sh_matrix(leb2702, 2)[:, 5]
    assert abs(rep.xi_null[0, 5] - ev.null_space_metric(V[0], y)) < 1e-9


def test_null_space_csv(tmp_path, wearable, leb2702):
    f = np.array([0.0, 500.0, 1000.0])
    rep = ev.null_space_report(ae.steering_matrices(wearable, leb2702, f), leb2702, 2, f)
    rep.to_csv(tmp_path / "n.csv")
    first, header, rows = read_csv(tmp_path / "n.csv")
    assert first.startswith("#") and "schema v1" in first
    assert header[:3] == ["freq_hz", "xi_null_db_n0m0", "xi_null_db_n1m-1"]
    assert len(header) == 10 and len(rows) == 3


# --- magnitude ---------------------------------------------------------------

def test_ideal_magnitude_of_y00(leb2702, wearable):
    filt = ae.asm_filter(ae.steering_matrices(wearable, leb2702, [500.0]), leb2702, 1)
    rep = ev.magnitude_metrics(filt, ae.steering_matrices(wearable, leb2702, [500.0]), leb2702)
    assert abs(rep.xi_ideal[0] - 10 * np.log10(2702 / (4 * np.pi))) < 1e-9
    assert abs(rep.xi_ideal[0] - 23.3246) < 1e-3


def test_effective_magnitude_contracts(wearable_V, leb2702, fgrid):
    filt = ae.asm_filter(wearable_V, leb2702, 1, freqs=fgrid.freqs)
    rep = ev.magnitude_metrics(filt, wearable_V, leb2702)
    assert np.all(rep.xi_mag <= rep.xi_ideal[None] + 1e-9)
    hi = fgrid.freqs > 4000
    assert np.all(rep.attenuation()[hi][:, 1:] >= 10)


def test_ideal_sphere_no_attenuation():
    geom = ae.spherical_32_geometry()
    grid = sh.lebedev_grid(2702)
    V = ae.steering_matrices(geom, grid, [300.0, 500.0])
    filt = ae.asm_filter(V, grid, 1, 1e9)
    rep = ev.magnitude_metrics(filt, V, grid)
    assert np.max(np.abs(rep.attenuation())) < 0.1
    nrep = ev.null_space_report(V, grid, 1, [300.0, 500.0])
    assert np.all(nrep.xi_null < -60)


# --- binaural errors ---------------------------------------------------------

def test_perfect_fit_has_zero_error(rng):
    grid = sh.lebedev_grid(302)
    f = ae.FrequencyGrid(8000, 16)
    Y = sh.sh_matrix(grid, 2)
    c = rng.standard_normal((9, f.n_bins)) + 1j * rng.standard_normal((9, f.n_bins))
    ref = hrtf.HrtfSet(grid, f, Y @ c, Y @ c.conj())
    h_nm = hrtf.ls_encode(ref, 2)
    rep = ev.binaural_errors(h_nm, None, None, ref)
    for ear in ("left", "right"):
        assert rep.eps[ear].max() < 1e-6
        assert rep.eps_comb[ear].max() < 1e-6


def test_blend_identity(wearable_design):
    d = wearable_design
    for rot in (0.0, np.deg2rad(30)):
        rep = ev.binaural_errors(d.magls, d.filt, d.V, d.hrtf, (rot, 0.0))
        a = d.fade.alpha(d.hrtf.freqs.freqs)
        for ear in ("left", "right"):
            np.testing.assert_array_equal(
                rep.eps_comb[ear], (1 - a) * rep.eps[ear] + a * rep.eps_mag[ear])
            low = d.hrtf.freqs.freqs <= 800
            np.testing.assert_array_equal(rep.eps_comb[ear][low], rep.eps[ear][low])
            assert np.all(rep.eps_mag[ear] <= rep.eps[ear] + 1e-12)


def test_binaural_error_csv(tmp_path, small_setup):
    d = small_setup
    rep = ev.binaural_errors(d.magls, d.filt, d.V, d.hrtf, label="asm_magls")
    rep.to_csv(tmp_path / "b.csv")
    _, header, rows = read_csv(tmp_path / "b.csv")
    assert header == ["freq_hz", "alpha", "eps_bin_left", "eps_mag_left", "eps_comb_left",
                      "eps_bin_right", "eps_mag_right", "eps_comb_right"]
    assert len(rows) == d.hrtf.freqs.n_bins


# --- closed form vs Monte Carlo ---------------------------------------------

def test_asm_nmse_monte_carlo(wearable):
    grid = sh.lebedev_grid(302)
    V = ae.steering_matrices(wearable, grid, [700.0, 3000.0])
    filt = ae.asm_filter(V, grid, 1, 100.0)
    closed = ev.asm_nmse(filt, V, grid)
    for b in range(2):
        mc = ev.asm_nmse_monte_carlo(filt, V[b], grid, b, draws=10000, seed=11)
        np.testing.assert_allclose(mc, closed[b], rtol=0.02)


def test_binaural_nmse_monte_carlo(small_setup):
    d = small_setup
    eff = d.filt.effective_response(d.V)
    rep = ev.binaural_errors(d.magls, d.filt, d.V, d.hrtf)
    for b in (10, 60, 110):
        mc = ev.binaural_nmse_monte_carlo(d.magls.left[:, b], eff[b], d.hrtf.left[:, b],
                                          draws=10000, seed=5)
        assert abs(mc - rep.eps["left"][b]) <= 0.02 * rep.eps["left"][b]


# --- ITD / ILD ---------------------------------------------------------------

def test_itd_identical_and_delay(rng):
    x = rng.standard_normal(2048)
    assert ev.itd(x, x, FS) == 0.0
    y = np.r_[np.zeros(10), x[:-10]]
    assert ev.itd(x, y, FS) == pytest.approx(-10 / FS)
    assert abs(ev.itd(x, y, FS) * 1e6 + 208.3) < 0.05
    assert ev.itd(y, x, FS) == -ev.itd(x, y, FS)
    with pytest.raises(ev.UndefinedMetricError):
        ev.itd(x, np.zeros_like(x), FS)


def test_itd_antisymmetric(rng):
    for _ in range(20):
        x = rng.standard_normal(512)
        y = np.roll(x, rng.integers(-40, 40)) + 0.1 * rng.standard_normal(512)
        assert ev.itd(y, x, FS) == -ev.itd(x, y, FS)


def test_sphere_itd_woodworth():
    f = ae.FrequencyGrid(FS, 1024)
    resp = pipelines.reference_responder(hrtf.analytic_sphere_hrtf(sh.lebedev_grid(6), f))
    left, right = pipelines.hrir_pairs(resp, [np.pi / 2], [np.pi / 2], f.nfft)
    a, c = hrtf.DEFAULT_HEAD_RADIUS, ae.SOUND_SPEED
    woodworth = a * (np.pi / 2 + 1) / c
    got = ev.itd(left[0], right[0], FS)
    # source on the left: left ear leads, which this convention reports as negative
    assert got < 0
    assert abs(abs(got) - woodworth) <= 0.10 * woodworth


def test_ild_basics(rng):
    x = rng.standard_normal(1024)
    assert ev.ild(x, x, FS)[0] == pytest.approx(0.0, abs=1e-12)
    mean, bands = ev.ild(x, 0.5 * x, FS)
    assert mean == pytest.approx(20 * np.log10(2), abs=1e-9)
    np.testing.assert_allclose(bands, 6.0206, atol=1e-4)
    y = rng.standard_normal(1024)
    assert ev.ild(3 * x, 3 * y, FS)[0] == pytest.approx(ev.ild(x, y, FS)[0], abs=1e-9)
    with pytest.raises(ev.UndefinedMetricError):
        ev.ild(x, np.zeros_like(x), FS)


def test_ild_mirror_symmetry():
    f = ae.FrequencyGrid(FS, 512)
    resp = pipelines.reference_responder(hrtf.analytic_sphere_hrtf(sh.lebedev_grid(6), f))
    left, right = pipelines.hrir_pairs(resp, [1.3, 1.3], [0.8, -0.8], f.nfft)
    a = ev.ild(left[0], right[0], FS)[0]
    b = ev.ild(left[1], right[1], FS)[0]
    assert a > 0 and abs(a + b) < 1e-6


def test_erb_bank():
    bank = ev.ErbBank()
    c = bank.centers
    assert c.size == 42 and c[0] == pytest.approx(20) and c[-1] == pytest.approx(8000)
    steps = np.diff(ev.erb_number(c))
    np.testing.assert_allclose(steps, steps[0])
    np.testing.assert_allclose(ev.erb_number_inv(ev.erb_number(c)), c)
    W = bank.response(c)
    np.testing.assert_allclose(np.diag(W), 1.0)


def test_reference_sweep_is_zero(tmp_path):
    f = ae.FrequencyGrid(FS, 256)
    resp = pipelines.reference_responder(hrtf.analytic_sphere_hrtf(sh.lebedev_grid(6), f))
    call = pipelines.sweep_callable(resp, f.nfft)
    rep = ev.lateralization_sweep(call, call, FS, label="reference")
    assert rep.azimuth_deg.size == 360
    assert not np.any(rep.eps_itd) and not np.any(rep.eps_ild)
    rep.to_csv(tmp_path / "lat.csv")
    _, header, rows = read_csv(tmp_path / "lat.csv")
    assert header == ["azimuth_deg", "itd_s", "itd_ref_s", "eps_itd_s", "ild_db",
                      "ild_ref_db", "eps_ild_db"]
    assert len(rows) == 360
