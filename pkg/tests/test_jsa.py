import warnings

import numpy as np
import pytest

from tbqkd.covariance import schmidt
from tbqkd.grid import make_grid
from tbqkd.jsa import (
    ChannelTransmission,
    FitConvergenceError,
    SpectrumError,
    assemble_jsa,
    crystal_phase_matching,
    flat_top_channel,
    gaussian_phase_matching,
    gaussian_pump,
    load_channel,
    load_spectrum,
    pair_norm_sq,
    phase_matching_from_fit,
    sinc_phase_matching,
    symmetrize_spectrum,
    synthetic_spectrum,
    write_spectrum_csv,
)

L = 0.024
WALKOFF = 1.0
DK1 = WALKOFF / L
OMEGA = np.linspace(-16 * np.pi / WALKOFF, 16 * np.pi / WALKOFF, 301)


def test_gaussian_pump_normalized_and_default_duration():
    pump = gaussian_pump(0.4e-9)
    assert abs(np.sum(pump.grid.weights * np.abs(pump.values) ** 2) - 1) < 1e-10
    assert pump.pulse_duration == 0.4e-9
    # intensity FWHM in time: |α(t)|² ∝ exp(-t²/2s²) with 2√(2ln2)s = FWHM
    t = np.linspace(-1e-9, 1e-9, 2001)
    w = pump.grid.points
    at = np.abs(np.exp(-1j * np.outer(t, w)) @ (pump.values * pump.grid.weights)) ** 2
    above = t[at >= at.max() / 2]
    assert abs((above[-1] - above[0]) - 0.4e-9) < 2e-12


def test_uniform_crystal_is_sinc():
    dk = np.linspace(-2000, 2000, 51)
    phi = crystal_phase_matching(dk, L)
    np.testing.assert_allclose(phi, np.sinc(dk * L / 2 / np.pi), atol=1e-12)


def test_crystal_quadrature_size_enforced():
    with pytest.raises(ValueError):
        crystal_phase_matching(np.zeros(3), L, n_z=100)


def test_fit_uniform_crystal_recovers_zero_imperfections():
    y = synthetic_spectrum(OMEGA, L, DK1)
    pm = phase_matching_from_fit(OMEGA, y, L, DK1)
    assert abs(pm.delta_k1) * L**2 < 1e-3
    assert abs(pm.delta_k2) * L**3 < 1e-3
    phi = pm(OMEGA)
    sinc = np.sinc(OMEGA * WALKOFF / 2 / np.pi)
    np.testing.assert_allclose(np.abs(phi), np.abs(sinc), atol=1e-6)
    assert pm.residual < 1e-6


def test_fit_round_trip_with_noise():
    rng = np.random.default_rng(7)
    p1, p2, d0 = 9.0, -110.0, 0.7
    y = synthetic_spectrum(OMEGA, L, DK1, d0 / L, p1 / L**2, p2 / L**3)
    noisy = y * (1 + 0.01 * rng.standard_normal(y.size))
    pm = phase_matching_from_fit(OMEGA, noisy, L, DK1)
    assert abs(pm.delta_k1 * L**2 / p1 - 1) < 0.05
    assert abs(pm.delta_k2 * L**3 / p2 - 1) < 0.05
    # reconstructed power spectrum reproduces the input within the reported residual
    model = pm.power_model(OMEGA) / noisy.max()
    rms = np.sqrt(np.mean((model - noisy / noisy.max()) ** 2))
    assert rms <= pm.residual + 1e-12


def _lobe_heights(omega, s):
    main = np.argmax(s)
    # first side lobe on each side: largest value beyond the first minimum
    left = s[:main][::-1]
    right = s[main + 1:]

    def first_lobe(arr):
        i = 1
        while i < arr.size and arr[i] <= arr[i - 1]:
            i += 1
        return arr[i:].max() if i < arr.size else 0.0

    return first_lobe(left), first_lobe(right)


def test_fit_reproduces_side_lobe_asymmetry():
    p2 = 120.0
    y = synthetic_spectrum(OMEGA, L, DK1, 0.0, 6.0 / L**2, p2 / L**3)
    left, right = _lobe_heights(OMEGA, y)
    if left < right:  # choose the sign that gives a stronger left lobe
        p2 = -p2
        y = synthetic_spectrum(OMEGA, L, DK1, 0.0, 6.0 / L**2, p2 / L**3)
        left, right = _lobe_heights(OMEGA, y)
    assert left > right
    pm = phase_matching_from_fit(OMEGA, y, L, DK1)
    assert pm.delta_k2 != 0
    assert np.sign(pm.delta_k2) == np.sign(p2)
    fl, fr = _lobe_heights(OMEGA, pm.power_model(OMEGA))
    assert fl > fr


def test_fit_sign_of_linear_term_is_not_identifiable():
    a = synthetic_spectrum(OMEGA, L, DK1, 0.3 / L, 7.0 / L**2, 50 / L**3)
    b = synthetic_spectrum(OMEGA, L, DK1, 0.3 / L, -7.0 / L**2, 50 / L**3)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_fit_input_validation():
    with pytest.raises(SpectrumError):
        phase_matching_from_fit(OMEGA, -np.ones_like(OMEGA), L, DK1)
    with pytest.raises(SpectrumError):
        phase_matching_from_fit(OMEGA[:40], np.ones(40), L, DK1)


def test_fit_nonconvergence_reports_best_residual():
    rng = np.random.default_rng(3)
    junk = rng.uniform(0, 1, OMEGA.size)
    with pytest.raises(FitConvergenceError) as exc:
        phase_matching_from_fit(OMEGA, junk, L, DK1, residual_target=1e-3)
    assert exc.value.best is not None and exc.value.best.residual > 1e-3


def test_gaussian_jsa_schmidt_number_matches_closed_form():
    s_plus, s_minus = 1.0, 6.0
    pump_fwhm = 2 * np.sqrt(2 * np.log(2)) / (np.sqrt(2) * s_plus)
    grid = make_grid(0.0, 25.0, 240)
    pump = gaussian_pump(pump_fwhm)
    # α ∝ exp(-s_I² ω²) = exp(-ω²/(2 s_plus²))
    assert abs(pump.rms_width() - s_plus / np.sqrt(2)) < 1e-3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, gaussian_phase_matching(s_minus), grid)
    sd = schmidt(jsa)
    r = s_plus / s_minus
    k_exact = (r**2 + 1) / (2 * r)
    k_num = 1 / np.sum(sd.coefficients**4)
    assert abs(k_num / k_exact - 1) < 0.01
    q = abs(s_plus - s_minus) / (s_plus + s_minus)
    expected = np.sqrt(1 - q**2) * q ** np.arange(10)
    np.testing.assert_allclose(sd.coefficients[:10], expected, rtol=0.01)


def test_cw_pump_marginal_follows_phase_matching():
    grid = make_grid(0.0, 30.0, 201)
    pump = gaussian_pump(200.0)  # very long pulse: nearly monochromatic
    pm = sinc_phase_matching(1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, pm, grid)
    marg = np.sum(np.abs(jsa.kernel.samples()) ** 2, axis=1)
    target = np.abs(pm(2 * grid.points)) ** 2
    np.testing.assert_allclose(marg / marg.max(), target / target.max(), atol=2e-3)


def test_real_even_factors_give_symmetric_kernel():
    grid = make_grid(0.0, 10.0, 81)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(gaussian_pump(2.0), gaussian_phase_matching(3.0), grid)
    m = jsa.matrix
    np.testing.assert_allclose(m, m.T, atol=1e-14)
    assert abs(np.linalg.norm(m) - 1) < 1e-10


def test_low_aspect_ratio_warns():
    grid = make_grid(0.0, 10.0, 41)
    with pytest.warns(UserWarning, match="aspect ratio"):
        assemble_jsa(gaussian_pump(2.0), gaussian_phase_matching(1.0), grid)


def test_reference_norm_keeps_band_fraction():
    grid = make_grid(0.0, 30.0, 241)
    pump = gaussian_pump(3.0)
    pm = gaussian_phase_matching(5.0)
    omega_minus = np.linspace(-80, 80, 4001)
    ref = pair_norm_sq(pm, omega_minus)
    full = assemble_jsa(pump, pm, grid, reference_norm_sq=ref, warn_aspect=False)
    assert abs(full.norm_sq - 1) < 1e-6
    half = make_grid(10.0, 5.0, 41)
    part = assemble_jsa(pump, pm, half, make_grid(-10.0, 5.0, 41), reference_norm_sq=ref, warn_aspect=False)
    assert 0 < part.norm_sq < 1


def test_jsa_support_bounded_by_delta_plus():
    from tbqkd.jsa import cosine_pump

    grid = make_grid(0.0, 6.0, 121)
    pump = cosine_pump(2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, gaussian_phase_matching(20.0), grid)
    ws, wi = np.meshgrid(grid.points, grid.points, indexing="ij")
    outside = np.abs(ws + wi) > jsa.delta_plus / 2
    samples = np.abs(jsa.kernel.samples())
    assert samples[outside].max() <= 1e-12 * samples.max()


def test_symmetrize_removes_odd_part():
    w = np.linspace(-1, 1, 101)
    ws, s = symmetrize_spectrum(w, 1 + w)
    np.testing.assert_allclose(s, 1.0, atol=1e-14)


def test_symmetrize_keeps_even_input_and_is_idempotent():
    w = np.linspace(-3, 3, 121)
    even = np.exp(-w**2) + 0.3 * np.exp(-((np.abs(w) - 1.5) ** 2) * 4)
    ws, s = symmetrize_spectrum(w, even)
    np.testing.assert_allclose(s, np.interp(ws, w, even), atol=1e-12)
    ws2, s2 = symmetrize_spectrum(ws, s)
    np.testing.assert_allclose(s2, s, atol=1e-14)


def test_symmetrized_double_hump_is_exactly_even():
    w = np.linspace(-2.3, 2.0, 517)
    hump = 1.4 * np.exp(-((w + 0.8) ** 2) * 6) + 0.9 * np.exp(-((w - 0.8) ** 2) * 6)
    ws, s = symmetrize_spectrum(w, hump)
    assert np.max(np.abs(s - s[::-1])) == 0.0
    np.testing.assert_array_equal(ws, -ws[::-1])


def test_symmetrize_rejects_one_sided():
    with pytest.raises(SpectrumError):
        symmetrize_spectrum(np.linspace(0.1, 1, 10), np.ones(10))


def test_flat_db_channel(tmp_path):
    f = tmp_path / "flat.csv"
    freq = np.linspace(-30e9, 30e9, 61)
    write_spectrum_csv(f, 2 * np.pi * freq, np.full(61, -3.0103), unit="dB")
    ch = load_channel(f, make_grid(0.0, 2 * np.pi * 25e9, 51))
    np.testing.assert_allclose(ch.power, 0.5, atol=1e-4)


def test_fifty_ghz_channel_file_support(tmp_path):
    f = tmp_path / "ch50.csv"
    ch = flat_top_channel(2 * np.pi * 100e9, 2 * np.pi * 50e9, n_points=801)
    db = 10 * np.log10(np.maximum(ch.power, 1e-6))
    write_spectrum_csv(f, ch.grid.points, db, unit="dB")
    loaded = load_channel(f, make_grid(2 * np.pi * 100e9, 2 * np.pi * 60e9, 1201))
    width = loaded.support_width()
    assert abs(width / (2 * np.pi * 50e9) - 1) < 0.2


def test_channel_file_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SpectrumError):
        load_channel(empty)
    hot = tmp_path / "hot.csv"
    hot.write_text("# unit: linear, axis: Hz-offset\n0,1.2\n1,0.5\n")
    with pytest.raises(SpectrumError):
        load_channel(hot)
    backwards = tmp_path / "back.csv"
    backwards.write_text("# unit: linear, axis: Hz-offset\n1,0.2\n0,0.5\n")
    with pytest.raises(SpectrumError):
        load_channel(backwards)


def test_spectrum_csv_round_trip(tmp_path):
    f = tmp_path / "s.csv"
    w = np.linspace(-5, 5, 11)
    write_spectrum_csv(f, w, np.exp(-w**2))
    w2, v2 = load_spectrum(f)
    np.testing.assert_allclose(w2, w, rtol=1e-12)
    np.testing.assert_allclose(v2, np.exp(-w**2), rtol=1e-12)


def test_channel_transmission_range_enforced():
    g = make_grid(0.0, 1.0, 5)
    with pytest.raises(SpectrumError):
        ChannelTransmission(g, np.array([0, 0.5, 1.5, 0.5, 0]))
