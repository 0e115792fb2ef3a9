import math
import warnings

import numpy as np
import pytest
from conftest import BIN, BINS, DT, receivers, toy_lattice, toy_schmidt, toy_split

from tbqkd.grid import GridError, make_grid, make_time_grid, symplectic_fourier
from tbqkd.jsa import TYPE_II, assemble_jsa, gaussian_phase_matching, gaussian_pump
from tbqkd.optics import (
    FiberLink,
    ReceiverInterferometer,
    apply_dispersion,
    build_reduced_transformation,
    discrete_network_rows,
    party_transformation,
    path_projection_kernel,
)
from tbqkd.oracles import dense_vacuum
from tbqkd.pipeline import (
    DetectionSystem,
    TimeLattice,
    build_time_state,
    commensurate_step,
    fast_oscillation_filter,
)


# --- fibre --------------------------------------------------------------------


@pytest.mark.parametrize("alpha,length", [(0.2, 0.0), (0.2, 50.0), (0.35, 13.0)])
def test_fiber_power_law(alpha, length):
    link = FiberLink(length, alpha)
    assert link.amplitude_transmittivity**2 == pytest.approx(10 ** (-alpha * length / 10), rel=1e-12)


def test_fiber_rejects_negative_length():
    with pytest.raises(ValueError):
        FiberLink(-1.0)


# --- receiver rows --------------------------------------------------------------


def test_balanced_michelson_dark_port():
    rows = party_transformation(ReceiverInterferometer()).rows
    interfering_d1 = rows[1]
    assert abs(np.sum(interfering_d1.coefficients)) < 1e-15


def test_full_mismatch_kills_interfering_rows():
    rows = party_transformation(ReceiverInterferometer(mode_match=0.0)).rows
    for r in rows:
        if r.interfering:
            assert np.allclose(r.coefficients, 0)
    assert any(np.any(r.coefficients != 0) for r in rows if not r.interfering)


@pytest.mark.parametrize("T,xi", [(2**-0.5, 1.0), (0.6, 0.3), (0.9, 0.75), (0.2, 0.0)])
def test_lossless_power_audit(T, xi):
    pt = party_transformation(ReceiverInterferometer(transmittivity=T, mode_match=xi, phases=(0.3, 1.1)))
    assert pt.incoherent_power() == pytest.approx(1.0, abs=1e-14)


def test_table_coefficients():
    T, xi = 0.64, 0.8
    R = math.sqrt(1 - T**2)
    eta = ((0.9, 0.7), (0.85, 0.6))
    phases = (0.2, 1.3)
    pt = party_transformation(ReceiverInterferometer(T, phases, (0.0, 1.0), eta, xi))
    k0, k1 = pt.coupling(0), pt.coupling(1)
    rel = np.exp(1j * (phases[1] - phases[0]))
    assert k0[0, 0] == pytest.approx(eta[0][0] ** 2 * T**4)
    assert k0[1, 1] == pytest.approx(eta[1][0] ** 2 * R**4)
    assert k0[0, 1] == pytest.approx(eta[0][0] * eta[1][0] * xi**2 * T**2 * R**2 * rel)
    assert k1[0, 0] == pytest.approx(eta[0][1] ** 2 * T**2 * R**2)
    assert k1[0, 1] == pytest.approx(-eta[0][1] * eta[1][1] * xi**2 * T**2 * R**2 * rel)
    for k in (k0, k1):
        assert np.allclose(k, k.conj().T)


def test_discrete_network_matches_reduced_rows():
    rx = ReceiverInterferometer(0.55, (0.4, -0.9), (0.0, 2.0), ((0.9, 0.72), (0.8, 0.64)), 0.7)
    rows = discrete_network_rows(rx, loss=0.8)
    pt = party_transformation(rx, loss=0.8)
    for d in (0, 1):
        sel = [i for i, r in enumerate(pt.rows) if r.detector == d]
        k = sum(np.outer(rows[i].conj(), rows[i]) for i in sel)
        assert np.allclose(k, pt.coupling(d), atol=1e-14)


def test_passivity_check():
    rt = build_reduced_transformation(ReceiverInterferometer(), ReceiverInterferometer(), losses=(0.5, 1.0))
    assert rt.A.incoherent_power() == pytest.approx(0.25)
    with pytest.raises(ValueError):
        build_reduced_transformation(ReceiverInterferometer(), ReceiverInterferometer(), losses=(1.2, 1.0))


# --- path projection kernel ---------------------------------------------------


def test_single_path_kernel_is_window():
    rx = ReceiverInterferometer(transmittivity=1.0, efficiency=((0.9, 0.9), (1.0, 1.0)), delays=(0.0, 1.0))
    rt = build_reduced_transformation(rx, rx)
    ker = path_projection_kernel(rt, "A", 0, (0.0, 1.0))
    assert [(x, y) for x, y, _, _ in ker.terms()] == [(0, 0)]
    t = np.arange(-8, 16) * 0.125
    dense = ker.dense(t, 0.125)
    window = ((t >= 0) & (t < 1.0)).astype(float)
    assert np.allclose(dense, 0.81 * np.diag(window))


def test_kernel_hermitian_and_cross_sign():
    rx = ReceiverInterferometer(phases=(0.0, 0.7), delays=(0.0, 0.5))
    rt = build_reduced_transformation(rx, rx)
    t = np.arange(-8, 24) * 0.125
    for d in (0, 1):
        ker = path_projection_kernel(rt, "A", d, (-10.0, 10.0))
        m = ker.dense(t, 0.125)
        assert np.allclose(m, m.conj().T)
    k1 = path_projection_kernel(rt, "A", 1, (0.0, 1.0)).coupling
    assert np.real(k1[0, 1] * np.exp(-0.7j)) < 0


# --- dispersion -----------------------------------------------------------------


@pytest.fixture(scope="module")
def narrow_pump_jsa():
    grid = make_grid(0.0, 8.0, 121)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return assemble_jsa(
            gaussian_pump(8.0, grid=make_grid(0.0, 16.0, 801)),
            gaussian_phase_matching(2.0),
            grid,
            process_type=TYPE_II,
        )


def test_dispersion_identity_and_magnitude(narrow_pump_jsa):
    same = apply_dispersion(narrow_pump_jsa, FiberLink(0.0), FiberLink(0.0))
    assert np.array_equal(same.matrix, narrow_pump_jsa.matrix)
    out = apply_dispersion(narrow_pump_jsa, FiberLink(1.0, beta2=0.3), FiberLink(2.0, beta2=0.3))
    assert np.allclose(np.abs(out.matrix), np.abs(narrow_pump_jsa.matrix))


def _time_moments(jsa):
    tg = make_time_grid(-12.0, 12.0, 121)
    psi = symplectic_fourier(jsa.kernel, tg, "pair").samples()
    p = np.abs(psi) ** 2
    p /= p.sum()
    t = tg.points
    ta, tb = np.meshgrid(t, t, indexing="ij")
    tm, tp = (ta - tb) / np.sqrt(2), (ta + tb) / np.sqrt(2)
    return float(np.sum(p * tm**2)), float(np.sum(p * tp**2))


def test_equal_fibers_broaden_along_time_difference(narrow_pump_jsa):
    m0, p0 = _time_moments(narrow_pump_jsa)
    link = FiberLink(1.0, beta2=1.0)
    m1, p1 = _time_moments(apply_dispersion(narrow_pump_jsa, link, link))
    assert m1 > 3 * m0
    assert p1 == pytest.approx(p0, rel=0.01)


# --- time-domain pipeline -------------------------------------------------------


@pytest.fixture(scope="module")
def toy_state():
    sd, split = toy_split(toy_schmidt(), 0.05, phase=0.4)
    return sd, split


SELECTION = {
    ("A", 0): ((-0.93, 2.44),),
    ("A", 1): ((3.06, 4.9),),
    ("B", 1): ((1.06, 3.1), (-2.0, -0.4)),
    ("B", 0): ((-0.44, 0.55),),
}


def _toy_receivers():
    a = ReceiverInterferometer(0.6, (0.0, 0.9), (0.0, BIN), ((0.9, 0.8), (0.95, 0.7)), 0.9)
    b = ReceiverInterferometer(2**-0.5, (0.2, -0.5), (0.0, BIN), ((1.0, 0.9), (0.8, 0.85)), 0.95)
    return build_reduced_transformation(a, b)


def test_commensurate_step():
    assert commensurate_step([2.0, 3.0], 0.4) == pytest.approx(1 / 3)
    assert commensurate_step([0.0, 1.5, 2.25], 1.0) == pytest.approx(0.75)
    lat = TimeLattice(0.0, 0.25, 10)
    with pytest.raises(GridError):
        lat.samples(0.3)


def test_delays_out_of_window_rejected(toy_state):
    sd, split = toy_state
    st = build_time_state(sd, TimeLattice(-1.0, DT, 12), split=split, method="direct")
    with pytest.raises(GridError):
        DetectionSystem(st, _toy_receivers())


@pytest.mark.parametrize("with_dispersion", [False, True])
def test_reduced_pipeline_matches_dense_oracle(toy_state, with_dispersion):
    sd, split = toy_state
    links = (FiberLink(1.0, beta2=0.05), FiberLink(2.0, beta2=-0.03)) if with_dispersion else (None, None)
    lat = toy_lattice()
    rt = _toy_receivers()
    st = build_time_state(sd, lat, split=split, method="direct", link_A=links[0], link_B=links[1])
    fast = DetectionSystem(st, rt).vacuum(SELECTION)
    dense = dense_vacuum(split, rt, lat, SELECTION, link_A=links[0], link_B=links[1])
    assert fast == pytest.approx(dense, rel=1e-9)
    assert fast < 0.99


def test_fft_modes_match_direct(toy_state):
    sd, split = toy_state
    rt = _toy_receivers()
    vals = [
        DetectionSystem(build_time_state(sd, toy_lattice(), split=split, method=m), rt).vacuum(SELECTION)
        for m in ("direct", "fft")
    ]
    assert vals[1] == pytest.approx(vals[0], rel=1e-6)


def test_zero_delays_reduce_to_scalar_times_state(toy_state):
    sd, _ = toy_state
    rx = ReceiverInterferometer(transmittivity=0.8)
    rt = build_reduced_transformation(rx, ReceiverInterferometer(transmittivity=1.0))
    st = build_time_state(sd, toy_lattice(), method="direct")
    ds = DetectionSystem(st, rt)
    full = ((-np.inf, np.inf),)
    n0 = ds.mean_photons("A", 0)
    n1 = ds.mean_photons("A", 1)
    T, R = 0.8, 0.6
    # all delays zero: the two arms recombine coherently at the output splitter
    total = float(np.sum(np.sinh(sd.sigma / 2) ** 2))
    assert n0 == pytest.approx((T**2 + R**2) ** 2 * total, rel=1e-8)
    assert n1 == pytest.approx(0.0, abs=1e-12)
    assert ds.vacuum({("A", 1): full}) == pytest.approx(1.0, abs=1e-12)


def test_trace_counts_all_pairs(toy_state):
    sd, _ = toy_state
    rx = ReceiverInterferometer(transmittivity=1.0)
    st = build_time_state(sd, toy_lattice(), method="direct")
    ds = DetectionSystem(st, build_reduced_transformation(rx, rx))
    full = ((-np.inf, np.inf),)
    tr, _ = ds.poisson_terms({("A", 0): full, ("A", 1): full})
    assert tr == pytest.approx(float(np.sum(np.sinh(sd.sigma / 2) ** 2)), rel=1e-8)


def _coincidence(ds, da, db, ia, ib):
    v = ds.vacuum
    a, b = {("A", da): (ia,)}, {("B", db): (ib,)}
    return 1 - v(a) - v(b) + v({**a, **b})


def _poisson_coincidence(ds, da, db, ia, ib):
    v = ds.poisson_vacuum
    a, b = {("A", da): (ia,)}, {("B", db): (ib,)}
    return 1 - v(a) - v(b) + v({**a, **b})


@pytest.fixture(scope="module")
def multimode_systems():
    # Schmidt number ~5; the neglected multi-pair terms scale with the occupation per mode
    out = {}
    for mu in (0.01, 0.001):
        sd, split = toy_split(toy_schmidt(pump_fwhm=2.0), mu)
        out[mu] = DetectionSystem(build_time_state(sd, toy_lattice(240), split=split), receivers(0.0, 0.0))
    return out


def test_poisson_matches_determinant_at_low_mu(multimode_systems):
    ds = multimode_systems[0.01]
    for da, db, ia, ib in [(0, 1, "e", "e"), (0, 0, "e", "l"), (1, 0, "l", "l"), (1, 1, "l", "e")]:
        exact = _coincidence(ds, da, db, BINS[ia], BINS[ib])
        approx = _poisson_coincidence(ds, da, db, BINS[ia], BINS[ib])
        assert approx == pytest.approx(exact, rel=1e-3)
    for key in [("A", 0), ("B", 1)]:
        for b in BINS.values():
            sel = {key: (b,)}
            assert 1 - ds.poisson_vacuum(sel) == pytest.approx(1 - ds.vacuum(sel), rel=1e-3)


def test_poisson_error_is_first_order_in_mu(multimode_systems):
    # central-bin coincidences carry the largest multi-pair share
    c = BINS["c"]
    err = {}
    for mu, ds in multimode_systems.items():
        exact = _coincidence(ds, 0, 0, c, c)
        err[mu] = abs(_poisson_coincidence(ds, 0, 0, c, c) / exact - 1)
    assert err[0.001] < 2e-4
    assert 7 < err[0.01] / err[0.001] < 13


def test_two_photon_term_destructive_at_pi():
    sd, split = toy_split(toy_schmidt(), 1e-4)
    ds = DetectionSystem(build_time_state(sd, toy_lattice(), split=split), receivers(np.pi, 0.0))
    c = BINS["c"]
    same = _poisson_coincidence(ds, 0, 0, c, c)
    opposite = _poisson_coincidence(ds, 0, 1, c, c)
    assert same < 1e-3 * opposite


# --- oscillation filter ---------------------------------------------------------


def test_filter_without_dispersion_drops_nothing(toy_state):
    sd, split = toy_state
    st = fast_oscillation_filter(build_time_state(sd, toy_lattice(), split=split), 1e-6)
    ref = build_time_state(sd, toy_lattice(), split=split)
    rt = _toy_receivers()
    assert DetectionSystem(st, rt).vacuum(SELECTION) == DetectionSystem(ref, rt).vacuum(SELECTION)
    assert st.dropped == {"A": 0.0, "B": 0.0}


def test_filter_infinite_threshold_is_identity(toy_state):
    sd, split = toy_state
    links = dict(link_A=FiberLink(1.0, beta2=0.1), link_B=FiberLink(1.0, beta2=0.1))
    ref = build_time_state(sd, toy_lattice(), split=split, **links)
    st = fast_oscillation_filter(ref, math.inf)
    rt = _toy_receivers()
    assert DetectionSystem(st, rt).vacuum(SELECTION) == DetectionSystem(ref, rt).vacuum(SELECTION)


def test_filter_matches_oversampled_reference(toy_state):
    sd, split = toy_state
    link = FiberLink(1.0, beta2=0.005)
    rt = _toy_receivers()
    coarse = fast_oscillation_filter(build_time_state(sd, toy_lattice(), split=split, link_A=link, link_B=link))
    filtered = DetectionSystem(coarse, rt).vacuum(SELECTION)
    assert coarse.dropped["A"] > 0
    fine_lat = TimeLattice(-6.0, DT / 4, 4 * 160)
    fine = build_time_state(sd, fine_lat, split=split, link_A=link, link_B=link)
    reference = DetectionSystem(fine, rt).vacuum(SELECTION)
    assert filtered == pytest.approx(reference, rel=1e-4)
