"""Dense reference computations used to cross-check the fast pipeline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .covariance import PumpSplitState, RenormalizedCovariance, SchmidtDecomposition, covariance_from_schmidt, log_det_direct
from .grid import symplectic_fourier
from .optics import FiberLink, ReducedTransformation, apply_dispersion
from .pipeline import TimeLattice

MAX_DENSE_SIZE = 4000


def shift_matrix(n: int, shift: int) -> np.ndarray:
    """(S f)_i = f_{i - shift} on a finite lattice, zero outside."""
    return np.eye(n, k=-shift)


def party_output_matrix(rows, delays_samples, n: int) -> tuple[np.ndarray, list[int]]:
    """Stacked output operator (6n x n) and the detector of each block row."""
    blocks, dets = [], []
    for r in rows:
        m = np.zeros((n, n), dtype=complex)
        for x in range(2):
            if r.coefficients[x] != 0:
                m += r.coefficients[x] * shift_matrix(n, delays_samples[x])
        blocks.append(m)
        dets.append(r.detector)
    return np.vstack(blocks), dets


def dense_time_covariance(
    cov: RenormalizedCovariance, lattice: TimeLattice
) -> RenormalizedCovariance:
    """Two-party covariance on (a_A, a_B†) in the frequency basis -> time lattice."""
    tg = lattice.time_grid()
    (kaa, kab), (_, kbb) = cov.blocks
    aa = symplectic_fourier(kaa, tg, "operator").matrix
    ab = symplectic_fourier(kab, tg, "pair").matrix
    bb = symplectic_fourier(kbb, tg, "conjugate").matrix
    return replace(cov, aa=aa, ab=ab, ba=ab.conj().T, bb=bb, basis="time", grid_a=tg, grid_b=tg)


def dense_vacuum(
    sd_or_split: SchmidtDecomposition | PumpSplitState,
    transformation: ReducedTransformation,
    lattice: TimeLattice,
    selection: dict,
    order: int | None = None,
    link_A: FiberLink | None = None,
    link_B: FiberLink | None = None,
) -> float:
    """Brute-force ⟨Π_vac⟩: dense covariance, explicit delay matrices, full determinant."""
    n = lattice.n
    if 6 * n > MAX_DENSE_SIZE:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_SIZE // 6} lattice points")
    if isinstance(sd_or_split, PumpSplitState):
        cov = sd_or_split.covariance(order)
    else:
        cov = covariance_from_schmidt(sd_or_split, order, conjugate_pair=True)
    if cov.process_type != "type-II" and not cov.conjugate_pair:
        raise ValueError("dense oracle expects the two-party covariance form")
    if link_A is not None or link_B is not None:
        cov = apply_dispersion(cov, link_A or FiberLink(0.0), link_B or FiberLink(0.0))
    tcov = dense_time_covariance(cov, lattice)
    t = lattice.points
    tol = 1e-9 * lattice.dt
    mats, masks = {}, {}
    for p in ("A", "B"):
        party = transformation.party(p)
        shifts = [lattice.samples(d) for d in party.delays]
        s, dets = party_output_matrix(party.rows, shifts, n)
        mask = np.zeros(6 * n, dtype=bool)
        for (q, d), intervals in selection.items():
            if q != p:
                continue
            for lo, hi in intervals:
                inside = (t >= lo - tol) & (t < hi - tol)
                for r, dr in enumerate(dets):
                    if dr == d:
                        mask[r * n:(r + 1) * n] |= inside
        mats[p], masks[p] = s, mask
    sa, sb = mats["A"], mats["B"]
    aa = sa @ tcov.aa @ sa.conj().T
    ab = sa @ tcov.ab @ sb.T
    bb = sb.conj() @ tcov.bb @ sb.T
    m = np.block([[aa, ab], [ab.conj().T, bb]])
    keep = np.concatenate([masks["A"], masks["B"]])
    sub = m[np.ix_(keep, keep)]
    if sub.size == 0:
        return 1.0
    return float(np.exp(-log_det_direct(sub)))


# ---------------------------------------------------------------------------
# oracle suite

ORACLE_CAPS = {"fock_grid": 8, "fock_instances": 50, "lattice": MAX_DENSE_SIZE // 6, "phases": 64}
DEFAULT_SIZES = {"fock_grid": 6, "fock_instances": 6, "lattice": 160, "phases": 16}
TOY_BIN = 2.0
TOY_DT = 0.125
TOY_BINS = {"e": (-1.0, 1.0), "c": (1.0, 3.0), "l": (3.0, 5.0)}


class OracleSizeError(ValueError):
    """Requested oracle sizes exceed the desk-scale caps."""


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "max_deviation": float(self.max_deviation),
            "tolerance": float(self.tolerance),
            "detail": self.detail,
        }


def flip_detector1_sign(rt: ReducedTransformation) -> ReducedTransformation:
    """Fault injection: give detector 1 the same long-arm sign as detector 0."""
    def flip(party):
        rows = list(party.rows)
        r = rows[1]
        rows[1] = replace(r, coefficients=np.abs(r.coefficients) * np.exp(1j * np.angle(r.coefficients[0])))
        return replace(party, rows=tuple(rows))

    return replace(rt, A=flip(rt.A), B=flip(rt.B))


def _random_kernel(rng, na, nb):
    m = rng.normal(size=(na, nb)) + 1j * rng.normal(size=(na, nb))
    return m / np.linalg.norm(m)


def check_fock(seed: int, grid: int, instances: int, tol: float = 1e-6) -> OracleResult:
    """Vacuum, singles and coincidence probabilities against the Fock expansion."""
    from .covariance import covariance_exact, schmidt, vacuum_probability
    from .fock import fock_oracle

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        na, nb = rng.integers(2, grid + 1, size=2)
        psi = _random_kernel(rng, na, nb)
        gain = float(rng.uniform(0.05, 0.3))
        st = fock_oracle(psi, gain, cutoff=5)
        cov = covariance_exact(schmidt(psi, gain))
        for _ in range(4):
            ma = rng.random(na) < 0.5
            mb = rng.random(nb) < 0.5
            za, zb = np.zeros(na), np.zeros(nb)
            ia, ib = np.nonzero(ma)[0], np.nonzero(mb)[0]
            va = vacuum_probability(cov, (ma.astype(float), zb))
            vb = vacuum_probability(cov, (za, mb.astype(float)))
            vab = vacuum_probability(cov, (ma.astype(float), mb.astype(float)))
            fa, fb, fab = st.vacuum(ia, []), st.vacuum([], ib), st.vacuum(ia, ib)
            coinc = 1 - va - vb + vab
            fcoinc = 1 - fa - fb + fab
            worst = max(worst, abs(va - fa), abs(vb - fb), abs(vab - fab), abs(coinc - fcoinc))
    return OracleResult("fock_expansion", worst <= tol, worst, tol, f"{instances} random kernels up to {grid}x{grid}")


def toy_source(mu: float, pump_phase: float = 0.0, n: int = 161):
    """Small type-II source in dimensionless units (bin spacing 2, pulses ~0.25)."""
    from .covariance import gain_for_mean_pairs, schmidt, split_pump
    from .grid import make_grid
    from .jsa import TYPE_II, assemble_jsa, gaussian_phase_matching, gaussian_pump

    grid = make_grid(0.0, 24.0, n)
    pump = gaussian_pump(0.25, grid=make_grid(0.0, 60.0, 1201))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, gaussian_phase_matching(8.0), grid, process_type=TYPE_II)
    sd = schmidt(jsa, 1.0, TYPE_II, tail_tol=1e-12)
    base = split_pump(sd, 2**-0.5, (0.0, pump_phase), (0.0, TOY_BIN))
    gain = gain_for_mean_pairs([c.schmidt for c in base.components], mu)
    sd = sd.with_gain(gain)
    return sd, split_pump(sd, 2**-0.5, (0.0, pump_phase), (0.0, TOY_BIN))


def toy_lattice(n: int = 160, dt: float = TOY_DT) -> TimeLattice:
    span = n * TOY_DT
    return TimeLattice(-6.0 - 0.5 * (span - 160 * TOY_DT), dt, int(round(span / dt)))


def toy_receivers(phi_A: float = 0.0, phi_B: float = 0.0, **kw) -> ReducedTransformation:
    from .optics import ReceiverInterferometer, build_reduced_transformation

    a = ReceiverInterferometer(delays=(0.0, TOY_BIN), phases=(0.0, phi_A), **kw)
    b = ReceiverInterferometer(delays=(0.0, TOY_BIN), phases=(0.0, phi_B), **kw)
    return build_reduced_transformation(a, b)


def _random_selection(rng) -> dict:
    names = list(TOY_BINS)
    sel = {}
    for key in (("A", 0), ("A", 1), ("B", 0), ("B", 1)):
        chosen = [TOY_BINS[b] for b in names if rng.random() < 0.5]
        if chosen:
            sel[key] = tuple(chosen)
    return sel or {("A", 0): (TOY_BINS["c"],)}


def check_unreduced(seed: int, lattice_points: int, tol: float = 1e-9) -> OracleResult:
    """Low-rank pipeline against the dense time-domain covariance with explicit delay matrices."""
    from .pipeline import DetectionSystem, build_time_state

    rng = np.random.default_rng(seed)
    sd, split = toy_source(0.05, float(rng.uniform(0, 2 * np.pi)))
    lat = toy_lattice(lattice_points)
    link_A, link_B = FiberLink(1.0, 0.0, float(rng.uniform(-0.05, 0.05))), FiberLink(1.0, 0.0, float(rng.uniform(-0.05, 0.05)))
    rt = toy_receivers(*rng.uniform(0, 2 * np.pi, size=2), transmittivity=float(rng.uniform(0.5, 0.8)))
    st = build_time_state(sd, lat, split=split, method="direct", link_A=link_A, link_B=link_B)
    ds = DetectionSystem(st, rt)
    worst = 0.0
    for _ in range(3):
        sel = _random_selection(rng)
        fast = ds.vacuum(sel)
        dense = dense_vacuum(split, rt, lat, sel, link_A=link_A, link_B=link_B)
        worst = max(worst, abs(fast - dense) / dense)
    return OracleResult("unreduced_pipeline", worst <= tol, worst, tol, f"lattice of {lat.n} points, relative")


def _key_table(rt, sd, split, lat):
    from .detection import EventModel, TimeBinning, ideal_detectors
    from .pipeline import DetectionSystem, build_time_state

    st = build_time_state(sd, lat, split=split, method="fft")
    binning = TimeBinning(TOY_BINS["e"], TOY_BINS["c"], TOY_BINS["l"], 4 * TOY_BIN)
    return EventModel(DetectionSystem(st, rt), binning, ideal_detectors(), 1.0).key_table()


def check_oversampling(seed: int, tol: float = 1e-8) -> OracleResult:
    """Key events are unchanged when the time lattice is refined twofold."""
    rng = np.random.default_rng(seed)
    sd, split = toy_source(0.02, float(rng.uniform(0, 2 * np.pi)))
    rt = toy_receivers(*rng.uniform(0, 2 * np.pi, size=2))
    coarse = _key_table(rt, sd, split, toy_lattice(160, TOY_DT))
    fine = _key_table(rt, sd, split, toy_lattice(160, TOY_DT / 2))
    worst = max(abs(coarse[k] - fine[k]) for k in coarse)
    return OracleResult("oversampling", worst <= tol, worst, tol, "lattice step halved, absolute")


def check_wdm_reduction(seed: int, tol: float = 1e-8) -> OracleResult:
    """Channel click probabilities from the full JSA and from the band-reduced JSA."""
    from .grid import make_grid
    from .jsa import TYPE_0, assemble_jsa, cosine_pump, flat_top_channel, gaussian_phase_matching, rect_channel
    from .wdm import ChannelPair, click_probabilities, post_wdm_covariance, reduce_jsa

    rng = np.random.default_rng(seed)
    grid = make_grid(0.0, 20.0, 161)
    jsa = assemble_jsa(cosine_pump(1.0), gaussian_phase_matching(15.0), grid, process_type=TYPE_0)
    centre = float(rng.uniform(7.0, 12.0))
    pair = ChannelPair(flat_top_channel(-centre + float(rng.uniform(-1, 1)), 4.0), flat_top_channel(centre, 4.0))
    whole = reduce_jsa(jsa, ChannelPair(rect_channel(-20.0, 0.0, margin=0.0), rect_channel(0.0, 20.0, margin=0.0)), 3)
    red = reduce_jsa(jsa, pair, 3)
    gain = float(rng.uniform(0.1, 0.4))
    p_full = click_probabilities(post_wdm_covariance(whole, pair, gain, 3, reordered=False))
    p_red = click_probabilities(post_wdm_covariance(red, pair, gain, 3, reordered=False))
    worst = max(abs(p_full[k] - p_red[k]) for k in p_full)
    return OracleResult("wdm_full_vs_reduced", worst <= tol, worst, tol, "N = 3, absolute")


def fit_cosine(phases, values) -> tuple[float, float, float]:
    """Least-squares a + b cos φ + c sin φ; returns (a, signed visibility b'/a, phase offset)."""
    phases = np.asarray(phases, dtype=float)
    m = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    (a, b, c), *_ = np.linalg.lstsq(m, np.asarray(values, dtype=float), rcond=None)
    amp = math.hypot(b, c)
    offset = math.atan2(-c, b)
    # signed: positive for a maximum at φ ≈ 0 (modulo the fitted offset)
    sign = 1.0 if abs(offset) <= np.pi / 2 else -1.0
    if sign < 0:
        offset = offset - np.pi if offset > 0 else offset + np.pi
    return float(a), float(sign * amp / a), float(offset)


def two_photon_interference(n_phases: int = 16, mu: float = 1e-3, fault: bool = False) -> dict:
    """Central-bin coincidences against φ_A (φ_B = φ_p = 0) and their cosine fits per detector pair."""
    sd, split = toy_source(mu)
    lat = toy_lattice(160)
    phases = 2 * np.pi * np.arange(n_phases) / n_phases
    curves = {(da, db): [] for da in (0, 1) for db in (0, 1)}
    for phi in phases:
        rt = toy_receivers(float(phi), 0.0)
        if fault:
            rt = flip_detector1_sign(rt)
        table = _key_table(rt, sd, split, lat)
        for (da, db), vals in curves.items():
            vals.append(table[(da, db, "c", "c")])
    fits = {k: fit_cosine(phases, v) for k, v in curves.items()}
    return {"phases": phases, "curves": {k: np.array(v) for k, v in curves.items()}, "fits": fits}


def check_two_photon_interference(n_phases: int, fault: bool = False, min_visibility: float = 0.99) -> OracleResult:
    """Signed visibilities must be ≈ (-1)^{D_A+D_B} with no phase offset."""
    res = two_photon_interference(n_phases, fault=fault)
    worst = 0.0
    for (da, db), (_, vis, off) in res["fits"].items():
        expect = (-1) ** (da + db)
        worst = max(worst, abs(vis - expect), abs(off))
    tol = 1 - min_visibility
    return OracleResult("two_photon_interference", worst <= tol, worst, tol, f"{n_phases} phases, mu = 1e-3")


def run_oracle_check(seed: int = 0, sizes: dict | None = None, fault: bool = False) -> list[OracleResult]:
    """Run every small-scale oracle; sizes beyond :data:`ORACLE_CAPS` are refused."""
    sz = dict(DEFAULT_SIZES)
    for k, v in (sizes or {}).items():
        if k not in ORACLE_CAPS:
            raise OracleSizeError(f"unknown oracle size {k!r}")
        sz[k] = int(v)
    for k, v in sz.items():
        if not 1 <= v <= ORACLE_CAPS[k]:
            raise OracleSizeError(f"{k} = {v} outside [1, {ORACLE_CAPS[k]}]")
    if sz["fock_grid"] < 2:
        raise OracleSizeError("fock_grid must be at least 2")
    if sz["lattice"] < 160:
        raise OracleSizeError("lattice must hold at least 160 points for the toy time bins")
    if sz["phases"] < 4:
        raise OracleSizeError("need at least 4 phases for a cosine fit")
    return [
        check_fock(seed, sz["fock_grid"], sz["fock_instances"]),
        check_unreduced(seed, sz["lattice"]),
        check_oversampling(seed),
        check_wdm_reduction(seed),
        check_two_photon_interference(sz["phases"], fault),
    ]
