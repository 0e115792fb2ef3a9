"""Time-domain detection pipeline on low-rank Schmidt data.

The state reaching the receivers is Γ̃ = Σ_z Y_z Λ_z Y_z† with Y_z the time
mode functions of pump path z (Alice's modes and the conjugated modes of Bob
stacked block-diagonally). A vacuum projection X on detectors and windows
enters only through the small Gram matrix Q = Y†XY, so

    P_vac = exp(-noise) / |det(1 + Λ Q)|

with a matrix of size 2·(pump paths)·(Schmidt rank). Gram blocks are sums
over receiver arms of windowed overlaps of shifted mode functions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline

from .covariance import (
    PumpSplitState,
    SchmidtDecomposition,
    log_det_direct,
    truncated_cosh_minus_one,
    truncated_sinh,
)
from .grid import FrequencyGrid, GridError, TimeGrid, check_nyquist, fourier_matrix
from .optics import FiberLink, ReducedTransformation

PARTIES = ("A", "B")
DEFAULT_FILTER_THRESHOLD = 8.0  # cycles per grid cell


def commensurate_step(delays, max_step: float, max_denominator: int = 10_000) -> float:
    """Largest step <= ``max_step`` that divides every nonzero delay exactly."""
    vals = [abs(float(d)) for d in delays if abs(float(d)) > 0]
    if not vals:
        return max_step
    ref = max(vals)
    fracs = [Fraction(v / ref).limit_denominator(max_denominator) for v in vals]
    for v, f in zip(vals, fracs):
        if abs(float(f) * ref - v) > 1e-9 * ref:
            raise GridError(f"delay {v:.6g} is not commensurate with {ref:.6g}")
    den = math.lcm(*[f.denominator for f in fracs])
    nums = [f.numerator * (den // f.denominator) for f in fracs]
    unit = ref / den * math.gcd(*nums)
    m = max(1, math.ceil(unit / max_step - 1e-12))
    return unit / m


@dataclass(frozen=True, eq=False)
class TimeLattice:
    """Uniform local time lattice t_j = start + j·dt, j = 0..n-1."""

    start: float
    dt: float
    n: int

    @property
    def points(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.points, np.full(self.n, self.dt))

    def samples(self, delay: float) -> int:
        k = delay / self.dt
        r = int(round(k))
        if abs(k - r) > 1e-6 * max(1.0, abs(k)):
            raise GridError(f"delay {delay:.6g} is not a multiple of the time step {self.dt:.6g}")
        return r

    def index_range(self, interval, shift: int) -> tuple[int, int]:
        """Local indices j with start + (j + shift)·dt in [lo, hi)."""
        lo, hi = interval
        a = -np.inf if lo == -np.inf else math.ceil((lo - self.start) / self.dt - 1e-9) - shift
        b = np.inf if hi == np.inf else math.ceil((hi - self.start) / self.dt - 1e-9) - shift
        a = 0 if a == -np.inf else max(0, int(a))
        b = self.n if b == np.inf else min(self.n, int(b))
        return a, max(a, b)


def _raw_samples(modes: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    return modes / np.sqrt(grid.weights)[:, None]


def time_modes_direct(
    modes: np.ndarray, grid: FrequencyGrid, lattice: TimeLattice, link: FiberLink | None = None
) -> np.ndarray:
    """Embedded time mode functions by direct quadrature on the frequency grid."""
    m = modes
    if link is not None and link.group_delay_dispersion != 0:
        m = np.exp(1j * link.dispersion_phase(grid.points))[:, None] * m
    tg = lattice.time_grid()
    check_nyquist(grid, tg)
    return fourier_matrix(grid, tg) @ m


def time_modes_fft(
    modes: np.ndarray, grid: FrequencyGrid, lattice: TimeLattice, link: FiberLink | None = None
) -> np.ndarray:
    """Embedded time mode functions via spline interpolation onto a fine grid and FFT.

    The undispersed spectra are smooth and interpolate well; the dispersion
    phase is applied exactly on the fine grid, so the lattice may be much
    longer than the alias period of the (coarse) source grid.
    """
    n, dt = lattice.n, lattice.dt
    dw = 2 * np.pi / (n * dt)
    if dt > np.pi / max(abs(grid.points[0]), abs(grid.points[-1])) * (1 + 1e-9):
        raise GridError("time step does not resolve the frequency grid")
    w0 = -dw * (n // 2)
    omega = w0 + dw * np.arange(n)
    raw = _raw_samples(modes, grid)
    inside = (omega >= grid.points[0]) & (omega <= grid.points[-1])
    fine = np.zeros((n, modes.shape[1]), dtype=complex)
    if np.any(inside):
        wi = omega[inside]
        re = CubicSpline(grid.points, raw.real, axis=0)(wi)
        im = CubicSpline(grid.points, raw.imag, axis=0)(wi)
        fine[inside] = re + 1j * im
    if link is not None and link.group_delay_dispersion != 0:
        fine *= np.exp(1j * link.dispersion_phase(omega))[:, None]
    k = np.arange(n)
    fine *= np.exp(-1j * k * dw * lattice.start)[:, None]
    out = np.fft.fft(fine, axis=0)
    t = lattice.points
    out *= (dw / np.sqrt(2 * np.pi)) * np.exp(-1j * w0 * t)[:, None]
    return out * np.sqrt(dt)


@dataclass(frozen=True)
class PumpPath:
    weight: float
    phase: float
    delay: int  # samples


@dataclass(eq=False)
class TimeDomainState:
    """Low-rank two-party state in the time basis.

    ``modes_A`` and ``modes_B`` hold the physical (unconjugated) embedded time
    mode functions of Alice and Bob on a shared lattice; ``sigma`` are the
    squeezing parameters of the full (unsplit) source; ``paths`` the pump
    interferometer paths; ``gdd`` the β₂L of each party's link (for the
    oscillation filter).
    """

    lattice: TimeLattice
    modes_A: np.ndarray
    modes_B: np.ndarray
    sigma: np.ndarray
    paths: tuple[PumpPath, ...]
    order: int | None = None
    gdd: tuple[float, float] = (0.0, 0.0)
    filter_threshold: float = math.inf
    _cache: dict = field(default_factory=dict, repr=False)
    dropped: dict = field(default_factory=lambda: {"A": 0.0, "B": 0.0}, repr=False)

    @property
    def rank(self) -> int:
        return self.sigma.size

    def coupling(self) -> np.ndarray:
        """Λ = ⊕_z [[½(c-1), ½e^{iφ}s], [½e^{-iφ}s, ½(c-1)]] on (z, party, k)."""
        k = self.rank
        blocks = []
        for p in self.paths:
            s = p.weight * self.sigma
            cm = 0.5 * truncated_cosh_minus_one(s, self.order)
            sn = 0.5 * truncated_sinh(s, self.order)
            lam = np.zeros((2 * k, 2 * k), dtype=complex)
            lam[:k, :k] = np.diag(cm)
            lam[k:, k:] = np.diag(cm)
            lam[:k, k:] = np.diag(np.exp(1j * p.phase) * sn)
            lam[k:, :k] = np.diag(np.exp(-1j * p.phase) * sn)
            blocks.append(lam)
        n = len(blocks) * 2 * k
        out = np.zeros((n, n), dtype=complex)
        for i, b in enumerate(blocks):
            out[i * 2 * k:(i + 1) * 2 * k, i * 2 * k:(i + 1) * 2 * k] = b
        return out

    def _modes(self, party: str) -> np.ndarray:
        return self.modes_A if party == "A" else self.modes_B

    def oscillation_rate(self, party: str, shift_samples: int) -> float:
        """Cycles per grid cell of conj(Y(t-s1))Y(t-s2) for s1 - s2 = ``shift_samples``."""
        gdd = self.gdd[0 if party == "A" else 1]
        if gdd == 0 or shift_samples == 0:
            return 0.0
        dt = self.lattice.dt
        return abs(shift_samples) * dt * dt / (2 * np.pi * abs(gdd))

    def overlap(self, party: str, s1: int, s2: int, interval) -> np.ndarray:
        """G = Σ_{t_m in I} conj(Y(m - s1)) Y(m - s2) (k x k)."""
        key = (party, s1, s2, interval)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        Y = self._modes(party)
        n = self.lattice.n
        d = s1 - s2
        # j indexes Y(m - s1); partner index j + d
        lo, hi = self.lattice.index_range(interval, s1)
        lo = max(lo, -d, 0)
        hi = min(hi, n - d, n)
        k = Y.shape[1]
        if hi <= lo:
            g = np.zeros((k, k), dtype=complex)
        else:
            g = Y[lo:hi].conj().T @ Y[lo + d:hi + d]
        if self.oscillation_rate(party, d) > self.filter_threshold:
            self.dropped[party] += float(np.abs(g).sum())
            g = np.zeros_like(g)
        self._cache[key] = g
        return g

    def gram(self, party: str, couplings: list[tuple[np.ndarray, tuple, tuple[float, float]]]) -> np.ndarray:
        """Physical Gram blocks Q[z, z'] for a list of (K, arm delays in samples, interval)."""
        nz, k = len(self.paths), self.rank
        q = np.zeros((nz * k, nz * k), dtype=complex)
        for K, arm, interval in couplings:
            for a, pa in enumerate(self.paths):
                for b, pb in enumerate(self.paths):
                    acc = q[a * k:(a + 1) * k, b * k:(b + 1) * k]
                    for x in range(2):
                        for y in range(2):
                            c = K[x, y]
                            if c == 0:
                                continue
                            acc += c * self.overlap(party, pa.delay + arm[x], pb.delay + arm[y], interval)
        return q

    def assemble(self, gram_A: np.ndarray, gram_B: np.ndarray) -> np.ndarray:
        """Full Q on (z, party, k): Alice's Gram as is, Bob's conjugated."""
        nz, k = len(self.paths), self.rank
        q = np.zeros((2 * nz * k, 2 * nz * k), dtype=complex)
        for a in range(nz):
            for b in range(nz):
                ia, ib = a * 2 * k, b * 2 * k
                q[ia:ia + k, ib:ib + k] = gram_A[a * k:(a + 1) * k, b * k:(b + 1) * k]
                q[ia + k:ia + 2 * k, ib + k:ib + 2 * k] = gram_B[a * k:(a + 1) * k, b * k:(b + 1) * k].conj()
        return q


def _shift_interval(interval, offset):
    lo, hi = interval
    return (lo + offset, hi + offset)


def _union(intervals):
    return tuple(sorted(intervals))


@dataclass(frozen=True, eq=False)
class FinalCovariance:
    """Sylvester pair (Λ, Q) whose det(1 + ΛQ) equals det(1 + X Γ̃_final)."""

    coupling: np.ndarray
    gram: np.ndarray

    def log_det(self) -> float:
        return float(log_det_direct(self.coupling @ self.gram))

    def vacuum_probability(self) -> float:
        return float(np.exp(-self.log_det()))


class DetectionSystem:
    """Time-domain state plus receivers: vacuum expectations for detector/window selections.

    A selection maps (party, detector) to a tuple of disjoint windows.
    """

    def __init__(self, state: TimeDomainState, transformation: ReducedTransformation):
        self.state = state
        self.rt = transformation
        lat = state.lattice
        self._arm = {p: tuple(lat.samples(d) for d in transformation.party(p).delays) for p in PARTIES}
        self._K = {(p, d): transformation.party(p).coupling(d) for p in PARTIES for d in (0, 1)}
        reach = max(abs(z.delay) for z in state.paths) + max(abs(s) for v in self._arm.values() for s in v)
        if reach >= lat.n:
            raise GridError("delays shift the mode functions out of the time window")

    def final_covariance(self, selection: dict, offset: float = 0.0) -> FinalCovariance:
        grams = {}
        for p in PARTIES:
            terms = []
            for (party, det), intervals in selection.items():
                if party != p:
                    continue
                for iv in intervals:
                    terms.append((self._K[(p, det)], self._arm[p], _shift_interval(iv, offset)))
            grams[p] = self.state.gram(p, terms)
        return FinalCovariance(self.state.coupling(), self.state.assemble(grams["A"], grams["B"]))

    def vacuum(self, selection: dict, noise_rates: dict | None = None, crosstalk: int = 0, period: float | None = None) -> float:
        """⟨Π_vac⟩ for the selection, with Poisson noise and optional repetition cross-talk."""
        noise = 0.0
        if noise_rates:
            for key, intervals in selection.items():
                r = noise_rates.get(key, 0.0)
                noise += r * sum(hi - lo for lo, hi in intervals)
        logp = -noise - self.final_covariance(selection).log_det()
        if crosstalk:
            if period is None:
                raise ValueError("cross-talk needs the repetition period")
            for n in range(-crosstalk, crosstalk + 1):
                if n:
                    logp -= self.final_covariance(selection, n * period).log_det()
        return float(np.exp(logp))

    def mean_photons(self, party: str, detector: int) -> float:
        """Mean photon number reaching a detector per repetition (all times)."""
        st = self.state
        k = st.rank
        g = st.gram(party, [(self._K[(party, detector)], self._arm[party], (-np.inf, np.inf))])
        total = 0.0
        for a, p in enumerate(st.paths):
            cm = 0.5 * truncated_cosh_minus_one(p.weight * st.sigma, st.order)
            total += float(np.real(np.sum(cm * np.diag(g[a * k:(a + 1) * k, a * k:(a + 1) * k]))))
        return total

    def poisson_terms(self, selection: dict) -> tuple[float, float]:
        """(Tr XΓ̃, Tr (XΓ̃)²) keeping terms up to second order in the pair amplitude.

        The vacuum probability in the Poissonian approximation is
        exp(-trace + hs/2).
        """
        st = self.state
        k, nz = st.rank, len(st.paths)
        fc = self.final_covariance(selection)
        lam, q = fc.coupling, fc.gram
        trace = 0.0
        hs = 0.0
        for a in range(nz):
            ia = a * 2 * k
            trace += float(np.real(np.trace(lam[ia:ia + k, ia:ia + k] @ q[ia:ia + k, ia:ia + k])))
            trace += float(np.real(np.trace(lam[ia + k:ia + 2 * k, ia + k:ia + 2 * k] @ q[ia + k:ia + 2 * k, ia + k:ia + 2 * k])))
        for a in range(nz):
            for b in range(nz):
                ia, ib = a * 2 * k, b * 2 * k
                lab = lam[ia:ia + k, ia + k:ia + 2 * k]
                lba = lam[ib + k:ib + 2 * k, ib:ib + k]
                qb = q[ia + k:ia + 2 * k, ib + k:ib + 2 * k]
                qa = q[ib:ib + k, ia:ia + k]
                hs += 2 * float(np.real(np.trace(lab @ qb @ lba @ qa)))
        return trace, hs

    def poisson_vacuum(self, selection: dict) -> float:
        tr, hs = self.poisson_terms(selection)
        return float(np.exp(-tr + 0.5 * hs))


def fast_oscillation_filter(state: TimeDomainState, threshold: float = DEFAULT_FILTER_THRESHOLD) -> TimeDomainState:
    """Copy of ``state`` that drops overlap terms oscillating faster than ``threshold``.

    An overlap of two chirped copies of a mode function shifted by Δs
    oscillates at Δs/(β₂L) rad per unit time; above ``threshold`` cycles per
    grid cell its windowed sum averages to zero and is not resolved anyway.
    The dropped magnitude is accumulated in ``state.dropped``.
    """
    return TimeDomainState(
        state.lattice, state.modes_A, state.modes_B, state.sigma, state.paths,
        state.order, state.gdd, float(threshold),
    )


def build_time_state(
    sd: SchmidtDecomposition,
    lattice: TimeLattice,
    split: PumpSplitState | None = None,
    pump_phases: tuple[float, float] = (0.0, 0.0),
    pump_delays: tuple[float, float] = (0.0, 0.0),
    pump_weights: tuple[float, float] | None = None,
    link_A: FiberLink | None = None,
    link_B: FiberLink | None = None,
    order: int | None = None,
    method: str = "fft",
    modes_A: np.ndarray | None = None,
    modes_B: np.ndarray | None = None,
    filter_threshold: float = math.inf,
) -> TimeDomainState:
    """Propagate Schmidt modes through the links and transform them to the lattice.

    Alice's physical modes are U (optionally pre-filtered by ``modes_A``),
    Bob's are conj(V). Pump paths are taken from ``split`` if given (its
    weights and phases) or from the explicit arguments.
    """
    ua = sd.U if modes_A is None else modes_A
    vb = (sd.V if modes_B is None else modes_B).conj()
    if sd.grid_a is None or sd.grid_b is None:
        raise ValueError("Schmidt decomposition needs frequency grids")
    conv = time_modes_fft if method == "fft" else time_modes_direct
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown mode construction {method!r}")
    ya = conv(ua, sd.grid_a, lattice, link_A)
    yb = conv(vb, sd.grid_b, lattice, link_B)
    if split is not None:
        weights = split.coefficients
        pump_phases = (split.short.phase, split.long.phase)
        pump_delays = (split.short.delay, split.long.delay)
    else:
        weights = pump_weights if pump_weights is not None else (1.0, 0.0)
    paths = tuple(
        PumpPath(float(w), float(ph), lattice.samples(d))
        for w, ph, d in zip(weights, pump_phases, pump_delays)
        if w > 0
    )
    gdd = (
        link_A.group_delay_dispersion if link_A else 0.0,
        link_B.group_delay_dispersion if link_B else 0.0,
    )
    w = np.asarray(sd.sigma, dtype=float) ** 2
    kept = np.sum(np.abs(ya) ** 2, axis=0)
    lost = float(np.sum(w * (1 - kept)) / np.sum(w)) if w.sum() > 0 else 0.0
    if lost > 1e-3:
        warnings.warn(
            f"time lattice misses {lost:.2g} of the weighted mode norm; enlarge the window",
            stacklevel=2,
        )
    return TimeDomainState(lattice, ya, yb, np.asarray(sd.sigma, dtype=float), paths, order, gdd, filter_threshold)
