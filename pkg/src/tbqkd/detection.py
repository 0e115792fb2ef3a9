"""Detector physics and time-bin event statistics.

Every detection event reduces to vacuum expectations of unions of
(detector, window) selections, which :class:`~tbqkd.pipeline.DetectionSystem`
evaluates as small determinants. Noise clicks are a Poisson process per
detector; dead time enters through live probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pipeline import DetectionSystem

BIN_NAMES = ("e", "c", "l")
SIFTED_PAIRS = (("e", "e"), ("e", "l"), ("c", "c"), ("l", "e"), ("l", "l"))
TIME_BASIS = (("e", "e"), ("e", "l"), ("l", "e"), ("l", "l"))
DETECTOR_KEYS = (("A", 0), ("A", 1), ("B", 0), ("B", 1))


class EventError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector; efficiency is folded into the receiver transmittivities."""

    dark_count_rate: float = 0.0
    afterpulse_probability: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if self.dark_count_rate < 0 or self.dead_time < 0:
            raise ValueError("detector rates and dead time must be nonnegative")
        if not 0 <= self.afterpulse_probability < 1:
            raise ValueError("afterpulse probability must lie in [0, 1)")


def solve_noise_rate(detector: DetectorModel, mean_photons: float, rep_rate: float) -> float:
    """Noise rate closing r_noise = r_dc + p_ap (r_noise + r_p ⟨n⟩)."""
    p = detector.afterpulse_probability
    if p >= 1:
        raise ValueError("afterpulse probability must be below 1")
    return (detector.dark_count_rate + p * rep_rate * mean_photons) / (1 - p)


def live_probability(detector: DetectorModel, click_rate: float) -> float:
    if click_rate < 0:
        raise ValueError("click rate must be nonnegative")
    return 1.0 / (1.0 + click_rate * detector.dead_time)


@dataclass(frozen=True)
class TimeBinning:
    """Early, central and late windows of one repetition (time units of the lattice)."""

    early: tuple[float, float]
    central: tuple[float, float]
    late: tuple[float, float]
    period: float
    interleaved: bool = False

    def __post_init__(self):
        bins = (self.early, self.central, self.late)
        for lo, hi in bins:
            if not hi > lo:
                raise ValueError("time bins must have positive width")
        if not (self.early[1] <= self.central[0] and self.central[1] <= self.late[0]):
            raise ValueError("time bins must be disjoint and ordered early < central < late")
        if self.interleaved:
            # nested structure: the late bin is the early bin of the next repetition
            if not np.allclose(np.subtract(self.late, self.early), self.period):
                raise ValueError("interleaved bins need late = early + period")
        elif self.late[1] - self.early[0] > self.period * (1 + 1e-12):
            raise ValueError("time bins must fit into one repetition period")

    @classmethod
    def centered(cls, bin_spacing: float, period: float | None = None, width: float | None = None, interleaved: bool = False):
        """Windows of ``width`` (default: the spacing) centred on 0, Δτ and 2Δτ.

        The default period is 4Δτ, or 2Δτ for interleaved repetitions whose
        late bin coincides with the next early bin.
        """
        width = bin_spacing if width is None else width
        if period is None:
            period = (2.0 if interleaved else 4.0) * bin_spacing
        half = width / 2
        return cls(
            (-half, half),
            (bin_spacing - half, bin_spacing + half),
            (2 * bin_spacing - half, 2 * bin_spacing + half),
            period,
            interleaved,
        )

    @property
    def intervals(self) -> dict:
        return {"e": self.early, "c": self.central, "l": self.late}

    def prior(self, name: str) -> tuple:
        """Windows that must stay dark for a click in ``name`` to register."""
        iv = self.intervals
        return tuple(iv[b] for b in BIN_NAMES[: BIN_NAMES.index(name)])

    @property
    def all_bins(self) -> tuple:
        return (self.early, self.central, self.late)


@dataclass(frozen=True)
class EventProbabilities:
    """Per-repetition key-event table and the derived rates."""

    key: dict
    singles: dict
    live: dict
    rep_rate: float
    sifted_rate: float
    qber_time: float | None
    qber_phase: float | None


def qber_and_sifted_rate(key: dict, rep_rate: float) -> tuple[float | None, float | None, float]:
    """QBERs of both bases and the sifted rate from P_key[(D_A, D_B, I_A, I_B)].

    Undefined QBERs (no events in the basis) are returned as None.
    """
    def total(pairs, pred=lambda da, db: True):
        return sum(p for (da, db, ia, ib), p in key.items() if (ia, ib) in pairs and pred(da, db))

    t_all = total(TIME_BASIS)
    t_err = total((("e", "l"), ("l", "e")))
    c_all = total((("c", "c"),))
    c_err = total((("c", "c"),), lambda da, db: da != db)
    qt = t_err / t_all if t_all > 0 else None
    qp = c_err / c_all if c_all > 0 else None
    return qt, qp, rep_rate * total(SIFTED_PAIRS)


def crosstalk_product(system: DetectionSystem, selection: dict, n_window: int, period: float, noise_rates: dict | None = None) -> float:
    """Vacuum expectation with contributions of the n_window neighbouring repetitions on each side."""
    if n_window < 1:
        raise ValueError("cross-talk window must cover at least one neighbour")
    return system.vacuum(selection, noise_rates, crosstalk=n_window, period=period)


@dataclass(eq=False)
class EventModel:
    """Detection statistics of one configuration.

    ``detectors`` maps (party, detector index) to a :class:`DetectorModel`;
    ``rep_rate`` is in inverse time units of the detector rates.
    ``time_scale`` converts lattice time units to the unit of the rates
    (noise counts over a window are r·|I|·time_scale).
    """

    system: DetectionSystem
    binning: TimeBinning
    detectors: dict
    rep_rate: float
    crosstalk: int = 0
    time_scale: float = 1.0
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        missing = [k for k in DETECTOR_KEYS if k not in self.detectors]
        if missing:
            raise ValueError(f"missing detector models for {missing}")
        self.mean_photons = {k: self.system.mean_photons(*k) for k in DETECTOR_KEYS}
        self.noise_rates = {
            k: solve_noise_rate(self.detectors[k], self.mean_photons[k], self.rep_rate) for k in DETECTOR_KEYS
        }
        # the click rate entering the dead-time correction is the total event rate
        self.event_rates = {k: self.noise_rates[k] + self.rep_rate * self.mean_photons[k] for k in DETECTOR_KEYS}
        self.live = {k: live_probability(self.detectors[k], self.event_rates[k]) for k in DETECTOR_KEYS}

    def vacuum(self, selection: dict) -> float:
        key = tuple(sorted((k, tuple(v)) for k, v in selection.items() if v))
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        sel = {k: tuple(v) for k, v in selection.items() if v}
        noise = {k: r * self.time_scale for k, r in self.noise_rates.items()}
        if self.crosstalk:
            val = crosstalk_product(self.system, sel, self.crosstalk, self.binning.period, noise)
        else:
            val = self.system.vacuum(sel, noise)
        self._memo[key] = val
        return val

    def vacuum_povm_expectation(self, party: str, detector: int, intervals) -> float:
        return self.vacuum({(party, detector): tuple(intervals)})

    def detection_probabilities(self, party: str, detector: int) -> dict:
        """P(first click in e), P(first click in c), P(first click in l), P(no click)."""
        iv = self.binning.intervals
        v = lambda names: self.vacuum_povm_expectation(party, detector, [iv[n] for n in names])  # noqa: E731
        v_e, v_ec, v_all = v("e"), v("ec"), v("ecl")
        return {"e": 1 - v_e, "c": v_e - v_ec, "l": v_ec - v_all, "none": v_all}

    def key_event_probability(self, d_A: int, d_B: int, bin_A: str, bin_B: str, with_live: bool = True) -> float:
        """Coincidence of D_A in bin_A and D_B in bin_B with both other detectors dark."""
        if (bin_A, bin_B) not in SIFTED_PAIRS:
            raise EventError(f"({bin_A}, {bin_B}) is not a sifted time-bin pair")
        b = self.binning
        dark = {("A", 1 - d_A): b.all_bins, ("B", 1 - d_B): b.all_bins}
        opts_A = ((+1, b.prior(bin_A)), (-1, b.prior(bin_A) + (b.intervals[bin_A],)))
        opts_B = ((+1, b.prior(bin_B)), (-1, b.prior(bin_B) + (b.intervals[bin_B],)))
        total = 0.0
        for sa, ia in opts_A:
            for sb, ib in opts_B:
                total += sa * sb * self.vacuum({**dark, ("A", d_A): ia, ("B", d_B): ib})
        total = max(total, 0.0)
        if with_live:
            total *= math.prod(self.live.values())
        return total

    def key_table(self) -> dict:
        return {
            (da, db, ia, ib): self.key_event_probability(da, db, ia, ib)
            for da in (0, 1)
            for db in (0, 1)
            for ia, ib in SIFTED_PAIRS
        }

    def singles_rates(self) -> dict:
        """Registered click rates r_event·P_live per detector."""
        return {k: self.event_rates[k] * self.live[k] for k in DETECTOR_KEYS}

    def summary(self) -> EventProbabilities:
        key = self.key_table()
        qt, qp, rate = qber_and_sifted_rate(key, self.rep_rate)
        return EventProbabilities(key, self.singles_rates(), dict(self.live), self.rep_rate, rate, qt, qp)


def ideal_detectors() -> dict:
    return {k: DetectorModel() for k in DETECTOR_KEYS}


def cosine_law(d_A: int, d_B: int, phase_sum: float) -> float:
    """Relative central-bin coincidence 1 + (-1)^{D_A+D_B} cos(phase_sum)."""
    return 1.0 + (-1) ** (d_A + d_B) * np.cos(phase_sum)
