"""Configuration-driven simulations: single points, parameter sweeps and envelopes.

Internal units: time in ps, angular frequency in rad/ps, group-velocity
dispersion in ps²/km, detector rates in Hz. Configuration keys carry their
unit as a suffix (``length_km``, ``dead_time_us``, ``rep_rate_mhz`` ...).
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .covariance import SchmidtDecomposition, gain_for_mean_pairs, pump_split_coefficients, schmidt
from .detection import DETECTOR_KEYS, DetectorModel, EventModel, TimeBinning
from .grid import FrequencyGrid, make_grid
from .jsa import (
    TYPE_0,
    TYPE_II,
    ChannelTransmission,
    PhaseMatching,
    assemble_jsa,
    flat_top_channel,
    gaussian_phase_matching,
    gaussian_pump,
    load_channel,
    phase_matching_from_fit,
    read_spectrum_csv,
    sinc_phase_matching,
)
from .optics import FiberLink, ReceiverInterferometer, build_reduced_transformation
from .pipeline import DEFAULT_FILTER_THRESHOLD, DetectionSystem, TimeLattice, build_time_state, commensurate_step
from .wdm import ChannelPair, check_no_double_photon, reduce_jsa

PS = 1e-12
GHZ_TO_RAD_PER_PS = 2 * math.pi * 1e-3
SMF_BETA2_PS2_PER_KM = -21.7

SWEEP_AXES = ("mu", "dead_time", "phase", "offset", "L_plus", "rep_rate")
ENVELOPES = ("nominal", "best", "worst", "both")
CSV_COLUMNS = (
    "sweep_value", "envelope", "sifted_rate_hz", "qber_time", "qber_phase",
    "singles_A0", "singles_A1", "singles_B0", "singles_B1",
    "live_A0", "live_A1", "live_B0", "live_B1",
)

# parameters that may be given as {min, max}; the best case takes the favourable end
HIGHER_IS_BETTER = frozenset({"efficiency", "mode_match"})
LOWER_IS_BETTER = frozenset({"alpha_db_per_km", "dark_count_rate_hz", "afterpulse_probability", "dead_time_us"})


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(RuntimeError):
    """A simulation step failed numerically."""


_LINK = {"length_km": 0.0, "alpha_db_per_km": 0.2, "beta2_ps2_per_km": SMF_BETA2_PS2_PER_KM}
_RECEIVER = {
    "transmittivity": 2**-0.5,
    "phase_rad": 0.0,
    "delay_ps": 2272.727272727273,
    "efficiency": 1.0,
    "mode_match": 1.0,
}
_DETECTOR = {
    "efficiency": 1.0,
    "dark_count_rate_hz": 0.0,
    "afterpulse_probability": 0.0,
    "dead_time_us": 0.0,
    # optional: afterpulse probability falling as exp(-(τ_dt - τ_ref)/decay) with the dead time
    "afterpulse_decay_us": None,
    "afterpulse_reference_dead_time_us": 10.0,
}

DEFAULTS = {
    "source": {
        "process": TYPE_II,
        "mu": 0.02,
        "gain": None,
        "pump_fwhm_ps": 2.0,
        "phase_matching": {
            "model": "sinc",
            "walkoff_ps": 1.6,
            "width_rad_per_ps": None,
            "crystal_length_mm": None,
            "dk1_ps_per_mm": None,
            "dk0_per_mm": 0.0,
            "delta_k1_per_mm2": 0.0,
            "delta_k2_per_mm3": 0.0,
            "spectrum_csv": None,
        },
        "grid_half_width_rad_per_ps": 7.5,
        "grid_points": 481,
        "schmidt_tail": 1e-10,
        "series_order": None,
    },
    "pump_interferometer": {"transmittivity": 2**-0.5, "phase_rad": 0.0, "delay_ps": None},
    "links": {"A": dict(_LINK), "B": dict(_LINK)},
    "receivers": {"A": dict(_RECEIVER), "B": dict(_RECEIVER)},
    "detectors": {k: dict(_DETECTOR) for k in ("A0", "A1", "B0", "B1")},
    "binning": {"rep_rate_mhz": 110.0, "window_ps": None, "interleaved": False, "crosstalk": None},
    "wdm": None,
    "numerics": {
        "method": "fft",
        "filter_threshold": DEFAULT_FILTER_THRESHOLD,
        "oversample": 1.0,
        "max_lattice_points": 400_000,
    },
    "sweep": {"axis": None, "values": None, "split_A": 0.5},
    "envelope": None,
    "output": {"plots": True},
}

WDM_DEFAULTS = {
    "channel_A": {"center_ghz": -1000.0, "width_ghz": 50.0, "csv": None},
    "channel_B": {"center_ghz": 1000.0, "width_ghz": 50.0, "csv": None},
    "order": 5,
    "offset_ghz": 0.0,
}


# ---------------------------------------------------------------------------
# configuration


def _is_range(x) -> bool:
    return isinstance(x, dict) and set(x) == {"min", "max"}


def _merge(defaults, user, path=""):
    if user is None:
        return copy.deepcopy(defaults)
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {here!r}")
        if isinstance(defaults[key], dict) and not _is_range(val):
            out[key] = _merge(defaults[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def normalize_config(raw: dict, base_dir: str | Path = ".") -> dict:
    """Fill defaults, reject unknown keys and check value ranges."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    raw = copy.deepcopy(raw)
    dets = raw.get("detectors")
    if isinstance(dets, dict) and "all" in dets:
        common = dets.pop("all")
        raw["detectors"] = {k: {**(common or {}), **(dets.get(k) or {})} for k in ("A0", "A1", "B0", "B1")}
    wdm = raw.pop("wdm", None)
    cfg = _merge(DEFAULTS, raw)
    cfg["wdm"] = _merge(WDM_DEFAULTS, wdm, "wdm") if wdm is not None else None
    cfg["base_dir"] = str(base_dir)
    validate_config(cfg)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return normalize_config(raw or {}, path.parent)


def _values(x):
    """All numbers of a possibly ranged value."""
    if _is_range(x):
        return [x["min"], x["max"]]
    if isinstance(x, (list, tuple)):
        return [v for item in x for v in _values(item)]
    return [x]


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _check_ranges(node, path=""):
    if _is_range(node):
        key = path.rsplit(".", 1)[-1]
        _check(key in HIGHER_IS_BETTER or key in LOWER_IS_BETTER, f"{path} does not accept a {{min, max}} range")
        _check(node["min"] <= node["max"], f"{path}: min exceeds max")
        return
    if isinstance(node, dict):
        for k, v in node.items():
            _check_ranges(v, f"{path}.{k}" if path else k)
    elif isinstance(node, list):
        for v in node:
            _check_ranges(v, path)


def _resolve_path(cfg: dict, name) -> Path | None:
    if name is None:
        return None
    p = Path(name)
    if not p.is_absolute():
        p = Path(cfg.get("base_dir", ".")) / p
    return p


def validate_config(cfg: dict) -> None:
    try:
        _validate(cfg)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc


def _validate(cfg: dict) -> None:
    _check_ranges({k: v for k, v in cfg.items() if k != "base_dir"})
    src = cfg["source"]
    _check(src["process"] in (TYPE_II, TYPE_0), f"source.process must be {TYPE_II!r} or {TYPE_0!r}")
    if src["gain"] is None:
        _check(src["mu"] is not None and float(src["mu"]) >= 0, "source.mu must be nonnegative")
    else:
        _check(float(src["gain"]) >= 0, "source.gain must be nonnegative")
    _check(float(src["pump_fwhm_ps"]) > 0, "source.pump_fwhm_ps must be positive")
    _check(float(src["grid_half_width_rad_per_ps"]) > 0, "source.grid_half_width_rad_per_ps must be positive")
    _check(int(src["grid_points"]) >= 8, "source.grid_points must be at least 8")
    _check(src["series_order"] is None or int(src["series_order"]) >= 1, "source.series_order must be >= 1")
    pm = src["phase_matching"]
    model = pm["model"]
    _check(model in ("sinc", "gaussian", "crystal", "fit"), f"unknown phase-matching model {model!r}")
    if model == "sinc":
        _check(pm["walkoff_ps"] is not None and pm["walkoff_ps"] > 0, "phase_matching.walkoff_ps must be positive")
    if model == "gaussian":
        _check(pm["width_rad_per_ps"] is not None and pm["width_rad_per_ps"] > 0,
               "phase_matching.width_rad_per_ps must be positive")
    if model in ("crystal", "fit"):
        _check(pm["crystal_length_mm"] is not None and pm["crystal_length_mm"] > 0,
               "phase_matching.crystal_length_mm must be positive")
        _check(pm["dk1_ps_per_mm"] is not None, "phase_matching.dk1_ps_per_mm is required")
    if model == "fit":
        p = _resolve_path(cfg, pm["spectrum_csv"])
        _check(p is not None and p.is_file(), f"phase_matching.spectrum_csv {pm['spectrum_csv']!r} not found")
    pi = cfg["pump_interferometer"]
    _check(0 <= pi["transmittivity"] <= 1, "pump_interferometer.transmittivity must lie in [0, 1]")
    for party in ("A", "B"):
        link = cfg["links"][party]
        _check(all(v >= 0 for v in _values(link["length_km"])), f"links.{party}.length_km must be nonnegative")
        _check(all(v >= 0 for v in _values(link["alpha_db_per_km"])), f"links.{party}.alpha_db_per_km must be nonnegative")
        rx = cfg["receivers"][party]
        _check(0 <= rx["transmittivity"] <= 1, f"receivers.{party}.transmittivity must lie in [0, 1]")
        _check(rx["delay_ps"] > 0, f"receivers.{party}.delay_ps must be positive")
        _check(all(0 <= v <= 1 for v in _values(rx["efficiency"])), f"receivers.{party}.efficiency must lie in [0, 1]")
        _check(all(0 <= v <= 1 for v in _values(rx["mode_match"])), f"receivers.{party}.mode_match must lie in [0, 1]")
        eff = rx["efficiency"]
        if isinstance(eff, list):
            _check(len(eff) == 2 and all(isinstance(r, list) and len(r) == 2 for r in eff),
                   f"receivers.{party}.efficiency must be a number or a 2x2 table")
    for k, det in cfg["detectors"].items():
        _check(all(0 <= v <= 1 for v in _values(det["efficiency"])), f"detectors.{k}.efficiency must lie in [0, 1]")
        _check(all(v >= 0 for v in _values(det["dark_count_rate_hz"])), f"detectors.{k}.dark_count_rate_hz must be nonnegative")
        _check(all(0 <= v < 1 for v in _values(det["afterpulse_probability"])),
               f"detectors.{k}.afterpulse_probability must lie in [0, 1)")
        _check(all(v >= 0 for v in _values(det["dead_time_us"])), f"detectors.{k}.dead_time_us must be nonnegative")
        _check(det["afterpulse_decay_us"] is None or det["afterpulse_decay_us"] > 0,
               f"detectors.{k}.afterpulse_decay_us must be positive")
    b = cfg["binning"]
    _check(b["rep_rate_mhz"] > 0, "binning.rep_rate_mhz must be positive")
    _check(b["window_ps"] is None or b["window_ps"] > 0, "binning.window_ps must be positive")
    _check(b["crosstalk"] is None or int(b["crosstalk"]) >= 0, "binning.crosstalk must be nonnegative")
    num = cfg["numerics"]
    _check(num["method"] in ("fft", "direct"), "numerics.method must be 'fft' or 'direct'")
    _check(num["oversample"] >= 1, "numerics.oversample must be >= 1")
    if src["process"] == TYPE_0:
        _check(cfg["wdm"] is not None, "type-0 sources need a wdm section")
        for name in ("channel_A", "channel_B"):
            ch = cfg["wdm"][name]
            if ch["csv"] is not None:
                p = _resolve_path(cfg, ch["csv"])
                _check(p.is_file(), f"wdm.{name}.csv {ch['csv']!r} not found")
            else:
                _check(ch["width_ghz"] > 0, f"wdm.{name}.width_ghz must be positive")
    env = cfg["envelope"]
    _check(env is None or env in ENVELOPES, f"envelope must be one of {ENVELOPES}")
    sw = cfg["sweep"]
    _check(sw["axis"] is None or sw["axis"] in SWEEP_AXES, f"sweep.axis must be one of {SWEEP_AXES}")
    _check(0 <= sw["split_A"] <= 1, "sweep.split_A must lie in [0, 1]")


def has_ranges(node) -> bool:
    if _is_range(node):
        return True
    if isinstance(node, dict):
        return any(has_ranges(v) for v in node.values())
    if isinstance(node, list):
        return any(has_ranges(v) for v in node)
    return False


def _substitute(node, which: str, key: str = ""):
    if _is_range(node):
        lo, hi = node["min"], node["max"]
        if which == "nominal":
            return 0.5 * (lo + hi)
        best = hi if key in HIGHER_IS_BETTER else lo
        worst = lo if key in HIGHER_IS_BETTER else hi
        return best if which == "best" else worst
    if isinstance(node, dict):
        return {k: _substitute(v, which, k) for k, v in node.items()}
    if isinstance(node, list):
        return [_substitute(v, which, key) for v in node]
    return node


def envelope_config(cfg: dict, which: str) -> dict:
    """Config with every {min, max} range replaced by its best, worst or mid value."""
    if which not in ("nominal", "best", "worst"):
        raise ConfigError(f"unknown envelope {which!r}")
    return _substitute(cfg, which)


def envelopes_of(cfg: dict) -> tuple[str, ...]:
    env = cfg.get("envelope")
    if env is None:
        env = "both" if has_ranges(cfg) else "nominal"
    return ("best", "worst") if env == "both" else (env,)


# ---------------------------------------------------------------------------
# source


@dataclass(frozen=True, eq=False)
class SourceModes:
    """Normalized Schmidt data of the source on the grids seen by the receivers."""

    schmidt: SchmidtDecomposition
    modes_A: np.ndarray | None = None
    modes_B: np.ndarray | None = None
    outside_norm_sq: float = 0.0

    @property
    def omega_max(self) -> float:
        sd = self.schmidt
        return float(max(np.abs(sd.grid_a.points).max(), np.abs(sd.grid_b.points).max()))

    @property
    def coarse_step(self) -> float:
        return float(min(self.schmidt.grid_a.spacing, self.schmidt.grid_b.spacing))


_SOURCE_CACHE: dict = {}


def _phase_matching(cfg: dict) -> PhaseMatching:
    pm = cfg["source"]["phase_matching"]
    model = pm["model"]
    if model == "sinc":
        return sinc_phase_matching(float(pm["walkoff_ps"]))
    if model == "gaussian":
        return gaussian_phase_matching(float(pm["width_rad_per_ps"]))
    # crystal units: mm and ps, so Δk' ω is in 1/mm for ω in rad/ps
    length, dk1 = float(pm["crystal_length_mm"]), float(pm["dk1_ps_per_mm"])
    if model == "crystal":
        return PhaseMatching(length, dk1, float(pm["dk0_per_mm"]), float(pm["delta_k1_per_mm2"]),
                             float(pm["delta_k2_per_mm3"]))
    omega, values, unit = read_spectrum_csv(_resolve_path(cfg, pm["spectrum_csv"]))
    power = 10 ** (values / 10) if unit == "db" else values
    return phase_matching_from_fit(omega * PS, power, length, dk1)


def _channel(cfg: dict, name: str, offset: float) -> ChannelTransmission:
    ch = cfg["wdm"][name]
    if ch["csv"] is not None:
        raw = load_channel(_resolve_path(cfg, ch["csv"]))
        grid = FrequencyGrid(raw.grid.points * PS, raw.grid.weights * PS)
        out = ChannelTransmission(grid, raw.power)
    else:
        w = ch["width_ghz"] * GHZ_TO_RAD_PER_PS
        out = flat_top_channel(ch["center_ghz"] * GHZ_TO_RAD_PER_PS, w)
    return out.shifted(offset) if offset else out


def _source_key(cfg: dict) -> str:
    src = {k: v for k, v in cfg["source"].items() if k not in ("mu", "gain", "series_order")}
    return json.dumps([src, cfg["wdm"], cfg["base_dir"]], sort_keys=True, default=str)


def build_source(cfg: dict) -> SourceModes:
    """Schmidt decomposition of the configured source (cached per source settings)."""
    key = _source_key(cfg)
    hit = _SOURCE_CACHE.get(key)
    if hit is not None:
        return hit
    src = cfg["source"]
    half, n = float(src["grid_half_width_rad_per_ps"]), int(src["grid_points"])
    pm = _phase_matching(cfg)
    if src["process"] == TYPE_II:
        grid = make_grid(0.0, half, n)
        pump = gaussian_pump(float(src["pump_fwhm_ps"]), grid=make_grid(0.0, 2 * half, 4 * n + 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            jsa = assemble_jsa(pump, pm, grid, process_type=TYPE_II)
        out = SourceModes(schmidt(jsa, 0.0, TYPE_II, tail_tol=float(src["schmidt_tail"])))
    else:
        out = _type0_source(cfg, pm, half, n)
    _SOURCE_CACHE[key] = out
    return out


def _type0_source(cfg: dict, pm: PhaseMatching, half: float, n: int) -> SourceModes:
    src, wdm = cfg["source"], cfg["wdm"]
    offset = float(wdm["offset_ghz"]) * GHZ_TO_RAD_PER_PS
    pair = ChannelPair(_channel(cfg, "channel_A", offset), _channel(cfg, "channel_B", 0.0))
    grid = make_grid(0.0, half, n)
    pump = gaussian_pump(float(src["pump_fwhm_ps"]), grid=make_grid(0.0, 2 * half, 4 * n + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, pm, grid, process_type=TYPE_0)
    order = int(wdm["order"])
    if not check_no_double_photon(pair, jsa.delta_plus, order):
        warnings.warn("channels close to degeneracy: both photons of a pair may share a channel", stacklevel=2)
    reduced = reduce_jsa(jsa, pair, order)
    sd = schmidt(reduced.pair_block(), 0.0, TYPE_0, tail_tol=float(src["schmidt_tail"]))
    ga, gb = reduced.grid.subset(reduced.side_A), reduced.grid.subset(reduced.side_B)
    ta, tb = pair.channel_A.amplitude(ga.points), pair.channel_B.amplitude(gb.points)
    # only frequencies that pass a channel reach the receivers; modes are taken
    # relative to the channel centres (carrier phases go into the interferometer phases)
    ka, kb = ta > 0, tb > 0
    if not ka.any() or not kb.any():
        raise ConfigError("a WDM channel does not overlap the source spectrum grid")
    ca, cb = 0.5 * sum(pair.bounds_A), 0.5 * sum(pair.bounds_B)
    grid_a = ga.subset(np.nonzero(ka)[0]).shifted(-ca)
    grid_b = gb.subset(np.nonzero(kb)[0]).shifted(-cb)
    ua, vb = ta[ka, None] * sd.U[ka], tb[kb, None] * sd.V[kb]
    # modes that hardly pass either channel carry no detectable photons
    w = sd.coefficients**2 * np.maximum(np.sum(np.abs(ua) ** 2, 0), np.sum(np.abs(vb) ** 2, 0))
    order_w = np.argsort(w)
    tail = np.cumsum(w[order_w])
    drop = order_w[tail < float(src["schmidt_tail"]) * tail[-1]]
    keep = np.setdiff1d(np.arange(w.size), drop)
    unit = SchmidtDecomposition(sd.U[ka][:, keep], sd.coefficients[keep], sd.V[kb][:, keep], 0.0, TYPE_0,
                                grid_a, grid_b)
    return SourceModes(unit, modes_A=ua[:, keep], modes_B=vb[:, keep], outside_norm_sq=reduced.outside_norm_sq())


def clear_source_cache() -> None:
    _SOURCE_CACHE.clear()


# ---------------------------------------------------------------------------
# single point


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    envelope: str
    sifted_rate_hz: float
    qber_time: float
    qber_phase: float
    singles: dict = field(default_factory=dict)
    live: dict = field(default_factory=dict)

    def record(self) -> dict:
        rec = {
            "sweep_value": self.sweep_value,
            "envelope": self.envelope,
            "sifted_rate_hz": self.sifted_rate_hz,
            "qber_time": self.qber_time,
            "qber_phase": self.qber_phase,
        }
        for p, d in DETECTOR_KEYS:
            rec[f"singles_{p}{d}"] = self.singles.get(f"{p}{d}", math.nan)
        for p, d in DETECTOR_KEYS:
            rec[f"live_{p}{d}"] = self.live.get(f"{p}{d}", math.nan)
        return rec

    @classmethod
    def failed(cls, value: float, envelope: str) -> "ResultRow":
        return cls(value, envelope, math.nan, math.nan, math.nan)


def _efficiency_table(rx: dict, dets: dict, party: str) -> tuple:
    eff = rx["efficiency"]
    table = np.full((2, 2), float(eff)) if not isinstance(eff, list) else np.asarray(eff, dtype=float)
    det = np.array([dets[f"{party}0"]["efficiency"], dets[f"{party}1"]["efficiency"]], dtype=float)
    return tuple(map(tuple, np.sqrt(table * det[None, :])))


@dataclass(frozen=True, eq=False)
class PreparedPoint:
    """Every numerical object of one configuration, ready for event statistics."""

    events: EventModel
    lattice: TimeLattice
    gain: float
    source: SourceModes


def _links(cfg: dict) -> dict:
    return {
        p: FiberLink(float(cfg["links"][p]["length_km"]), float(cfg["links"][p]["alpha_db_per_km"]),
                     float(cfg["links"][p]["beta2_ps2_per_km"]))
        for p in ("A", "B")
    }


def choose_lattice(cfg: dict, source: SourceModes, links: dict) -> TimeLattice:
    """Uniform lattice resolving the modes, commensurate with every delay, wide enough for broadening."""
    rx = cfg["receivers"]
    tau_p = cfg["pump_interferometer"]["delay_ps"]
    tau_p = rx["A"]["delay_ps"] if tau_p is None else tau_p
    delays = [float(rx["A"]["delay_ps"]), float(rx["B"]["delay_ps"]), float(tau_p)]
    w_max = source.omega_max
    dt_max = math.pi / w_max / float(cfg["numerics"]["oversample"])
    try:
        dt = commensurate_step(delays, dt_max)
    except ValueError as exc:
        raise ConfigError(f"delays are not commensurate with a lattice step: {exc}") from exc
    gdd = max(abs(link.group_delay_dispersion) for link in links.values())
    pulse = math.pi / source.coarse_step
    ext = gdd * w_max + pulse
    stop = float(tau_p) + max(delays[0], delays[1]) + ext
    n = int(math.ceil((stop + ext) / dt)) + 1
    if n > int(cfg["numerics"]["max_lattice_points"]):
        raise NumericalError(f"time lattice needs {n} points (limit {cfg['numerics']['max_lattice_points']})")
    return TimeLattice(-ext, dt, n)


def prepare(cfg: dict) -> PreparedPoint:
    """Build source, propagation, receivers and detectors for a range-free config."""
    if has_ranges({k: v for k, v in cfg.items() if k != "base_dir"}):
        raise ConfigError("resolve {min, max} ranges with envelope_config first")
    src = cfg["source"]
    try:
        source = build_source(cfg)
    except (ConfigError, NumericalError):
        raise
    except ValueError as exc:
        raise ConfigError(f"source: {exc}") from exc
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"source: {exc}") from exc
    sd = source.schmidt
    pi_cfg = cfg["pump_interferometer"]
    rx = cfg["receivers"]
    tau_p = rx["A"]["delay_ps"] if pi_cfg["delay_ps"] is None else pi_cfg["delay_ps"]
    weights = pump_split_coefficients(float(pi_cfg["transmittivity"]))
    if src["gain"] is not None:
        gain = float(src["gain"])
    else:
        comps = [replace(sd, coefficients=k * sd.coefficients) for k in weights if k > 0]
        try:
            gain = gain_for_mean_pairs(comps, float(src["mu"]), source.outside_norm_sq)
        except ValueError as exc:
            raise ConfigError(f"source: {exc}") from exc
    links = _links(cfg)
    lattice = choose_lattice(cfg, source, links)
    thr = cfg["numerics"]["filter_threshold"]
    order = src["series_order"]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            state = build_time_state(
                sd.with_gain(gain), lattice,
                pump_phases=(0.0, float(pi_cfg["phase_rad"])),
                pump_delays=(0.0, float(tau_p)),
                pump_weights=weights,
                link_A=links["A"], link_B=links["B"],
                order=None if order is None else int(order),
                method=cfg["numerics"]["method"],
                modes_A=source.modes_A, modes_B=source.modes_B,
                filter_threshold=math.inf if thr is None else float(thr),
            )
    except ValueError as exc:
        raise NumericalError(f"propagation: {exc}") from exc
    dets = cfg["detectors"]
    receivers = {
        p: ReceiverInterferometer(
            float(rx[p]["transmittivity"]), (0.0, float(rx[p]["phase_rad"])), (0.0, float(rx[p]["delay_ps"])),
            _efficiency_table(rx[p], dets, p), float(rx[p]["mode_match"]),
        )
        for p in ("A", "B")
    }
    try:
        transformation = build_reduced_transformation(
            receivers["A"], receivers["B"], (links["A"].amplitude_transmittivity, links["B"].amplitude_transmittivity)
        )
        system = DetectionSystem(state, transformation)
    except ValueError as exc:
        raise ConfigError(f"receivers: {exc}") from exc
    b = cfg["binning"]
    period = 1e6 / float(b["rep_rate_mhz"])
    spacing = float(rx["A"]["delay_ps"])
    width = spacing / 4 if b["window_ps"] is None else float(b["window_ps"])
    try:
        binning = TimeBinning.centered(spacing, period, width, bool(b["interleaved"]))
    except ValueError as exc:
        raise ConfigError(f"binning: {exc}") from exc
    crosstalk = b["crosstalk"]
    crosstalk = (1 if b["interleaved"] else 0) if crosstalk is None else int(crosstalk)
    try:
        models = {(k[0], int(k[1])): _detector_model(d) for k, d in dets.items()}
    except ValueError as exc:
        raise ConfigError(f"detectors: {exc}") from exc
    events = EventModel(system, binning, models, float(b["rep_rate_mhz"]) * 1e6, crosstalk, time_scale=PS)
    return PreparedPoint(events, lattice, gain, source)


def afterpulse_probability(det: dict) -> float:
    """Afterpulse probability at the configured dead time."""
    p = float(det["afterpulse_probability"])
    decay = det["afterpulse_decay_us"]
    if decay is None:
        return p
    return p * math.exp(-(float(det["dead_time_us"]) - float(det["afterpulse_reference_dead_time_us"])) / float(decay))


def _detector_model(det: dict) -> DetectorModel:
    return DetectorModel(float(det["dark_count_rate_hz"]), afterpulse_probability(det), float(det["dead_time_us"]) * 1e-6)


def _finite_or_nan(x) -> float:
    return math.nan if x is None else float(x)


def run_simulate(cfg: dict, envelope: str = "nominal", sweep_value: float = math.nan) -> ResultRow:
    """Evaluate one configuration through the full pipeline."""
    resolved = envelope_config(cfg, envelope) if has_ranges(cfg) or envelope != "nominal" else cfg
    point = prepare(resolved)
    try:
        summary = point.events.summary()
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"detection: {exc}") from exc
    row = ResultRow(
        float(sweep_value), envelope, float(summary.sifted_rate),
        _finite_or_nan(summary.qber_time), _finite_or_nan(summary.qber_phase),
        {f"{p}{d}": float(v) for (p, d), v in summary.singles.items()},
        {f"{p}{d}": float(v) for (p, d), v in summary.live.items()},
    )
    _check_row(row)
    return row


def _check_row(row: ResultRow) -> None:
    vals = [row.sifted_rate_hz, *row.singles.values()]
    if not all(np.isfinite(v) and v >= 0 for v in vals):
        raise NumericalError("non-finite or negative rate in result")
    for q in (row.qber_time, row.qber_phase):
        if not (math.isnan(q) or -1e-12 <= q <= 1 + 1e-12):
            raise NumericalError(f"QBER {q} outside [0, 1]")
    if not all(0 < v <= 1 for v in row.live.values()):
        raise NumericalError("live probability outside (0, 1]")


def simulate_envelopes(cfg: dict, sweep_value: float = math.nan) -> list[ResultRow]:
    return [run_simulate(cfg, env, sweep_value) for env in envelopes_of(cfg)]


# ---------------------------------------------------------------------------
# sweeps


def apply_axis(cfg: dict, axis: str, value: float) -> dict:
    """Copy of ``cfg`` with the sweep parameter set to ``value``."""
    out = copy.deepcopy(cfg)
    v = float(value)
    if axis == "mu":
        out["source"]["mu"], out["source"]["gain"] = v, None
    elif axis == "dead_time":
        for d in out["detectors"].values():
            d["dead_time_us"] = v
    elif axis == "phase":
        out["receivers"]["A"]["phase_rad"] = v
    elif axis == "offset":
        if out["wdm"] is None:
            raise ConfigError("the offset axis needs a wdm section")
        out["wdm"]["offset_ghz"] = v
    elif axis == "L_plus":
        split = float(out["sweep"]["split_A"])
        out["links"]["A"]["length_km"] = v * split
        out["links"]["B"]["length_km"] = v * (1 - split)
    elif axis == "rep_rate":
        out["binning"]["rep_rate_mhz"] = v
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return out


def sweep_values(entry) -> np.ndarray:
    """Values from a list or a {start, stop, num[, log]} mapping."""
    if entry is None:
        raise ConfigError("sweep.values is required for a sweep")
    if isinstance(entry, dict):
        try:
            start, stop, num = float(entry["start"]), float(entry["stop"]), int(entry["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("sweep.values mapping needs start, stop and num") from exc
        if num < 1:
            raise ConfigError("sweep.values.num must be positive")
        if entry.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError("logarithmic sweeps need positive bounds")
            return np.geomspace(start, stop, num)
        return np.linspace(start, stop, num)
    try:
        vals = np.asarray(entry, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError("sweep.values must be numbers") from exc
    if vals.size == 0:
        raise ConfigError("sweep.values is empty")
    return vals


@dataclass
class SweepResult:
    axis: str
    rows: list
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors


def _sweep_point(args) -> tuple[list, list]:
    cfg, axis, value = args
    point_cfg = apply_axis(cfg, axis, value)
    rows, errors = [], []
    for env in envelopes_of(cfg):
        try:
            rows.append(run_simulate(point_cfg, env, value))
        except (ConfigError, NumericalError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            rows.append(ResultRow.failed(value, env))
            errors.append({"sweep_value": float(value), "envelope": env, "error": f"{type(exc).__name__}: {exc}"})
    return rows, errors


def run_sweep(cfg: dict, axis: str | None = None, values=None, workers: int = 1) -> SweepResult:
    """One row per value and envelope, ordered by value then envelope.

    Failing points produce NaN rows plus an error record; the sweep carries on.
    """
    axis = axis or cfg["sweep"]["axis"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if axis == "offset" and cfg["wdm"] is None:
        raise ConfigError("the offset axis needs a wdm section")
    vals = sweep_values(cfg["sweep"]["values"] if values is None else values)
    tasks = [(cfg, axis, float(v)) for v in vals]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = [r for rs, _ in results for r in rs]
    errors = [e for _, es in results for e in es]
    return SweepResult(axis, rows, errors)


# ---------------------------------------------------------------------------
# output


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        rec = row.record()
        writer.writerow([rec[c] if c == "envelope" else repr(float(rec[c])) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            out.append({k: (v if k == "envelope" else float(v)) for k, v in rec.items()})
        return out


def plot_sweep(result: SweepResult, path) -> Path:
    """Sifted rate and both QBERs against the sweep parameter, one line per envelope."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), constrained_layout=True)
    envs = sorted({r.envelope for r in result.rows}, key=lambda e: ENVELOPES.index(e))
    for env in envs:
        rows = [r for r in result.rows if r.envelope == env]
        x = [r.sweep_value for r in rows]
        axes[0].plot(x, [r.sifted_rate_hz for r in rows], marker=".", label=env)
        axes[1].plot(x, [r.qber_time for r in rows], marker=".", label=env)
        axes[2].plot(x, [r.qber_phase for r in rows], marker=".", label=env)
    for ax, title in zip(axes, ("sifted rate (1/s)", "QBER time basis", "QBER phase basis")):
        ax.set_xlabel(result.axis)
        ax.set_title(title)
    axes[0].legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# phase-matching fit

SINC2_FWHM = 5.566229  # full width at half maximum of sinc²(x/2) in x


@dataclass(frozen=True, eq=False)
class FitReport:
    phase_matching: PhaseMatching
    omega: np.ndarray  # rad/ps
    data: np.ndarray
    model: np.ndarray

    @property
    def dimensionless(self) -> dict:
        pm = self.phase_matching
        L = pm.crystal_length
        return {
            "dk0_L": pm.dk0 * L,
            "delta_k1_L2": pm.delta_k1 * L**2,
            "delta_k2_L3": pm.delta_k2 * L**3,
            "walkoff_ps": pm.dk1 * L,
        }

    def as_dict(self) -> dict:
        pm = self.phase_matching
        return {
            "crystal_length_mm": pm.crystal_length,
            "dk1_ps_per_mm": pm.dk1,
            "dk0_per_mm": pm.dk0,
            "delta_k1_per_mm2": pm.delta_k1,
            "delta_k2_per_mm3": pm.delta_k2,
            "amplitude": pm.amplitude,
            "baseline": pm.baseline,
            "residual": pm.residual,
            **self.dimensionless,
        }

    def text(self) -> str:
        d = self.as_dict()
        lines = [
            "Phase-matching fit",
            f"  crystal length      {d['crystal_length_mm']:.6g} mm",
            f"  walk-off Δk'L       {d['walkoff_ps']:.6g} ps",
            f"  Δk0 L               {d['dk0_L']:.6g}",
            f"  δk' L²              {d['delta_k1_L2']:.6g}",
            f"  δk'' L³             {d['delta_k2_L3']:.6g}",
            f"  amplitude           {d['amplitude']:.6g}",
            f"  baseline            {d['baseline']:.6g}",
            f"  normalized RMS      {d['residual']:.4g}",
            "  note: the sign of δk' is not identifiable from a power spectrum; reported as >= 0",
        ]
        return "\n".join(lines) + "\n"


def main_lobe_fwhm(omega: np.ndarray, power: np.ndarray) -> float:
    """Full width at half maximum around the highest sample (linear interpolation)."""
    i = int(np.argmax(power))
    half = 0.5 * power[i]
    lo = i
    while lo > 0 and power[lo] > half:
        lo -= 1
    hi = i
    while hi < power.size - 1 and power[hi] > half:
        hi += 1
    if power[lo] > half or power[hi] > half:
        raise ConfigError("spectrum does not contain the half-maximum points of its main lobe")
    left = np.interp(half, [power[lo], power[lo + 1]], [omega[lo], omega[lo + 1]])
    right = np.interp(half, [power[hi], power[hi - 1]], [omega[hi], omega[hi - 1]])
    return float(right - left)


def run_fit_jsa(spectrum_csv, crystal_length_mm: float | None = None, dk1_ps_per_mm: float | None = None,
                n_starts: int = 20, residual_target: float = 0.05) -> FitReport:
    """Fit the crystal model to a measured pair spectrum (CSV with a Hz-offset axis).

    Without ``dk1_ps_per_mm`` the walk-off time is estimated from the width of
    the main lobe and the crystal length defaults to 1 mm, so only the
    dimensionless products are meaningful.
    """
    omega, values, unit = read_spectrum_csv(spectrum_csv)
    omega = omega * PS
    power = 10 ** (values / 10) if unit == "db" else values
    length = 1.0 if crystal_length_mm is None else float(crystal_length_mm)
    if length <= 0:
        raise ConfigError("crystal length must be positive")
    if dk1_ps_per_mm is None:
        dk1 = SINC2_FWHM / main_lobe_fwhm(omega, power) / length
    else:
        dk1 = float(dk1_ps_per_mm)
    pm = phase_matching_from_fit(omega, power, length, dk1, n_starts=n_starts, residual_target=residual_target)
    return FitReport(pm, omega, power, pm.power_model(omega))
