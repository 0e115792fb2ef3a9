"""Joint spectral amplitudes: pump and phase-matching models, spectrum fitting,
measured-spectrum symmetrization and WDM channel ingestion.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import least_squares

from .grid import DiscretizedKernel, FrequencyGrid, embed_weights, make_grid

TYPE_0 = "type-0"
TYPE_II = "type-II"
PROCESS_TYPES = (TYPE_0, TYPE_II)

# relative amplitude below which a spectral sample counts as outside the support
SUPPORT_THRESHOLD = 1e-10


class SpectrumError(ValueError):
    """Malformed spectrum or channel input."""


class FitConvergenceError(RuntimeError):
    """Phase-matching fit did not reach the residual target within its start budget."""

    def __init__(self, message: str, best: "PhaseMatching | None" = None):
        super().__init__(message)
        self.best = best


def _interp_complex(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    re = np.interp(x, xp, fp.real, left=0.0, right=0.0)
    im = np.interp(x, xp, fp.imag, left=0.0, right=0.0)
    return re + 1j * im


@dataclass(frozen=True, eq=False)
class PumpAmplitude:
    """Pump spectral amplitude α(ω_+) sampled on ``grid``, unit L² norm.

    ``func``, when given, is the analytic amplitude (same normalization) and is
    used for evaluation instead of interpolating the samples.
    """

    grid: FrequencyGrid
    values: np.ndarray
    pulse_duration: float
    func: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        norm = np.sqrt(np.sum(self.grid.weights * np.abs(v) ** 2))
        if not np.isfinite(norm) or norm == 0:
            raise SpectrumError("pump amplitude has zero or non-finite norm")
        object.__setattr__(self, "values", v / norm)
        if self.func is not None:
            f = self.func
            object.__setattr__(self, "func", lambda w, _f=f, _n=norm: _f(w) / _n)

    def __call__(self, omega_plus) -> np.ndarray:
        w = np.asarray(omega_plus, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(w), dtype=complex)
        return _interp_complex(w, self.grid.points, self.values)

    def support_width(self, threshold: float = SUPPORT_THRESHOLD) -> float:
        """Full width Δ_+ of the region where |α| exceeds ``threshold`` times its peak."""
        mag = np.abs(self.values)
        idx = np.nonzero(mag >= threshold * mag.max())[0]
        lo, hi = self.grid.points[idx[0]], self.grid.points[idx[-1]]
        # extend to the neighbouring samples so the bound is conservative
        step = self.grid.spacing
        return float(hi - lo + 2 * step) if idx.size < mag.size else float(hi - lo)

    def rms_width(self) -> float:
        p = self.grid.weights * np.abs(self.values) ** 2
        m = np.sum(p * self.grid.points)
        return float(np.sqrt(np.sum(p * (self.grid.points - m) ** 2)))


def gaussian_pump(fwhm: float, n_points: int = 2001, grid: FrequencyGrid | None = None) -> PumpAmplitude:
    """Transform-limited Gaussian pulse with intensity FWHM ``fwhm`` (s)."""
    s_int = fwhm / (2 * np.sqrt(2 * np.log(2)))  # std of |α(t)|²
    # |α(t)|² ∝ exp(-t²/2s²) -> α(ω) ∝ exp(-s² ω²)
    if grid is None:
        half = np.sqrt(np.log(1e14)) / s_int
        grid = make_grid(0.0, half, n_points)
    func = lambda w: np.exp(-(s_int * w) ** 2) + 0j  # noqa: E731
    return PumpAmplitude(grid, func(grid.points), fwhm, func=func)


def cosine_pump(delta_plus: float, n_points: int = 1001) -> PumpAmplitude:
    """Band-limited pump α ∝ cos²(π ω/Δ_+) on |ω| ≤ Δ_+/2, zero outside."""

    def func(w):
        w = np.asarray(w, dtype=float)
        out = np.where(np.abs(w) <= delta_plus / 2, np.cos(np.pi * w / delta_plus) ** 2, 0.0)
        return out + 0j

    grid = make_grid(0.0, delta_plus / 2, n_points)
    # FWHM of the intensity cos⁴ profile's Fourier partner is not needed here
    return PumpAmplitude(grid, func(grid.points), 2 * np.pi / delta_plus, func=func)


@dataclass(frozen=True, eq=False)
class PhaseMatching:
    """Phase-matching amplitude Φ(ω_-).

    For the crystal model Φ(ω_-) = L⁻¹ ∫_{-L/2}^{L/2} dz exp(i[δk' z²/2 + δk'' z³/6])
    exp(i Δk(ω_-) z) with Δk(ω_-) = Δk₀ + Δk' ω_-. ``dk1`` is Δk' (s/m),
    ``dk0`` is Δk₀ (1/m), ``delta_k1`` is δk' (1/m²) and ``delta_k2`` is δk'' (1/m³).
    ``func`` overrides the crystal model (used for analytic test shapes).
    """

    crystal_length: float = 0.0
    dk1: float = 0.0
    dk0: float = 0.0
    delta_k1: float = 0.0
    delta_k2: float = 0.0
    amplitude: float = 1.0
    baseline: float = 0.0
    residual: float | None = None
    n_z: int = 512
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __call__(self, omega_minus) -> np.ndarray:
        w = np.asarray(omega_minus, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(w), dtype=complex)
        return crystal_phase_matching(
            self.dk0 + self.dk1 * w,
            self.crystal_length,
            self.delta_k1,
            self.delta_k2,
            self.n_z,
        )

    def power_model(self, omega_minus) -> np.ndarray:
        """Fitted spectral density amplitude·|Φ|² + baseline."""
        return self.amplitude * np.abs(self(omega_minus)) ** 2 + self.baseline

    def rms_width(self, omega_minus: np.ndarray) -> float:
        p = np.abs(self(omega_minus)) ** 2
        p = p / p.sum()
        m = np.sum(p * omega_minus)
        return float(np.sqrt(np.sum(p * (omega_minus - m) ** 2)))


def crystal_phase_matching(
    delta_k: np.ndarray, length: float, delta_k1: float = 0.0, delta_k2: float = 0.0, n_z: int = 512
) -> np.ndarray:
    """Direct z-quadrature of the imperfect-crystal phase-matching integral.

    Returns the dimensionless amplitude normalized so that a uniform crystal
    gives sinc(Δk L/2) (unit peak).
    """
    if n_z < 512:
        raise ValueError("crystal quadrature needs at least 512 points")
    z, wz = np.polynomial.legendre.leggauss(n_z)
    z = 0.5 * length * z
    wz = 0.5 * length * wz
    chirp = np.exp(1j * (delta_k1 * z**2 / 2 + delta_k2 * z**3 / 6))
    dk = np.atleast_1d(np.asarray(delta_k, dtype=float))
    out = np.exp(1j * np.outer(dk, z)) @ (wz * chirp) / length
    return out.reshape(np.shape(delta_k))


def sinc_phase_matching(walkoff_time: float) -> PhaseMatching:
    """Uniform-crystal phase matching sinc(ω_- T/2) with T = Δk' L."""
    return PhaseMatching(func=lambda w: np.sinc(w * walkoff_time / (2 * np.pi)) + 0j)


def gaussian_phase_matching(width: float) -> PhaseMatching:
    """Φ(ω_-) = exp(-ω_-²/(2 width²))."""
    return PhaseMatching(func=lambda w: np.exp(-(w**2) / (2 * width**2)) + 0j)


# ---------------------------------------------------------------------------
# spectrum fitting


class _SpectrumModel:
    """amplitude·|Φ|² + baseline with Φ evaluated through a fixed z-quadrature matrix.

    Parameters are x = (Δk₀L, δk'L², δk''L³, amplitude, baseline).
    """

    def __init__(self, omega, length, dk1, n_z):
        z, wz = np.polynomial.legendre.leggauss(n_z)
        self.u = 0.5 * z  # z/L
        self.wz = 0.5 * wz
        self.kernel = np.exp(1j * np.outer(dk1 * length * omega, self.u))

    def _phi(self, x):
        u = self.u
        v = self.wz * np.exp(1j * (x[0] * u + x[1] * u**2 / 2 + x[2] * u**3 / 6))
        return self.kernel @ v, v

    def __call__(self, x):
        phi, _ = self._phi(x)
        return x[3] * np.abs(phi) ** 2 + x[4]

    def jacobian(self, x):
        phi, v = self._phi(x)
        u = self.u
        cols = []
        for factor in (u, u**2 / 2, u**3 / 6):
            dphi = self.kernel @ (1j * factor * v)
            cols.append(2 * x[3] * np.real(phi.conj() * dphi))
        cols.append(np.abs(phi) ** 2)
        cols.append(np.ones_like(phi.real))
        return np.stack(cols, axis=1)


def phase_matching_from_fit(
    omega_minus,
    spectrum,
    crystal_length: float,
    dk1: float,
    n_starts: int = 20,
    residual_target: float = 0.05,
    n_z: int = 512,
    p1_bound: float = 80.0,
    p2_bound: float = 600.0,
) -> PhaseMatching:
    """Fit the imperfect-crystal power model to a measured pair spectrum.

    The free parameters are Δk₀, δk', δk'', an amplitude and a constant
    background added to the power spectrum. Δk' and L are fixed inputs. The
    sign of δk' cannot be recovered from a power spectrum (the model is
    invariant under δk' → -δk'), so it is reported as non-negative.

    Raises:
        SpectrumError: on negative samples or too few points.
        FitConvergenceError: if no start reaches ``residual_target``
            (normalized RMS); the best fit is attached to the exception.
    """
    omega = np.asarray(omega_minus, dtype=float)
    data = np.asarray(spectrum, dtype=float)
    if omega.shape != data.shape or omega.ndim != 1:
        raise SpectrumError("spectrum and frequency axis must be 1-D arrays of equal length")
    if omega.size < 50:
        raise SpectrumError("need at least 50 spectrum samples")
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise SpectrumError("spectrum must be finite and nonnegative")
    if n_starts < 8:
        raise ValueError("use at least 8 multi-starts")
    if n_z < 512:
        raise ValueError("crystal quadrature needs at least 512 points")
    scale = data.max()
    if scale <= 0:
        raise SpectrumError("spectrum is identically zero")
    y = data / scale
    model = _SpectrumModel(omega, crystal_length, dk1, n_z)

    # centroid of the main lobe seeds the phase-mismatch offset
    peak = omega[np.argmax(y)]
    dk0L_guess = -dk1 * crystal_length * peak
    p1_seeds = (0.0, 4.0, 12.0, 30.0)
    p2_seeds = (0.0, -40.0, 40.0, -150.0, 150.0)
    starts = [(p1, p2) for p2 in p2_seeds for p1 in p1_seeds]
    starts = starts[: max(n_starts, 8)]

    lb = [-np.inf, 0.0, -p2_bound, 0.0, -1.0]
    ub = [np.inf, p1_bound, p2_bound, np.inf, 1.0]

    best = None
    for p1, p2 in starts:
        x0 = np.array([dk0L_guess, p1, p2, 1.0, 0.0])
        x0[3] = min(1.0 / max(model(x0).max(), 1e-6), 1e6)
        sol = least_squares(
            lambda x: model(x) - y,
            x0,
            jac=model.jacobian,
            bounds=(lb, ub),
            x_scale="jac",
            xtol=1e-12,
            ftol=1e-12,
            gtol=1e-12,
            max_nfev=300,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    dk0L, p1, p2, amp, base = best.x
    residual = float(np.sqrt(np.mean(best.fun**2)))
    pm = PhaseMatching(
        crystal_length=crystal_length,
        dk1=dk1,
        dk0=dk0L / crystal_length,
        delta_k1=p1 / crystal_length**2,
        delta_k2=p2 / crystal_length**3,
        amplitude=amp * scale,
        baseline=base * scale,
        residual=residual,
        n_z=n_z,
    )
    if residual > residual_target:
        raise FitConvergenceError(
            f"phase-matching fit residual {residual:.3g} exceeds target {residual_target:.3g}",
            best=pm,
        )
    return pm


def synthetic_spectrum(omega_minus, crystal_length, dk1, dk0=0.0, delta_k1=0.0, delta_k2=0.0,
                       amplitude=1.0, baseline=0.0, n_z=512) -> np.ndarray:
    """Forward model amplitude·|Φ(ω_-)|² + baseline for given crystal parameters."""
    pm = PhaseMatching(crystal_length, dk1, dk0, delta_k1, delta_k2, amplitude, baseline, n_z=n_z)
    return pm.power_model(np.asarray(omega_minus, dtype=float))


# ---------------------------------------------------------------------------
# joint spectral amplitude


@dataclass(frozen=True, eq=False)
class JointSpectralAmplitude:
    """Weight-embedded two-frequency kernel ψ(ω_s, ω_i).

    ``norm_sq`` is the squared L² norm relative to the full source JSA:
    1 for a complete JSA, less than 1 for band restrictions of it.
    """

    kernel: DiscretizedKernel
    delta_plus: float
    process_type: str = TYPE_II
    norm_sq: float = 1.0

    def __post_init__(self):
        if self.process_type not in PROCESS_TYPES:
            raise ValueError(f"process_type must be one of {PROCESS_TYPES}")
        if not self.kernel.weight_embedded:
            object.__setattr__(self, "kernel", embed_weights(self.kernel))

    @property
    def matrix(self) -> np.ndarray:
        return self.kernel.matrix

    @property
    def grid_s(self) -> FrequencyGrid:
        return self.kernel.row_grid

    @property
    def grid_i(self) -> FrequencyGrid:
        return self.kernel.col_grid

    def with_matrix(self, matrix: np.ndarray, norm_sq: float | None = None) -> "JointSpectralAmplitude":
        return replace(
            self,
            kernel=self.kernel.with_matrix(matrix),
            norm_sq=self.norm_sq if norm_sq is None else norm_sq,
        )


def aspect_ratio(pump: PumpAmplitude, pm: PhaseMatching, omega_minus: np.ndarray) -> float:
    return pm.rms_width(omega_minus) / pump.rms_width()


def assemble_jsa(
    pump: PumpAmplitude,
    pm: PhaseMatching,
    grid_s: FrequencyGrid,
    grid_i: FrequencyGrid | None = None,
    process_type: str = TYPE_II,
    reference_norm_sq: float | None = None,
    warn_aspect: bool = True,
) -> JointSpectralAmplitude:
    """Sample ψ(ω_s, ω_i) = α(ω_s + ω_i) Φ(ω_s - ω_i) and normalize it.

    By default the sampled kernel is scaled to unit norm. When the grids
    cover only part of the JSA, pass ``reference_norm_sq`` (the squared norm
    of the complete unnormalized product, see :func:`pair_norm_sq`); the
    kernel is then divided by its square root and keeps the fraction of the
    norm that falls on the grids.
    """
    grid_i = grid_s if grid_i is None else grid_i
    ws = grid_s.points[:, None]
    wi = grid_i.points[None, :]
    samples = pump(ws + wi) * pm(ws - wi)
    kernel = embed_weights(DiscretizedKernel(samples, grid_s, grid_i))
    omega_minus = np.linspace(
        grid_s.points[0] - grid_i.points[-1], grid_s.points[-1] - grid_i.points[0], 2001
    )
    if warn_aspect:
        ratio = aspect_ratio(pump, pm, omega_minus)
        if ratio < 10:
            warnings.warn(
                f"JSA aspect ratio {ratio:.3g} < 10: pump/phase-matching factorization is a weak approximation",
                stacklevel=2,
            )
    m = kernel.matrix
    nrm = np.linalg.norm(m)
    if nrm == 0:
        raise SpectrumError("JSA vanishes on the given grids")
    if reference_norm_sq is None:
        m = m / nrm
        norm_sq = 1.0
    else:
        m = m / np.sqrt(reference_norm_sq)
        norm_sq = float(np.linalg.norm(m) ** 2)
    return JointSpectralAmplitude(
        kernel.with_matrix(m), pump.support_width(), process_type, norm_sq
    )


def pair_norm_sq(pm: PhaseMatching, omega_minus: np.ndarray) -> float:
    """∫∫ |α(ω_s+ω_i) Φ(ω_s-ω_i)|² dω_s dω_i for a unit-norm pump.

    The map (ω_s, ω_i) → (ω_s+ω_i, ω_s-ω_i) has Jacobian 2, so the double
    integral is ½‖α‖²‖Φ‖² with ‖Φ‖² integrated over ``omega_minus``.
    """
    return 0.5 * float(trapezoid(np.abs(pm(omega_minus)) ** 2, omega_minus))


# ---------------------------------------------------------------------------
# measured spectra and channels


def symmetrize_spectrum(omega, power, n_points: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Even part of a measured spectrum on a symmetric grid about zero offset.

    Returns ``(omega_sym, S_sym)`` with S_sym(ω) = [S(ω) + S(-ω)]/2, the input
    linearly resampled onto ``n_points`` points over the largest symmetric
    interval it covers.
    """
    omega = np.asarray(omega, dtype=float)
    power = np.asarray(power, dtype=float)
    if omega.ndim != 1 or omega.shape != power.shape or omega.size < 2:
        raise SpectrumError("spectrum must be two 1-D arrays of equal length")
    if np.any(np.diff(omega) <= 0):
        raise SpectrumError("frequency axis must be strictly increasing")
    if omega[0] >= 0 or omega[-1] <= 0:
        raise SpectrumError("spectrum must cover both sides of zero offset")
    half = min(-omega[0], omega[-1])
    n = omega.size if n_points is None else int(n_points)
    if n % 2 == 0:
        n += 1
    grid = np.linspace(-half, half, n)
    grid = 0.5 * (grid - grid[::-1])  # exact mirror symmetry of the samples
    s = np.interp(grid, omega, power)
    sym = 0.5 * (s + s[::-1])
    return grid, sym


@dataclass(frozen=True, eq=False)
class ChannelTransmission:
    """Power transmission T²(ω) of one WDM channel on a frequency-offset grid."""

    grid: FrequencyGrid
    power: np.ndarray
    nominal_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        p = np.asarray(self.power, dtype=float)
        if p.shape != (len(self.grid),):
            raise SpectrumError("transmission samples do not match the grid")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-6):
            raise SpectrumError("power transmission must lie in [0, 1]")
        p = np.clip(p, 0.0, 1.0)
        object.__setattr__(self, "power", p)
        if self.nominal_bounds is None:
            object.__setattr__(self, "nominal_bounds", self.bounds())

    def power_at(self, omega) -> np.ndarray:
        return np.interp(np.asarray(omega, dtype=float), self.grid.points, self.power, left=0.0, right=0.0)

    def amplitude(self, omega) -> np.ndarray:
        """Amplitude transmission T(ω), zero outside the sampled range."""
        return np.sqrt(self.power_at(omega))

    def bounds(self, level_db: float = -30.0) -> tuple[float, float]:
        """Outermost frequencies where T² stays above ``level_db``."""
        idx = np.nonzero(self.power >= 10 ** (level_db / 10))[0]
        if idx.size == 0:
            raise SpectrumError("channel never exceeds the support threshold")
        return float(self.grid.points[idx[0]]), float(self.grid.points[idx[-1]])

    def support_width(self, level_db: float = -30.0) -> float:
        lo, hi = self.bounds(level_db)
        return hi - lo

    def shifted(self, offset: float) -> "ChannelTransmission":
        lo, hi = self.nominal_bounds
        return ChannelTransmission(self.grid.shifted(offset), self.power, (lo + offset, hi + offset))


def flat_top_channel(
    center: float, width: float, edge: float | None = None, n_points: int = 801, order: int = 10
) -> ChannelTransmission:
    """Super-Gaussian channel T² = exp(-(2(ω-center)/width)^(2 order)·ln2), full width ``width`` at -3 dB."""
    edge = width if edge is None else edge
    grid = make_grid(center, width / 2 + edge, n_points)
    x = 2 * (grid.points - center) / width
    p = np.exp(-np.log(2) * np.abs(x) ** (2 * order))
    p[p < 1e-12] = 0.0
    return ChannelTransmission(grid, p)


def rect_channel(lower: float, upper: float, n_points: int = 401, margin: float | None = None) -> ChannelTransmission:
    """Hard-edged unit-transmission channel on [lower, upper]."""
    margin = 0.1 * (upper - lower) if margin is None else margin
    grid = make_grid(0.5 * (lower + upper), 0.5 * (upper - lower) + margin, n_points)
    p = ((grid.points >= lower - 1e-9 * abs(upper - lower)) & (grid.points <= upper + 1e-9 * abs(upper - lower))).astype(float)
    return ChannelTransmission(grid, p, (lower, upper))


def _parse_header(line: str) -> dict[str, str]:
    body = line.lstrip("#").strip()
    out = {}
    for part in body.split(","):
        if ":" in part:
            k, v = part.split(":", 1)
            out[k.strip().lower()] = v.strip()
    return out


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray, str]:
    """Read ``# unit: dB|linear, axis: Hz-offset`` CSV; returns (ω in rad/s, values, unit)."""
    path = Path(path)
    text = path.read_text().strip().splitlines()
    if not text:
        raise SpectrumError(f"{path}: empty file")
    unit = "linear"
    rows = []
    for line in text:
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            hdr = _parse_header(line)
            if "unit" in hdr:
                unit = hdr["unit"].lower()
                if unit not in ("db", "linear"):
                    raise SpectrumError(f"{path}: unknown unit {hdr['unit']!r}")
            axis = hdr.get("axis", "hz-offset").lower()
            if axis != "hz-offset":
                raise SpectrumError(f"{path}: unsupported axis {axis!r}")
            continue
        try:
            f, v = next(csv.reader([line]))[:2]
            rows.append((float(f), float(v)))
        except (ValueError, StopIteration) as exc:
            raise SpectrumError(f"{path}: malformed row {line!r}") from exc
    if not rows:
        raise SpectrumError(f"{path}: no data rows")
    data = np.array(rows)
    freq, values = data[:, 0], data[:, 1]
    if np.any(np.diff(freq) <= 0):
        raise SpectrumError(f"{path}: frequency column must be strictly increasing")
    return 2 * np.pi * freq, values, unit


def write_spectrum_csv(path, omega, values, unit: str = "linear") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# unit: {unit}, axis: Hz-offset\n")
        w = csv.writer(fh)
        for o, v in zip(np.asarray(omega) / (2 * np.pi), values):
            w.writerow([repr(float(o)), repr(float(v))])


def load_channel(csv_path, grid: FrequencyGrid | None = None) -> ChannelTransmission:
    """Load a channel transmission file and resample it onto ``grid``.

    dB values are converted with T² = 10^(dB/10).
    """
    omega, values, unit = read_spectrum_csv(csv_path)
    power = 10 ** (values / 10) if unit == "db" else values
    if np.any(power > 1 + 1e-6):
        raise SpectrumError(f"{csv_path}: transmission exceeds unity")
    if np.any(power < 0):
        raise SpectrumError(f"{csv_path}: negative transmission")
    if grid is None:
        grid = FrequencyGrid(omega, np.gradient(omega) if omega.size > 1 else np.ones(1))
        return ChannelTransmission(grid, np.clip(power, 0, 1))
    resampled = np.interp(grid.points, omega, power, left=0.0, right=0.0)
    return ChannelTransmission(grid, np.clip(resampled, 0, 1))


def load_spectrum(csv_path) -> tuple[np.ndarray, np.ndarray]:
    """Load a measured power spectrum (linear or dB) as (ω rad/s, power)."""
    omega, values, unit = read_spectrum_csv(csv_path)
    return omega, (10 ** (values / 10) if unit == "db" else values)
