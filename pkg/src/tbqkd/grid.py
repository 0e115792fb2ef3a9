"""Frequency/time grids, quadrature weights and the Fourier map between them.

All integral operators in the package are carried as dense matrices whose
entries are scaled by the square root of the quadrature weights of their row
and column grids. With that embedding, operator composition is a plain matrix
product and singular values/determinants of the matrix approximate those of
the continuous operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids or incompatible grid pairs."""


def _check_grid(points: np.ndarray, weights: np.ndarray) -> None:
    if points.ndim != 1 or weights.shape != points.shape:
        raise GridError("points and weights must be 1-D arrays of equal length")
    if points.size < 1:
        raise GridError("grid must contain at least one point")
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
        raise GridError("grid contains non-finite values")
    if np.any(np.diff(points) <= 0):
        raise GridError("grid points must be strictly increasing")
    if np.any(weights <= 0):
        raise GridError("quadrature weights must be strictly positive")


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Angular-frequency offsets from a carrier (rad/s) with quadrature weights."""

    points: np.ndarray
    weights: np.ndarray
    carrier: float = 0.0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        _check_grid(points, weights)
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        """Nominal spacing (mean gap); exact for uniform grids."""
        if self.points.size < 2:
            return float(self.weights[0])
        return float((self.points[-1] - self.points[0]) / (self.points.size - 1))

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def is_uniform(self) -> bool:
        if self.points.size < 3:
            return True
        d = np.diff(self.points)
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=0.0))

    def subset(self, index) -> "FrequencyGrid":
        """Grid restricted to ``index`` (boolean mask or integer array), weights kept."""
        return FrequencyGrid(self.points[index], self.weights[index], self.carrier)

    def shifted(self, offset: float) -> "FrequencyGrid":
        return FrequencyGrid(self.points + offset, self.weights, self.carrier)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Times (s) with quadrature weights (s)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        _check_grid(points, weights)
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        if self.points.size < 2:
            return float(self.weights[0])
        return float((self.points[-1] - self.points[0]) / (self.points.size - 1))

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    def shift_in_samples(self, delay: float, rtol: float = 1e-6) -> int:
        """Integer sample count for ``delay``; raises if not commensurate with the spacing."""
        steps = delay / self.spacing
        k = int(round(steps))
        if abs(steps - k) > rtol * max(1.0, abs(steps)):
            raise GridError(
                f"delay {delay:.6g} s is not a multiple of the time step {self.spacing:.6g} s"
            )
        return k


def _trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def make_grid(center: float, half_width: float, n_points: int, carrier: float = 0.0) -> FrequencyGrid:
    """Uniform grid on ``[center - half_width, center + half_width]`` with trapezoid weights.

    Args:
        center: centre of the grid as an offset from the carrier (rad/s).
        half_width: half of the covered bandwidth (rad/s).
        n_points: number of samples, at least 2.
        carrier: absolute carrier angular frequency (rad/s).
    """
    if not (np.isfinite(center) and np.isfinite(half_width) and np.isfinite(carrier)):
        raise GridError("grid parameters must be finite")
    if n_points < 2:
        raise GridError("n_points must be >= 2")
    if half_width <= 0:
        raise GridError("half_width must be positive")
    points = np.linspace(center - half_width, center + half_width, int(n_points))
    step = 2.0 * half_width / (n_points - 1)
    return FrequencyGrid(points, _trapezoid_weights(int(n_points), step), carrier)


def make_time_grid(start: float, stop: float, n_points: int) -> TimeGrid:
    """Uniform time grid on ``[start, stop]`` with trapezoid weights."""
    if not (np.isfinite(start) and np.isfinite(stop)):
        raise GridError("time grid bounds must be finite")
    if n_points < 2 or stop <= start:
        raise GridError("need n_points >= 2 and stop > start")
    points = np.linspace(start, stop, int(n_points))
    return TimeGrid(points, _trapezoid_weights(int(n_points), (stop - start) / (n_points - 1)))


def make_time_grid_step(start: float, stop: float, step: float) -> TimeGrid:
    """Uniform grid with exactly ``step`` spacing covering at least ``[start, stop]``.

    ``start`` is snapped down to a multiple of ``step`` so that grids built with
    the same step share sample positions; delays that are multiples of the step
    then map to exact index shifts.
    """
    if step <= 0 or stop <= start:
        raise GridError("need step > 0 and stop > start")
    k0 = int(np.floor(start / step + 1e-9))
    k1 = int(np.ceil(stop / step - 1e-9))
    points = np.arange(k0, k1 + 1) * step
    return TimeGrid(points, _trapezoid_weights(points.size, step))


Grid = FrequencyGrid | TimeGrid


@dataclass(frozen=True, eq=False)
class DiscretizedKernel:
    """Dense sample matrix of a two-argument kernel on (row_grid, col_grid).

    ``weight_embedded`` marks matrices whose entry (i, j) already carries the
    factor sqrt(w_i w_j).
    """

    matrix: np.ndarray
    row_grid: Grid
    col_grid: Grid
    weight_embedded: bool = False
    basis: str = field(default="frequency")

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (len(self.row_grid), len(self.col_grid)):
            raise GridError(
                f"kernel shape {m.shape} does not match grids "
                f"({len(self.row_grid)}, {len(self.col_grid)})"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def embedded(self) -> "DiscretizedKernel":
        """Weight-embedded version (no-op if already embedded)."""
        return self if self.weight_embedded else embed_weights(self)

    def samples(self) -> np.ndarray:
        """Raw kernel samples with any weight embedding removed."""
        if not self.weight_embedded:
            return self.matrix
        sr = np.sqrt(self.row_grid.weights)
        sc = np.sqrt(self.col_grid.weights)
        return self.matrix / sr[:, None] / sc[None, :]

    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.embedded().matrix))

    def with_matrix(self, matrix: np.ndarray) -> "DiscretizedKernel":
        return replace(self, matrix=matrix)


def embed_weights(kernel: DiscretizedKernel) -> DiscretizedKernel:
    """Scale entry (i, j) by sqrt(w_i w_j)."""
    if kernel.weight_embedded:
        raise GridError("kernel weights are already embedded")
    sr = np.sqrt(kernel.row_grid.weights)
    sc = np.sqrt(kernel.col_grid.weights)
    return replace(kernel, matrix=kernel.matrix * sr[:, None] * sc[None, :], weight_embedded=True)


def fourier_matrix(freq: FrequencyGrid, time: TimeGrid) -> np.ndarray:
    """Embedded quadrature matrix of f(t) = (2 pi)^-1/2 ∫ dω e^{-iωt} f(ω).

    With this sign a spectral phase e^{iωτ} delays the time amplitude by +τ.
    Acts on weight-embedded frequency vectors and returns weight-embedded
    time vectors.
    """
    phase = np.exp(-1j * np.outer(time.points, freq.points))
    scale = np.sqrt(time.weights)[:, None] * np.sqrt(freq.weights)[None, :] / np.sqrt(2 * np.pi)
    return phase * scale


def check_nyquist(freq: FrequencyGrid, time: TimeGrid, rtol: float = 1e-6) -> None:
    """Raise if ``time`` cannot represent functions band-limited to ``freq``.

    The time step must resolve the covered bandwidth and the time span must
    stay inside one alias period 2π/dω of the frequency sampling.
    """
    if len(freq) < 2 or len(time) < 2:
        return
    dw = freq.spacing
    bandwidth = freq.span + dw
    if time.spacing > 2 * np.pi / bandwidth * (1 + rtol):
        raise GridError(
            f"time step {time.spacing:.4g} s too coarse for bandwidth {bandwidth:.4g} rad/s"
        )
    if time.span + time.spacing > 2 * np.pi / dw * (1 + rtol):
        raise GridError(
            f"time span {time.span:.4g} s exceeds alias period {2 * np.pi / dw:.4g} s"
        )


def symplectic_fourier(
    kernel: DiscretizedKernel,
    target: TimeGrid | tuple[TimeGrid, TimeGrid],
    kind: str = "pair",
    check: bool = True,
) -> DiscretizedKernel:
    """Transform a frequency-basis kernel to the time basis.

    ``kind="pair"`` treats the kernel as a two-photon amplitude: both
    arguments are physical photon frequencies and both receive e^{-iωt},
    ψ̃ = F ψ Fᵀ. ``kind="operator"`` treats it as an operator kernel
    (e.g. a diagonal covariance block), Γ̃ = F Γ F†. ``kind="conjugate"``
    is the operator rule for blocks written in the conjugate-mode
    representation, Γ̃ = F* Γ Fᵀ.
    """
    if kernel.basis != "frequency":
        raise GridError("input kernel must be in the frequency basis")
    t_row, t_col = target if isinstance(target, tuple) else (target, target)
    if check:
        check_nyquist(kernel.row_grid, t_row)
        check_nyquist(kernel.col_grid, t_col)
    m = kernel.embedded().matrix
    fr = fourier_matrix(kernel.row_grid, t_row)
    fc = fourier_matrix(kernel.col_grid, t_col)
    if kind == "pair":
        out = fr @ m @ fc.T
    elif kind == "operator":
        out = fr @ m @ fc.conj().T
    elif kind == "conjugate":
        out = fr.conj() @ m @ fc.T
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return DiscretizedKernel(out, t_row, t_col, weight_embedded=True, basis="time")


def inverse_symplectic_fourier(
    kernel: DiscretizedKernel,
    target: FrequencyGrid | tuple[FrequencyGrid, FrequencyGrid],
    kind: str = "pair",
) -> DiscretizedKernel:
    """Inverse of :func:`symplectic_fourier` by quadrature on the time grids."""
    if kernel.basis != "time":
        raise GridError("input kernel must be in the time basis")
    f_row, f_col = target if isinstance(target, tuple) else (target, target)
    m = kernel.embedded().matrix
    # adjoint of the forward quadrature; exact inverse up to quadrature/aliasing error
    fr = fourier_matrix(f_row, kernel.row_grid).conj().T
    fc = fourier_matrix(f_col, kernel.col_grid).conj().T
    if kind == "pair":
        out = fr @ m @ fc.T
    elif kind == "operator":
        out = fr @ m @ fc.conj().T
    elif kind == "conjugate":
        out = fr.conj() @ m @ fc.T
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return DiscretizedKernel(out, f_row, f_col, weight_embedded=True, basis="frequency")
