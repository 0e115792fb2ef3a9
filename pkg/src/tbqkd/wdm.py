"""Wavelength-division demultiplexing of a broadband type-0 source.

A type-0 JSA lives on one frequency grid of offsets ω̄ from half the pump
frequency. Alice's channel sits at negative offsets and Bob's at positive
ones. Only grid points close to the channels can influence the state inside
them up to series order N, so the JSA is cut down to those points before the
covariance is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    RenormalizedCovariance,
    covariance_series,
    gain_for_mean_pairs,
    schmidt,
    truncated_cosh_minus_one,
    truncated_sinh,
    vacuum_probability,
)
from .grid import DiscretizedKernel, FrequencyGrid
from .jsa import TYPE_0, ChannelTransmission, JointSpectralAmplitude, SpectrumError

SUPPORT_THRESHOLD = 1e-10
DEFAULT_ORDER = 5


class ChannelOverlapError(ValueError):
    """Both photons of a pair may reach the same channel at the requested order."""


@dataclass(frozen=True)
class ChannelPair:
    """Alice's (negative-offset) and Bob's (positive-offset) WDM channels."""

    channel_A: ChannelTransmission
    channel_B: ChannelTransmission

    def __post_init__(self):
        a_outer, a_inner = self.bounds_A
        b_inner, b_outer = self.bounds_B
        if not (a_outer <= a_inner <= 0 <= b_inner <= b_outer):
            raise ValueError(
                "channel bounds must satisfy a_outer <= a_inner <= 0 <= b_inner <= b_outer, got "
                f"A=[{a_outer:.4g}, {a_inner:.4g}] B=[{b_inner:.4g}, {b_outer:.4g}]"
            )

    @property
    def bounds_A(self) -> tuple[float, float]:
        return self.channel_A.nominal_bounds

    @property
    def bounds_B(self) -> tuple[float, float]:
        return self.channel_B.nominal_bounds

    @property
    def c_inner(self) -> float:
        return min(-self.bounds_A[1], self.bounds_B[0])

    @property
    def c_outer(self) -> float:
        return max(-self.bounds_A[0], self.bounds_B[1])

    def with_offset_A(self, offset: float) -> "ChannelPair":
        return ChannelPair(self.channel_A.shifted(offset), self.channel_B)


def iterated_kernel(jsa: JointSpectralAmplitude | np.ndarray, n: int) -> DiscretizedKernel | np.ndarray:
    """Alternating product ψψ†ψ… with ``n`` factors.

    Odd ``n`` maps the idler grid to the signal grid, even ``n`` the signal
    grid to itself.
    """
    if n < 1:
        raise ValueError("iteration order must be >= 1")
    psi = jsa.matrix if isinstance(jsa, JointSpectralAmplitude) else np.asarray(jsa)
    out = psi
    for k in range(2, n + 1):
        out = out @ psi.conj().T if k % 2 == 0 else out @ psi
    if not isinstance(jsa, JointSpectralAmplitude):
        return out
    col = jsa.grid_i if n % 2 == 1 else jsa.grid_s
    return DiscretizedKernel(out, jsa.grid_s, col, weight_embedded=True)


def support_violation(kernel: DiscretizedKernel, n: int, delta_plus: float, threshold: float = SUPPORT_THRESHOLD) -> float:
    """Largest |ψ_n| outside |ω̄_1 - (-1)^n ω̄_{n+1}| <= nΔ_+/2, relative to the peak."""
    m = np.abs(kernel.samples())
    peak = m.max()
    if peak == 0:
        return 0.0
    w1 = kernel.row_grid.points[:, None]
    w2 = kernel.col_grid.points[None, :]
    dist = np.abs(w1 - (-1) ** n * w2)
    # half a grid step of slack for samples that sit on the edge
    slack = 0.5 * max(kernel.row_grid.spacing, kernel.col_grid.spacing) * n
    outside = dist > n * delta_plus / 2 + slack
    return float(m[outside].max() / peak) if np.any(outside) else 0.0


def check_no_double_photon(pair: ChannelPair, delta_plus: float, order: int = DEFAULT_ORDER) -> bool:
    """True when the innermost channel bound exceeds NΔ_+/4."""
    return bool(pair.c_inner > order * delta_plus / 4)


@dataclass(frozen=True, eq=False)
class ReducedJsa:
    """JSA restricted to the grid points that can reach the channels at order N."""

    jsa: JointSpectralAmplitude
    indices: np.ndarray
    order: int
    band: tuple[float, float]
    full_size: int
    source_norm_sq: float = 1.0
    clipped: bool = field(default=False)

    @property
    def grid(self) -> FrequencyGrid:
        return self.jsa.grid_s

    @property
    def side_A(self) -> np.ndarray:
        """Positions (within the reduced grid) of negative offsets."""
        return np.nonzero(self.grid.points < 0)[0]

    @property
    def side_B(self) -> np.ndarray:
        return np.nonzero(self.grid.points >= 0)[0]

    def pair_block(self) -> np.ndarray:
        """Embedded kernel between Alice's and Bob's sides of the band."""
        return self.jsa.matrix[np.ix_(self.side_A, self.side_B)]

    def outside_norm_sq(self) -> float:
        """Squared norm of the source JSA not split between the two sides."""
        return max(0.0, self.source_norm_sq - 2 * float(np.linalg.norm(self.pair_block()) ** 2))


def _subgrid(grid: FrequencyGrid, idx: np.ndarray) -> FrequencyGrid:
    return FrequencyGrid(grid.points[idx], grid.weights[idx], grid.carrier)


def reduce_jsa(jsa: JointSpectralAmplitude, pair: ChannelPair, order: int = DEFAULT_ORDER) -> ReducedJsa:
    """Keep frequencies with c_inner - NΔ_+/2 <= |ω̄| <= c_outer + NΔ_+/2.

    Raises SpectrumError if a channel reaches beyond the JSA grid. The band
    is clipped to the grid when it extends past it (``clipped`` is set).
    """
    grid = jsa.grid_s
    if jsa.grid_i is not grid and not np.array_equal(jsa.grid_i.points, grid.points):
        raise ValueError("WDM reduction expects a single-grid (type-0) JSA")
    lo, hi = grid.points[0], grid.points[-1]
    tol = 1e-9 * (hi - lo)
    for a, b in (pair.bounds_A, pair.bounds_B):
        if a < lo - tol or b > hi + tol:
            raise SpectrumError(
                f"channel band [{a:.4g}, {b:.4g}] lies outside the JSA grid [{lo:.4g}, {hi:.4g}]"
            )
    half = order * jsa.delta_plus / 2
    band = (max(0.0, pair.c_inner - half), pair.c_outer + half)
    mag = np.abs(grid.points)
    keep = np.nonzero((mag >= band[0] - tol) & (mag <= band[1] + tol))[0]
    clipped = bool(-band[1] < lo or band[1] > hi)
    sub = _subgrid(grid, keep)
    kern = DiscretizedKernel(jsa.matrix[np.ix_(keep, keep)], sub, sub, weight_embedded=True)
    reduced = JointSpectralAmplitude(
        kern, jsa.delta_plus, jsa.process_type, float(np.linalg.norm(kern.matrix) ** 2)
    )
    return ReducedJsa(reduced, keep, order, band, len(grid), jsa.norm_sq, clipped)


def channel_modes(reduced: ReducedJsa, pair: ChannelPair, gain: float):
    """(U_A, σ, V_B) with U_A = T_A U and V_B = T_B V from the pair block ψ̄_AB = UΣV†.

    σ = 2CΣ. The columns of U_A and V_B are not orthonormal unless the
    channels are flat over the band.
    """
    sd = schmidt(reduced.pair_block(), gain, TYPE_0)
    pts = reduced.grid.points
    ta = pair.channel_A.amplitude(pts[reduced.side_A])
    tb = pair.channel_B.amplitude(pts[reduced.side_B])
    return ta[:, None] * sd.U, sd.sigma, tb[:, None] * sd.V


def post_wdm_covariance(
    reduced: ReducedJsa,
    pair: ChannelPair,
    gain: float,
    order: int | None = None,
    reordered: bool = True,
    efficiency: float = 1.0,
) -> RenormalizedCovariance:
    """Covariance of the light leaving Alice's and Bob's channels.

    ``reordered=True`` gives the two-party form on (a_A, a_B†) built from the
    pair block, valid only when no pair can reach a single channel.
    ``reordered=False`` applies the channel transmissions to the full
    single-mode (a, a†) series of the reduced JSA, with modes ordered as
    Alice's copy of the reduced grid followed by Bob's.
    ``efficiency`` is an extra flat power transmission on both sides.
    """
    order = reduced.order if order is None else order
    amp = np.sqrt(efficiency)
    if reordered:
        if not check_no_double_photon(pair, reduced.jsa.delta_plus, order):
            raise ChannelOverlapError(
                f"innermost channel bound {pair.c_inner:.4g} <= NΔ_+/4 = "
                f"{order * reduced.jsa.delta_plus / 4:.4g}; use reordered=False"
            )
        ua, sigma, vb = channel_modes(reduced, pair, gain)
        ua, vb = amp * ua, amp * vb
        cm = truncated_cosh_minus_one(sigma, order)
        sn = truncated_sinh(sigma, order)
        aa = 0.5 * (ua * cm) @ ua.conj().T
        ab = 0.5 * (ua * sn) @ vb.conj().T
        bb = 0.5 * (vb * cm) @ vb.conj().T
        ga = _subgrid(reduced.grid, reduced.side_A)
        gb = _subgrid(reduced.grid, reduced.side_B)
        return RenormalizedCovariance(aa, ab, ab.conj().T, bb, TYPE_0, "frequency", order, True, ga, gb)
    base = covariance_series(reduced.jsa.matrix, gain, TYPE_0, order=order, conjugate_pair=False)
    pts = reduced.grid.points
    ta = amp * pair.channel_A.amplitude(pts)
    tb = amp * pair.channel_B.amplitude(pts)
    E = np.vstack([np.diag(ta), np.diag(tb)])
    return RenormalizedCovariance(
        E @ base.aa @ E.T, E @ base.ab @ E.T, E @ base.ba @ E.T, E @ base.bb @ E.T,
        TYPE_0, "frequency", order, False,
    )


def click_probabilities(cov: RenormalizedCovariance) -> dict:
    """Singles and coincidence click probabilities of whole-channel detectors."""
    na, nb = cov.dims
    if cov.conjugate_pair:
        ones_a, ones_b = np.ones(na), np.ones(nb)
        za, zb = np.zeros(na), np.zeros(nb)
        p0a = vacuum_probability(cov, (ones_a, zb))
        p0b = vacuum_probability(cov, (za, ones_b))
        p0ab = vacuum_probability(cov, (ones_a, ones_b))
    else:
        n = na // 2
        ma = np.r_[np.ones(n), np.zeros(n)]
        mb = np.r_[np.zeros(n), np.ones(n)]
        p0a = vacuum_probability(cov, (ma, ma))
        p0b = vacuum_probability(cov, (mb, mb))
        p0ab = vacuum_probability(cov, (ma + mb, ma + mb))
    single_a = 1 - p0a
    single_b = 1 - p0b
    return {
        "single_A": single_a,
        "single_B": single_b,
        "coincidence": 1 - p0a - p0b + p0ab,
    }


@dataclass(frozen=True, eq=False)
class WdmSetup:
    """Source JSA and channel pair for the channel-offset study."""

    jsa: JointSpectralAmplitude
    pair: ChannelPair
    order: int = DEFAULT_ORDER
    efficiency: float = 1.0


@dataclass(frozen=True)
class CoincidenceCurve:
    offsets: np.ndarray
    coincidence: np.ndarray
    singles_product: np.ndarray
    normalized: np.ndarray
    gain: float
    mu: float

    @property
    def contrast(self) -> float:
        """Zero-offset coincidence over the product of singles at zero offset."""
        i0 = int(np.argmin(np.abs(self.offsets)))
        return float(self.coincidence[i0] / self.singles_product[i0])


def calibrate_gain(setup: WdmSetup, mu: float) -> float:
    """Gain C giving μ pairs per pump pulse for the unshifted channels."""
    reduced = reduce_jsa(setup.jsa, setup.pair, setup.order)
    sd = schmidt(reduced.pair_block(), 0.0, TYPE_0)
    return gain_for_mean_pairs(sd, mu, reduced.outside_norm_sq())


def coincidence_vs_offset(setup: WdmSetup, offsets, mu: float) -> CoincidenceCurve:
    """Coincidence probability as Alice's channel is detuned by each offset.

    The gain is calibrated once for the symmetric arrangement. ``normalized``
    divides by the zero-offset coincidence (the curve's reference point).
    """
    offsets = np.asarray(offsets, dtype=float)
    gain = calibrate_gain(setup, mu)
    coinc, prod = [], []
    for off in offsets:
        pair = setup.pair.with_offset_A(off) if off != 0 else setup.pair
        reduced = reduce_jsa(setup.jsa, pair, setup.order)
        reordered = check_no_double_photon(pair, setup.jsa.delta_plus, setup.order)
        cov = post_wdm_covariance(reduced, pair, gain, setup.order, reordered, setup.efficiency)
        p = click_probabilities(cov)
        coinc.append(p["coincidence"])
        prod.append(p["single_A"] * p["single_B"])
    coinc = np.array(coinc)
    zero = np.nonzero(offsets == 0)[0]
    if zero.size:
        ref = coinc[zero[0]]
    else:
        reduced = reduce_jsa(setup.jsa, setup.pair, setup.order)
        ref = click_probabilities(
            post_wdm_covariance(reduced, setup.pair, gain, setup.order, True, setup.efficiency)
        )["coincidence"]
    return CoincidenceCurve(offsets, coinc, np.array(prod), coinc / ref, gain, mu)
