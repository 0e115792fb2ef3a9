"""Renormalized covariances of two-mode-squeezed pair sources and their
vacuum (Fredholm) determinants.

Two block layouts are used.

* ``conjugate_pair=True``: the two-party operator Γ̄ acting on (a_A, a_B†).
  The full covariance is Γ̄ ⊕ c.c., so a vacuum probability is
  ``1/|det(1 + XΓ̄)|`` with X = X_A ⊕ X_B*.
* ``conjugate_pair=False``: the single-mode (a, a†) form of a type-0 source
  over one frequency line, vacuum probability ``det(1 + XΓ)^(-1/2)`` with
  X = X_a ⊕ X_a*.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .grid import DiscretizedKernel, FrequencyGrid
from .jsa import TYPE_0, TYPE_II, JointSpectralAmplitude

# direct LU is used up to this matrix dimension, the trace series above it
DIRECT_DET_MAX_DIM = 4096


class DeterminantError(ArithmeticError):
    """Determinant of 1 + XΓ is not a positive real number."""


class SpectralRadiusError(ValueError):
    """Trace series requested where it does not converge."""


def squeezing_factor(process_type: str) -> float:
    """Ratio σ/(CΣ): 2 for type-0/I, 1 for type-II."""
    if process_type == TYPE_0:
        return 2.0
    if process_type == TYPE_II:
        return 1.0
    raise ValueError(f"unknown process type {process_type!r}")


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    """ψ = U diag(coefficients) V† on weight-embedded grids, plus the gain C."""

    U: np.ndarray
    coefficients: np.ndarray
    V: np.ndarray
    gain: float = 0.0
    process_type: str = TYPE_II
    grid_a: FrequencyGrid | None = None
    grid_b: FrequencyGrid | None = None

    @property
    def sigma(self) -> np.ndarray:
        return squeezing_factor(self.process_type) * self.gain * self.coefficients

    @property
    def rank(self) -> int:
        return self.coefficients.size

    def with_gain(self, gain: float) -> "SchmidtDecomposition":
        return replace(self, gain=float(gain))

    def matrix(self) -> np.ndarray:
        return (self.U * self.coefficients) @ self.V.conj().T


def schmidt(
    jsa: JointSpectralAmplitude | DiscretizedKernel | np.ndarray,
    gain: float = 0.0,
    process_type: str | None = None,
    tail_tol: float = 0.0,
) -> SchmidtDecomposition:
    """SVD of a weight-embedded JSA with coefficients in descending order.

    ``tail_tol`` drops trailing modes whose summed squared coefficients fall
    below that fraction of the total.
    """
    grid_a = grid_b = None
    if isinstance(jsa, JointSpectralAmplitude):
        process_type = jsa.process_type if process_type is None else process_type
        m, grid_a, grid_b = jsa.matrix, jsa.grid_s, jsa.grid_i
    elif isinstance(jsa, DiscretizedKernel):
        m, grid_a, grid_b = jsa.embedded().matrix, jsa.row_grid, jsa.col_grid
    else:
        m = np.asarray(jsa)
    process_type = TYPE_II if process_type is None else process_type
    if not np.all(np.isfinite(m)):
        raise ValueError("JSA kernel contains non-finite entries")
    U, s, Vh = np.linalg.svd(m, full_matrices=False)
    if tail_tol > 0 and s.size > 1:
        tail = np.cumsum((s**2)[::-1])[::-1]  # tail[k] = sum_{j>=k} s_j²
        keep = int(np.searchsorted(-tail, -tail_tol * tail[0], side="left"))
        keep = max(1, min(keep, s.size))
        U, s, Vh = U[:, :keep], s[:keep], Vh[:keep]
    return SchmidtDecomposition(U, s, Vh.conj().T, float(gain), process_type, grid_a, grid_b)


@dataclass(frozen=True, eq=False)
class RenormalizedCovariance:
    """Block operator Γ = [[Γ_aa, Γ_ab], [Γ_ba, Γ_bb]].

    ``truncation_order`` is None for the exact (all-order) construction.
    """

    aa: np.ndarray
    ab: np.ndarray
    ba: np.ndarray
    bb: np.ndarray
    process_type: str = TYPE_II
    basis: str = "frequency"
    truncation_order: int | None = None
    conjugate_pair: bool = True
    grid_a: object = None
    grid_b: object = None
    # displacement is zero for squeezed-vacuum sources; kept for completeness
    displacement: None = field(default=None, repr=False)

    @property
    def dims(self) -> tuple[int, int]:
        return self.aa.shape[0], self.bb.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.aa, self.ab], [self.ba, self.bb]])

    @property
    def blocks(self) -> tuple[tuple[DiscretizedKernel, DiscretizedKernel], tuple[DiscretizedKernel, DiscretizedKernel]]:
        ga, gb = self.grid_a, self.grid_b
        if ga is None or gb is None:
            raise ValueError("covariance carries no grids")
        mk = lambda m, r, c: DiscretizedKernel(m, r, c, weight_embedded=True, basis=self.basis)  # noqa: E731
        return ((mk(self.aa, ga, ga), mk(self.ab, ga, gb)), (mk(self.ba, gb, ga), mk(self.bb, gb, gb)))

    def hermiticity_error(self) -> float:
        m = self.matrix()
        return float(np.max(np.abs(m - m.conj().T)))

    def mean_photons(self) -> tuple[float, float]:
        """Mean photon numbers Tr Γ_aa and Tr Γ_bb of the two blocks."""
        return float(np.trace(self.aa).real), float(np.trace(self.bb).real)

    def __add__(self, other: "RenormalizedCovariance") -> "RenormalizedCovariance":
        if self.conjugate_pair != other.conjugate_pair or self.aa.shape != other.aa.shape:
            raise ValueError("incompatible covariances")
        return replace(
            self,
            aa=self.aa + other.aa,
            ab=self.ab + other.ab,
            ba=self.ba + other.ba,
            bb=self.bb + other.bb,
        )


def _blocks_from_schmidt(U, sigma, V, cosh_part, sinh_part, phase=1.0):
    c = cosh_part(sigma)
    s = sinh_part(sigma)
    aa = 0.5 * (U * c) @ U.conj().T
    ab = 0.5 * phase * (U * s) @ V.conj().T
    bb = 0.5 * (V * c) @ V.conj().T
    return aa, ab, ab.conj().T, bb


def truncated_cosh_minus_one(sigma: np.ndarray, order: int | None) -> np.ndarray:
    """Even part of Σ σⁿ/n! for 2 ≤ n ≤ order (cosh σ - 1 when order is None)."""
    if order is None:
        return np.cosh(sigma) - 1.0
    out = np.zeros_like(sigma, dtype=float)
    for n in range(2, order + 1, 2):
        out = out + sigma**n / math.factorial(n)
    return out


def truncated_sinh(sigma: np.ndarray, order: int | None) -> np.ndarray:
    """Odd part of Σ σⁿ/n! for 1 ≤ n ≤ order (sinh σ when order is None)."""
    if order is None:
        return np.sinh(sigma)
    out = np.zeros_like(sigma, dtype=float)
    for n in range(1, order + 1, 2):
        out = out + sigma**n / math.factorial(n)
    return out


def covariance_from_schmidt(
    sd: SchmidtDecomposition,
    order: int | None = None,
    phase: complex = 1.0,
    conjugate_pair: bool | None = None,
) -> RenormalizedCovariance:
    """Γ = ½[[U(c-1)U†, e^{iφ}U s V†], [h.c., V(c-1)V†]] with c, s the (truncated) cosh/sinh of σ."""
    if conjugate_pair is None:
        conjugate_pair = sd.process_type == TYPE_II
    aa, ab, ba, bb = _blocks_from_schmidt(
        sd.U,
        sd.sigma,
        sd.V,
        lambda x: truncated_cosh_minus_one(x, order),
        lambda x: truncated_sinh(x, order),
        phase,
    )
    return RenormalizedCovariance(
        aa, ab, ba, bb, sd.process_type, "frequency", order, conjugate_pair, sd.grid_a, sd.grid_b
    )


def covariance_exact(sd: SchmidtDecomposition, process_type: str | None = None) -> RenormalizedCovariance:
    """All-order renormalized covariance (γ - 1)/2 from a Schmidt decomposition.

    For type-0 the result is the single-mode (a, a†) form and requires a
    symmetric JSA on a single grid; for type-II it is the two-party Γ̄.
    """
    if process_type is not None and process_type != sd.process_type:
        sd = replace(sd, process_type=process_type)
    return covariance_from_schmidt(sd, None)


def iterated_products(psi: np.ndarray, n_max: int) -> list[np.ndarray]:
    """[ψ, ψψ†, ψψ†ψ, ...] up to ``n_max`` factors (index n-1 holds the n-fold product)."""
    out = [psi]
    for n in range(2, n_max + 1):
        prev = out[-1]
        out.append(prev @ psi.conj().T if n % 2 == 0 else prev @ psi)
    return out


def covariance_series(
    jsa: JointSpectralAmplitude | np.ndarray,
    gain: float,
    process_type: str | None = None,
    order: int = 5,
    conjugate_pair: bool | None = None,
) -> RenormalizedCovariance:
    """Truncated expansion Γ_N = Σ_{n=1}^{N} (2Z)ⁿ/(2 n!) via iterated kernels.

    With W = g[[0, ψ], [ψ†, 0]] (g = C for type-II on (a, b†), g = 2C for the
    type-0 (a, a†) form) odd powers fill the off-diagonal blocks with
    ψ(ψ†ψ)^k and even powers the diagonal blocks with (ψψ†)^k, (ψ†ψ)^k.
    """
    if order < 1:
        raise ValueError("series order must be >= 1")
    if isinstance(jsa, JointSpectralAmplitude):
        psi = jsa.matrix
        process_type = jsa.process_type if process_type is None else process_type
        ga, gb = jsa.grid_s, jsa.grid_i
    else:
        psi = np.asarray(jsa)
        ga = gb = None
    process_type = TYPE_II if process_type is None else process_type
    if conjugate_pair is None:
        conjugate_pair = process_type == TYPE_II
    g = squeezing_factor(process_type) * gain
    na, nb = psi.shape
    aa = np.zeros((na, na), complex)
    bb = np.zeros((nb, nb), complex)
    ab = np.zeros((na, nb), complex)
    prod_a = psi  # ψ(ψ†ψ)^k for odd n, (ψψ†)^k for even n
    gram_b = psi.conj().T @ psi
    cur_b = np.eye(nb)
    for n in range(1, order + 1):
        coef = g**n / (2.0 * math.factorial(n))
        if n % 2 == 1:
            if n > 1:
                prod_a = prod_a @ psi
            ab = ab + coef * prod_a
        else:
            prod_a = prod_a @ psi.conj().T
            cur_b = cur_b @ gram_b
            aa = aa + coef * prod_a
            bb = bb + coef * cur_b
    return RenormalizedCovariance(
        aa, ab, ab.conj().T, bb, process_type, "frequency", order, conjugate_pair, ga, gb
    )


# ---------------------------------------------------------------------------
# determinants


def _projection_matrix(cov: RenormalizedCovariance, projection) -> np.ndarray:
    """Assemble X = X_a ⊕ X_b* from a (X_a, X_b) pair of matrices or masks."""
    na, nb = cov.dims
    if isinstance(projection, np.ndarray) and projection.shape == (na + nb, na + nb):
        return projection
    xa, xb = projection

    def as_matrix(x, n):
        if x is None:
            return np.zeros((n, n))
        x = np.asarray(x)
        if x.ndim == 1:
            return np.diag(x.astype(complex))
        return x

    xa = as_matrix(xa, na)
    xb = as_matrix(xb, nb)
    out = np.zeros((na + nb, na + nb), complex)
    out[:na, :na] = xa
    out[na:, na:] = xb.conj()
    return out


def _det_exponent(conjugate_pair: bool) -> float:
    return 1.0 if conjugate_pair else 0.5


def log_det_direct(a: np.ndarray) -> complex:
    """log det(1 + a) by LU; raises if the determinant is not positive real."""
    m = np.eye(a.shape[0]) + a
    sign, logabs = np.linalg.slogdet(m)
    if logabs == -np.inf:
        raise DeterminantError("singular matrix 1 + XΓ")
    if abs(np.imag(sign)) > 1e-8 or np.real(sign) <= 0:
        cond = np.linalg.cond(m)
        raise DeterminantError(
            f"det(1 + XΓ) has phase {np.angle(sign):.3g} (condition number {cond:.3g})"
        )
    return logabs


def logdet_expansion(
    cov: RenormalizedCovariance | np.ndarray,
    projection=None,
    order: int = 12,
) -> float:
    """Truncated trace series log det(1 + XΓ) = Σ_{n≥1} (-1)^{n+1} Tr[(XΓ)ⁿ]/n.

    Order 2 keeps exactly Tr(XΓ) and Tr[(XΓ)²]. Raises SpectralRadiusError when
    the spectral radius of XΓ is not below one.
    """
    if isinstance(cov, RenormalizedCovariance):
        a = _projection_matrix(cov, projection) @ cov.matrix()
    else:
        a = np.asarray(cov) if projection is None else np.asarray(projection) @ np.asarray(cov)
    radius = np.max(np.abs(np.linalg.eigvals(a))) if a.size else 0.0
    if radius >= 1:
        raise SpectralRadiusError(
            f"spectral radius {radius:.3g} >= 1; use the direct determinant instead"
        )
    total = 0.0 + 0.0j
    power = np.eye(a.shape[0], dtype=complex)
    for n in range(1, order + 1):
        power = power @ a
        total += (-1) ** (n + 1) * np.trace(power) / n
    return float(total.real)


def vacuum_probability(
    cov: RenormalizedCovariance,
    projection=None,
    method: str = "auto",
    series_order: int | None = None,
) -> float:
    """Probability of no photon in the projected modes, |det(1 + XΓ)|^{-p}.

    ``projection`` is ``(X_a, X_b)`` (matrices, diagonal masks or None) or
    the full assembled X; None means the complete mode set. p = 1 for the
    two-party conjugate-pair layout and ½ for the single-mode form.
    """
    na, nb = cov.dims
    if projection is None:
        projection = (np.ones(na), np.ones(nb))
    x = _projection_matrix(cov, projection)
    a = x @ cov.matrix()
    p = _det_exponent(cov.conjugate_pair)
    if method == "auto":
        method = "direct" if a.shape[0] <= DIRECT_DET_MAX_DIM else "series"
    if method == "direct":
        logdet = log_det_direct(a)
    elif method == "series":
        logdet = logdet_expansion(a, None, series_order or _series_order(a))
    else:
        raise ValueError(f"unknown determinant method {method!r}")
    return float(np.exp(-p * logdet))


def _series_order(a: np.ndarray, tol: float = 1e-12) -> int:
    """Smallest order whose geometric remainder estimate ‖a‖ⁿ/(1-‖a‖) beats ``tol``."""
    nrm = np.linalg.norm(a, 2)
    if nrm >= 1:
        return 200
    n = 1
    while nrm ** (n + 1) / (1 - nrm) > tol and n < 200:
        n += 1
    return n


def low_rank_vacuum_probability(
    coupling: np.ndarray, gram: np.ndarray, exponent: float = 1.0
) -> float:
    """|det(1_k + Λ Q)|^{-p} for Γ = YΛY† and Q = Y†XY (Sylvester form)."""
    logdet = log_det_direct(coupling @ gram)
    return float(np.exp(-exponent * logdet))


# ---------------------------------------------------------------------------
# pump interferometer


def pump_split_coefficients(transmittivity: float) -> tuple[float, float]:
    """(K_s, K_l) = (T², R²)/sqrt(T⁴ + R⁴) for amplitude transmittivity T."""
    if not 0 <= transmittivity <= 1:
        raise ValueError("pump transmittivity must lie in [0, 1]")
    t2 = transmittivity**2
    r2 = 1.0 - t2
    nrm = math.sqrt(t2**2 + r2**2)
    return t2 / nrm, r2 / nrm


@dataclass(frozen=True, eq=False)
class PumpComponent:
    """One pump-path contribution: subnormalized Schmidt data, phase and delay."""

    schmidt: SchmidtDecomposition
    phase: float
    delay: float
    weight: float

    def covariance(self, order: int | None = None) -> RenormalizedCovariance:
        return covariance_from_schmidt(self.schmidt, order, np.exp(1j * self.phase))


@dataclass(frozen=True, eq=False)
class PumpSplitState:
    """Γ = Γ_s + Γ_l from the two halves of a split pump pulse."""

    short: PumpComponent
    long: PumpComponent

    @property
    def components(self) -> tuple[PumpComponent, PumpComponent]:
        return (self.short, self.long)

    @property
    def coefficients(self) -> tuple[float, float]:
        return self.short.weight, self.long.weight

    def covariance(self, order: int | None = None) -> RenormalizedCovariance:
        return self.short.covariance(order) + self.long.covariance(order)

    def mean_pairs(self) -> float:
        return sum(mean_pairs(c.schmidt) for c in self.components)


def split_pump(
    sd: SchmidtDecomposition,
    transmittivity: float,
    phases: tuple[float, float] = (0.0, 0.0),
    delays: tuple[float, float] = (0.0, 1.0),
    pulse_duration: float | None = None,
) -> PumpSplitState:
    """Apply the pump interferometer: ψ_z = K_z e^{iφ_z} e^{iω_+τ_z} ψ.

    The linear phase is placed on the Schmidt modes (frequency basis), the
    constant phase is kept separately for the pair block and σ_z = K_z σ.
    """
    if pulse_duration is not None and abs(delays[1] - delays[0]) <= pulse_duration:
        warnings.warn(
            "pump interferometer delay does not exceed the pulse duration; the two halves overlap",
            stacklevel=2,
        )
    ks = pump_split_coefficients(transmittivity)
    comps = []
    for k, phi, tau in zip(ks, phases, delays):
        U, V = sd.U, sd.V
        if tau != 0.0:
            if sd.grid_a is None or sd.grid_b is None:
                raise ValueError("delays need frequency grids on the decomposition")
            U = np.exp(1j * sd.grid_a.points * tau)[:, None] * U
            V = np.exp(-1j * sd.grid_b.points * tau)[:, None] * V
        sub = replace(sd, U=U, V=V, coefficients=k * sd.coefficients)
        comps.append(PumpComponent(sub, float(phi), float(tau), k))
    return PumpSplitState(comps[0], comps[1])


# ---------------------------------------------------------------------------
# mean pair number and gain calibration


def mean_pairs(sd: SchmidtDecomposition, outside_norm_sq: float = 0.0) -> float:
    """Mean number of generated pairs for this decomposition's gain.

    Type-II: Σ_k sinh²(σ_k/2). Type-0 in the two-party band form:
    Σ_k sinh²(σ_k/2) for pairs split across the bands, plus the low-gain
    contribution C² (outside_norm_sq)/2 of pairs outside the simulated band.
    """
    s = np.sinh(sd.sigma / 2) ** 2
    total = float(np.sum(s))
    if sd.process_type == TYPE_0:
        total += 0.5 * sd.gain**2 * outside_norm_sq
    return total


def gain_for_mean_pairs(
    sd_or_components,
    mu: float,
    outside_norm_sq: float = 0.0,
) -> float:
    """Solve μ = Σ_z Σ_k sinh²(K_z σ_k/2) (+ type-0 out-of-band term) for the gain C.

    ``sd_or_components`` is a SchmidtDecomposition of the normalized JSA, or
    a sequence of them (e.g. the pump-split components whose coefficients
    already carry K_z).
    """
    if mu < 0:
        raise ValueError("mean pair number must be nonnegative")
    if mu == 0:
        return 0.0
    comps = [sd_or_components] if isinstance(sd_or_components, SchmidtDecomposition) else list(sd_or_components)

    def f(c):
        val = sum(mean_pairs(replace(sd, gain=c)) for sd in comps)
        if comps[0].process_type == TYPE_0:
            # out-of-band pairs: the pump-split weights sum to one in square
            val += 0.5 * c**2 * outside_norm_sq
        return val - mu

    hi = 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise ValueError("mean pair number not reachable")
    return float(brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-13))


# ---------------------------------------------------------------------------
# photon-number statistics from the generating function


def generating_function(cov: RenormalizedCovariance, masks, w) -> complex:
    """G(w) = det(1 + WΓ)^(-1/2) on the full (mode ⊕ conjugate) space.

    ``masks`` lists one boolean mode mask per detector as (mask_a, mask_b)
    pairs; ``w`` holds one (possibly complex) weight per detector. Modes not
    covered by any detector get weight 0.
    """
    na, nb = cov.dims
    da = np.zeros(na, complex)
    db = np.zeros(nb, complex)
    for (ma, mb), wk in zip(masks, w):
        da[np.asarray(ma, bool)] += wk
        db[np.asarray(mb, bool)] += wk
    g = cov.matrix()
    d = np.concatenate([da, db])
    if cov.conjugate_pair:
        # Γ = Γ̄ ⊕ Γ̄*, same weights on both copies
        det1 = np.linalg.det(np.eye(na + nb) + d[:, None] * g)
        det2 = np.linalg.det(np.eye(na + nb) + d[:, None] * g.conj())
        return (det1 * det2) ** -0.5
    return np.linalg.det(np.eye(na + nb) + d[:, None] * g) ** -0.5


def photon_number_distribution(
    cov: RenormalizedCovariance, masks, n_max: int = 4, n_nodes: int = 64
) -> np.ndarray:
    """Joint photon-number distribution P(n_1, ..., n_D) for up to two detectors.

    Uses P(n) = Π_d (1/n_d!) (-∂_{w_d})^{n_d} G(w) at w = 1, i.e. the Taylor
    coefficients of G(1 - z), extracted with a trapezoidal contour integral on
    |z| = 1 (exponentially accurate for this analytic function).
    """
    n_det = len(masks)
    if n_det not in (1, 2):
        raise ValueError("photon-number statistics implemented for one or two detectors")
    theta = 2 * np.pi * np.arange(n_nodes) / n_nodes
    z = np.exp(1j * theta)
    if n_det == 1:
        vals = np.array([generating_function(cov, masks, [1 - zk]) for zk in z])
        coef = np.fft.fft(vals) / n_nodes
        return coef[: n_max + 1].real
    vals = np.empty((n_nodes, n_nodes), complex)
    for i, z1 in enumerate(z):
        for j, z2 in enumerate(z):
            vals[i, j] = generating_function(cov, masks, [1 - z1, 1 - z2])
    coef = np.fft.fft2(vals) / n_nodes**2
    return coef[: n_max + 1, : n_max + 1].real
