"""Fiber links, receiver interferometers and their reduced transformation.

Each receiver is an unbalanced Michelson interferometer (input beam splitter,
short and long arm, output beam splitter = adjoint of the input one) with a
virtual mode-mismatch beam splitter in each arm. Seen from one input photon
mode, the whole receiver collapses to six output rows (two interfering
modes, four mismatched modes), each a sum over the two arms with a
frequency-flat coefficient, a constant phase and a delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import RenormalizedCovariance
from .jsa import JointSpectralAmplitude

PATHS = ("s", "l")
DETECTORS = (0, 1)
# standard single-mode fibre near 1550 nm, s²/km
SMF_BETA2 = -21.7e-27


@dataclass(frozen=True)
class FiberLink:
    """Fiber of ``length_km`` with flat loss and group-velocity dispersion ``beta2`` (s²/km)."""

    length_km: float = 0.0
    alpha_db_per_km: float = 0.2
    beta2: float = SMF_BETA2

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError("fiber length must be nonnegative")
        if self.alpha_db_per_km < 0:
            raise ValueError("loss coefficient must be nonnegative")

    @property
    def loss_length_km(self) -> float:
        """L₀ with power transmission exp(-L/L₀)."""
        if self.alpha_db_per_km == 0:
            return math.inf
        return 1.0 / math.log(10 ** (0.1 * self.alpha_db_per_km))

    @property
    def amplitude_transmittivity(self) -> float:
        return math.exp(-self.length_km / (2 * self.loss_length_km))

    @property
    def group_delay_dispersion(self) -> float:
        """β₂L in s²."""
        return self.beta2 * self.length_km

    def dispersion_phase(self, omega) -> np.ndarray:
        return 0.5 * self.group_delay_dispersion * np.asarray(omega, dtype=float) ** 2


@dataclass(frozen=True)
class ReceiverInterferometer:
    """Unbalanced Michelson receiver.

    ``efficiency[x][D]`` is the frequency-flat amplitude transmittivity from
    arm x (0 = short, 1 = long) to detector D, including detector efficiency.
    """

    transmittivity: float = 2**-0.5
    phases: tuple[float, float] = (0.0, 0.0)
    delays: tuple[float, float] = (0.0, 0.0)
    efficiency: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 1.0), (1.0, 1.0))
    mode_match: float = 1.0

    def __post_init__(self):
        if not 0 <= self.transmittivity <= 1:
            raise ValueError("beam-splitter transmittivity must lie in [0, 1]")
        if not 0 <= self.mode_match <= 1:
            raise ValueError("mode-match amplitude must lie in [0, 1]")
        eff = np.asarray(self.efficiency, dtype=float)
        if eff.shape != (2, 2) or np.any(eff < 0) or np.any(eff > 1):
            raise ValueError("efficiency must be a 2x2 table of amplitudes in [0, 1]")

    @property
    def reflectivity(self) -> float:
        return math.sqrt(max(0.0, 1 - self.transmittivity**2))

    @property
    def mismatch(self) -> float:
        return math.sqrt(max(0.0, 1 - self.mode_match**2))

    @property
    def delay_difference(self) -> float:
        return self.delays[1] - self.delays[0]

    def with_phase_offset(self, dphi: float) -> "ReceiverInterferometer":
        """Shift the long-arm phase by ``dphi``."""
        return replace(self, phases=(self.phases[0], self.phases[1] + dphi))


@dataclass(frozen=True)
class OutputRow:
    """One output mode: coefficients per arm (constant phase included) feeding ``detector``."""

    coefficients: np.ndarray  # shape (2,), complex, index = arm
    detector: int
    interfering: bool


@dataclass(frozen=True, eq=False)
class PartyTransformation:
    rows: tuple[OutputRow, ...]
    delays: tuple[float, float]

    def coupling(self, detector: int) -> np.ndarray:
        """K[x, y] = Σ_r conj(a_rx) a_ry over the rows reaching ``detector``."""
        k = np.zeros((2, 2), dtype=complex)
        for r in self.rows:
            if r.detector == detector:
                k += np.outer(r.coefficients.conj(), r.coefficients)
        return k

    def incoherent_power(self) -> float:
        return float(sum(np.sum(np.abs(r.coefficients) ** 2) for r in self.rows))

    def coherent_power(self, relative_phase: float) -> float:
        """Output power for equal arm delays and an extra relative arm phase."""
        v = np.array([1.0, np.exp(1j * relative_phase)])
        return float(sum(abs(r.coefficients @ v) ** 2 for r in self.rows))


@dataclass(frozen=True, eq=False)
class ReducedTransformation:
    """Six output rows for each party (A uses them as is; B enters conjugated)."""

    A: PartyTransformation
    B: PartyTransformation

    def party(self, name: str) -> PartyTransformation:
        return {"A": self.A, "B": self.B}[name]


def party_transformation(rx: ReceiverInterferometer, loss: float = 1.0) -> PartyTransformation:
    """Six-row reduced transformation of one receiver with an extra amplitude ``loss``."""
    T, R = rx.transmittivity, rx.reflectivity
    xi, xib = rx.mode_match, rx.mismatch
    eta = np.asarray(rx.efficiency, dtype=float) * loss
    ph = np.exp(1j * np.asarray(rx.phases, dtype=float))
    rows = (
        OutputRow(np.array([eta[0, 0] * xi * T**2, eta[1, 0] * xi * R**2]) * ph, 0, True),
        OutputRow(np.array([eta[0, 1] * xi * T * R, -eta[1, 1] * xi * T * R]) * ph, 1, True),
        OutputRow(np.array([eta[0, 0] * xib * T**2, 0.0]) * ph, 0, False),
        OutputRow(np.array([0.0, eta[1, 0] * xib * R**2]) * ph, 0, False),
        OutputRow(np.array([eta[0, 1] * xib * T * R, 0.0]) * ph, 1, False),
        OutputRow(np.array([0.0, -eta[1, 1] * xib * T * R]) * ph, 1, False),
    )
    return PartyTransformation(rows, tuple(float(d) for d in rx.delays))


def build_reduced_transformation(
    rx_A: ReceiverInterferometer,
    rx_B: ReceiverInterferometer,
    losses: tuple[float, float] = (1.0, 1.0),
) -> ReducedTransformation:
    """Reduced transformation for both parties; ``losses`` are extra amplitude factors (e.g. fibers)."""
    out = ReducedTransformation(party_transformation(rx_A, losses[0]), party_transformation(rx_B, losses[1]))
    for p in (out.A, out.B):
        if p.incoherent_power() > 1 + 1e-12:
            raise ValueError("receiver transformation is not passive")
    return out


def discrete_network_rows(rx: ReceiverInterferometer, loss: float = 1.0) -> np.ndarray:
    """The same six rows from explicit discrete-mode matrices, arm losses separable.

    Modes: 0 input, 1 vacuum port; arms (s, l) after the input splitter; each
    arm splits into an interfering and a mismatched copy; three families
    (interfering, short-mismatch, long-mismatch) then pass the output
    splitter. Only valid when ``efficiency[x][D]`` factorizes as arm × detector.
    Returns an array (6, 2) of coefficients per arm.
    """
    T, R = rx.transmittivity, rx.reflectivity
    B = np.array([[T, -R], [R, T]])  # (in, vac) -> (s, l)
    eff = np.asarray(rx.efficiency, dtype=float)
    arm = eff[:, 0] / eff[0, 0] if eff[0, 0] else np.ones(2)
    det = eff[0, :]
    if not np.allclose(np.outer(arm, det), eff):
        raise ValueError("discrete network needs separable efficiencies")
    ph = np.exp(1j * np.asarray(rx.phases, dtype=float))
    arms = B @ np.array([1.0, 0.0])  # amplitudes in s, l
    out = np.zeros((6, 2), dtype=complex)
    xi, xib = rx.mode_match, rx.mismatch
    # each family is a 2-vector over (s-port, l-port); keep arm contributions separate
    families = {
        "int": (xi, xi),
        "mm_s": (xib, 0.0),
        "mm_l": (0.0, xib),
    }
    Bdag = B.conj().T  # (s, l) -> (D0, D1)
    row = {("int", 0): 0, ("int", 1): 1, ("mm_s", 0): 2, ("mm_l", 0): 3, ("mm_s", 1): 4, ("mm_l", 1): 5}
    for fam, (cs, cl) in families.items():
        for x, c in enumerate((cs, cl)):
            vec = np.zeros(2, dtype=complex)
            vec[x] = arms[x] * c * arm[x] * ph[x] * loss
            o = Bdag @ vec
            for d in DETECTORS:
                out[row[(fam, d)], x] += o[d] * det[d]
    return out


@dataclass(frozen=True, eq=False)
class PathProjectionKernel:
    """s̃†P s̃ for one party, detector and time window.

    term (x, y) carries ``coupling[x, y]`` (constant phases included), the
    window evaluated at t + τ_x and a relative shift τ_y - τ_x.
    """

    coupling: np.ndarray
    delays: tuple[float, float]
    detector: int
    interval: tuple[float, float]

    def terms(self):
        for x in range(2):
            for y in range(2):
                if self.coupling[x, y] != 0:
                    yield x, y, self.coupling[x, y], self.delays[y] - self.delays[x]

    def dense(self, times: np.ndarray, dt: float) -> np.ndarray:
        """Dense matrix on a uniform time lattice (shifts rounded to samples)."""
        n = times.size
        out = np.zeros((n, n), dtype=complex)
        lo, hi = self.interval
        for x, y, c, _ in self.terms():
            sx = int(round(self.delays[x] / dt))
            sy = int(round(self.delays[y] / dt))
            for i in range(n):
                j = i + sx - sy
                if 0 <= j < n and lo <= times[i] + self.delays[x] < hi:
                    out[i, j] += c
        return out


def path_projection_kernel(
    rt: ReducedTransformation, party: str, detector: int, interval: tuple[float, float]
) -> PathProjectionKernel:
    p = rt.party(party)
    return PathProjectionKernel(p.coupling(detector), p.delays, detector, tuple(interval))


def apply_dispersion(obj, link_A: FiberLink, link_B: FiberLink):
    """Multiply by exp(i(β₂/2)L_A ω_A² + i(β₂/2)L_B ω_B²) in the frequency basis.

    Accepts a JointSpectralAmplitude (physical pair kernel) or a two-party
    RenormalizedCovariance on (a_A, a_B†).
    """
    if isinstance(obj, JointSpectralAmplitude):
        pa = np.exp(1j * link_A.dispersion_phase(obj.grid_s.points))
        pb = np.exp(1j * link_B.dispersion_phase(obj.grid_i.points))
        return obj.with_matrix(pa[:, None] * obj.matrix * pb[None, :])
    if isinstance(obj, RenormalizedCovariance):
        if obj.grid_a is None or obj.grid_b is None:
            raise ValueError("covariance needs frequency grids for dispersion")
        if obj.basis != "frequency":
            raise ValueError("dispersion is applied in the frequency basis")
        da = np.exp(1j * link_A.dispersion_phase(obj.grid_a.points))
        db = np.exp(1j * link_B.dispersion_phase(obj.grid_b.points))
        aa = da[:, None] * obj.aa * da.conj()[None, :]
        ab = da[:, None] * obj.ab * db[None, :]
        bb = db.conj()[:, None] * obj.bb * db[None, :]
        return replace(obj, aa=aa, ab=ab, ba=ab.conj().T, bb=bb)
    raise TypeError(f"cannot apply dispersion to {type(obj).__name__}")
