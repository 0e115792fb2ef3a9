"""Brute-force Fock-space expansion of small squeezed states.

Used only to cross-check the determinant pipeline. The state is built in the
grid-mode occupation basis from its disentangled form

    |ψ⟩ = N exp(Σ_ij T_ij a_i† b_j†) |0⟩,   T = U tanh(σ/2) V†,   N = Π_k 1/cosh(σ_k/2)

(type-II) or N exp(½ Σ_ij T_ij a_i† a_j†)|0⟩ with the Takagi factors of a
symmetric kernel (type-0). Each pair-number sector is stored as a dense
coefficient array over occupation patterns, so detection events can be
evaluated by direct enumeration of basis states.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .covariance import squeezing_factor
from .jsa import TYPE_0, TYPE_II

MAX_MODES = 12
MAX_CUTOFF = 6
TAIL_TOLERANCE = 1e-8


class CutoffError(RuntimeError):
    """Truncated Fock expansion misses more than the tolerated probability mass."""


@lru_cache(maxsize=None)
def occupation_basis(n_modes: int, n_photons: int) -> np.ndarray:
    """All occupation vectors of ``n_modes`` modes with ``n_photons`` photons, lexicographic."""
    if n_modes == 0:
        return np.zeros((1 if n_photons == 0 else 0, 0), dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(n_photons + n_modes - 1), n_modes - 1):
        prev = -1
        occ = []
        for b in bars:
            occ.append(b - prev - 1)
            prev = b
        occ.append(n_photons + n_modes - 1 - prev - 1)
        rows.append(occ)
    return np.array(rows, dtype=np.int64)


@lru_cache(maxsize=None)
def _index(n_modes: int, n_photons: int) -> dict:
    return {tuple(r): i for i, r in enumerate(occupation_basis(n_modes, n_photons))}


@lru_cache(maxsize=None)
def creation_operator(n_modes: int, n_photons: int, mode: int) -> sparse.csr_matrix:
    """Matrix of a†_mode from the n-photon to the (n+1)-photon sector."""
    src = occupation_basis(n_modes, n_photons)
    dst = _index(n_modes, n_photons + 1)
    rows, cols, vals = [], [], []
    for j, occ in enumerate(src):
        new = occ.copy()
        new[mode] += 1
        rows.append(dst[tuple(new)])
        cols.append(j)
        vals.append(math.sqrt(new[mode]))
    shape = (len(dst), src.shape[0])
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)


def _takagi(psi: np.ndarray):
    """ψ = W diag(s) Wᵀ for a complex symmetric ψ with distinct nonzero singular values."""
    U, s, Vh = np.linalg.svd(psi)
    # ψ symmetric -> V* = U D with D diagonal unitary (nondegenerate case)
    d = np.diag(U.conj().T @ Vh.T)
    if np.max(np.abs(np.abs(d) - 1)) > 1e-8:
        raise ValueError("Takagi factorization needs nondegenerate singular values")
    W = U * np.sqrt(d)
    return W, s


@dataclass
class FockState:
    """Pair-number sectors of a two-party (or single-party) squeezed state.

    For two parties ``sectors[n]`` is an array (dim_A(n), dim_B(n)); for a
    single party it is a vector over 2n-photon patterns.
    """

    sectors: list
    n_modes_a: int
    n_modes_b: int
    two_party: bool

    @property
    def sector_probabilities(self) -> np.ndarray:
        return np.array([float(np.sum(np.abs(c) ** 2)) for c in self.sectors])

    @property
    def tail_mass(self) -> float:
        return max(0.0, 1.0 - float(self.sector_probabilities.sum()))

    def _patterns(self, n):
        if self.two_party:
            return occupation_basis(self.n_modes_a, n), occupation_basis(self.n_modes_b, n)
        return occupation_basis(self.n_modes_a, 2 * n), None

    def probability(self, event) -> float:
        """Total probability of basis states for which ``event(occ_a, occ_b)`` is true.

        ``event`` receives integer occupation arrays of shape (n_states, modes)
        and must return a boolean array (2-D for two parties: rows A, cols B).
        """
        total = 0.0
        for n, c in enumerate(self.sectors):
            pa, pb = self._patterns(n)
            mask = event(pa, pb)
            total += float(np.sum(np.abs(c[mask]) ** 2))
        return total

    def vacuum(self, modes_a=(), modes_b=()) -> float:
        """Probability of no photon in the listed grid modes."""
        ma = np.zeros(self.n_modes_a, bool)
        ma[list(modes_a)] = True
        mb = np.zeros(self.n_modes_b, bool)
        if self.two_party:
            mb[list(modes_b)] = True

        def ev(pa, pb):
            ea = ~np.any(pa[:, ma] > 0, axis=1)
            if not self.two_party:
                return ea
            eb = ~np.any(pb[:, mb] > 0, axis=1)
            return ea[:, None] & eb[None, :]

        return self.probability(ev)

    def photon_number_distribution(self, modes_a=(), modes_b=(), n_max: int | None = None) -> np.ndarray:
        """P(k photons in the union of the listed modes) for k = 0..n_max."""
        ma = np.zeros(self.n_modes_a, bool)
        ma[list(modes_a)] = True
        mb = np.zeros(self.n_modes_b, bool)
        if self.two_party:
            mb[list(modes_b)] = True
        top = 2 * len(self.sectors) if n_max is None else n_max
        out = np.zeros(top + 1)
        for n, c in enumerate(self.sectors):
            pa, pb = self._patterns(n)
            ka = pa[:, ma].sum(axis=1)
            k = ka[:, None] + pb[:, mb].sum(axis=1)[None, :] if self.two_party else ka
            w = np.abs(c) ** 2
            for val in np.unique(k):
                if val <= top:
                    out[val] += float(np.sum(w[k == val]))
        return out


def fock_oracle(
    psi: np.ndarray,
    gain: float,
    process_type: str = TYPE_II,
    cutoff: int = 4,
    check_tail: bool = True,
) -> FockState:
    """Fock expansion of the squeezed state generated by the weight-embedded kernel ``psi``.

    Raises:
        ValueError: grids larger than the oracle caps.
        CutoffError: when the probability outside the retained pair
            sectors exceeds 1e-8.
    """
    psi = np.asarray(psi, dtype=complex)
    na, nb = psi.shape
    if na > MAX_MODES or nb > MAX_MODES:
        raise ValueError(f"oracle grid capped at {MAX_MODES}x{MAX_MODES}")
    if cutoff > MAX_CUTOFF or cutoff < 0:
        raise ValueError(f"pair-number cutoff must lie in [0, {MAX_CUTOFF}]")
    g = squeezing_factor(process_type) * gain

    if process_type == TYPE_II:
        U, s, Vh = np.linalg.svd(psi, full_matrices=False)
        r = g * s / 2
        norm = float(np.prod(1.0 / np.cosh(r)))
        T = (U * np.tanh(r)) @ Vh
        sectors = [np.array([[norm]], dtype=complex)]
        ops_a = [[creation_operator(na, n, i) for i in range(na)] for n in range(cutoff)]
        ops_b = [[creation_operator(nb, n, j) for j in range(nb)] for n in range(cutoff)]
        for n in range(cutoff):
            c = sectors[-1]
            # C_{n+1} = Σ_ij T_ij a_i† C_n b_j†ᵀ / (n+1)
            left = [ops_a[n][i] @ c for i in range(na)]  # (dim_{n+1}, dim_n) dense
            nxt = np.zeros((left[0].shape[0], ops_b[n][0].shape[0]), dtype=complex)
            for j in range(nb):
                acc = sum(T[i, j] * left[i] for i in range(na) if T[i, j] != 0)
                nxt += np.asarray(ops_b[n][j] @ np.asarray(acc).T).T
            sectors.append(nxt / (n + 1))
        state = FockState(sectors, na, nb, True)
    elif process_type == TYPE_0:
        if na != nb or not np.allclose(psi, psi.T, atol=1e-12):
            raise ValueError("type-0 oracle needs a symmetric single-grid kernel")
        W, s = _takagi(psi)
        r = g * s / 2
        norm = float(np.prod(1.0 / np.sqrt(np.cosh(r))))
        T = (W * np.tanh(r)) @ W.T
        sectors = [np.array([norm], dtype=complex)]
        for n in range(cutoff):
            c = sectors[-1]
            nxt = None
            for i in range(na):
                ci = creation_operator(na, 2 * n, i) @ c
                for j in range(na):
                    if T[i, j] == 0:
                        continue
                    term = T[i, j] * (creation_operator(na, 2 * n + 1, j) @ ci)
                    nxt = term if nxt is None else nxt + term
            # ½ a†Ta† applied, divided by (n+1) from the exponential series
            sectors.append(0.5 * nxt / (n + 1))
        state = FockState(sectors, na, na, False)
    else:
        raise ValueError(f"unknown process type {process_type!r}")

    if check_tail and state.tail_mass > TAIL_TOLERANCE:
        raise CutoffError(
            f"pair cutoff {cutoff} leaves tail mass {state.tail_mass:.3g} > {TAIL_TOLERANCE:g}"
        )
    return state


def fock_oracle_jsa(jsa, gain: float, cutoff: int = 4, check_tail: bool = True) -> FockState:
    """:func:`fock_oracle` applied to a JointSpectralAmplitude."""
    return fock_oracle(jsa.matrix, gain, jsa.process_type, cutoff, check_tail)


def truncated_evolution_state(psi: np.ndarray, gain: float, cutoff: int) -> np.ndarray:
    """Type-II state from exp(H)|0⟩ on the truncated space, H = Σ G_ij a_i†b_j† - h.c.

    Independent of the disentangled form used by :func:`fock_oracle`; returns the
    concatenated sector vectors (for tiny sizes only).
    """
    from scipy.sparse.linalg import expm_multiply

    psi = np.asarray(psi, dtype=complex)
    na, nb = psi.shape
    G = 0.5 * gain * psi
    dims = [occupation_basis(na, n).shape[0] * occupation_basis(nb, n).shape[0] for n in range(cutoff + 1)]
    offs = np.concatenate([[0], np.cumsum(dims)])
    blocks = {}
    for n in range(cutoff):
        raise_op = None
        for i in range(na):
            for j in range(nb):
                if G[i, j] == 0:
                    continue
                term = G[i, j] * sparse.kron(creation_operator(na, n, i), creation_operator(nb, n, j))
                raise_op = term if raise_op is None else raise_op + term
        blocks[n] = raise_op
    H = sparse.lil_matrix((offs[-1], offs[-1]), dtype=complex)
    for n, op in blocks.items():
        op = op.tocoo()
        H[offs[n + 1] + op.row, offs[n] + op.col] = op.data
        H[offs[n] + op.col, offs[n + 1] + op.row] = -op.data.conj()
    v0 = np.zeros(offs[-1], complex)
    v0[0] = 1.0
    out = expm_multiply(H.tocsr(), v0)
    return [out[offs[n]:offs[n + 1]].reshape(
        occupation_basis(na, n).shape[0], occupation_basis(nb, n).shape[0]) for n in range(cutoff + 1)]
