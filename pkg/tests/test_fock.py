import numpy as np
import pytest

from tbqkd.covariance import covariance_exact, schmidt, vacuum_probability
from tbqkd.fock import (
    CutoffError,
    creation_operator,
    fock_oracle,
    occupation_basis,
    truncated_evolution_state,
)
from tbqkd.jsa import TYPE_0


def _kernel(seed, na=4, nb=4, symmetric=False):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(na, nb)) + 1j * rng.normal(size=(na, nb))
    if symmetric:
        m = m + m.T
    return m / np.linalg.norm(m)


def test_occupation_basis_counts():
    # C(n + m - 1, m - 1) patterns
    assert occupation_basis(3, 2).shape == (6, 3)
    assert occupation_basis(4, 3).shape == (20, 4)
    assert np.all(occupation_basis(4, 3).sum(axis=1) == 3)


def test_creation_operator_commutation_norm():
    # ‖a†|1⟩‖² = 2 for a single mode
    op = creation_operator(1, 1, 0)
    assert abs(op.toarray()[0, 0] - np.sqrt(2)) < 1e-15


def test_single_mode_thermal_statistics():
    sigma = 0.8
    st = fock_oracle(np.array([[1.0]]), sigma, cutoff=6, check_tail=False)
    p = st.sector_probabilities
    t = np.tanh(sigma / 2)
    np.testing.assert_allclose(p, t ** (2 * np.arange(7)) / np.cosh(sigma / 2) ** 2, atol=1e-14)


def test_single_mode_vacuum_matches_determinant():
    sigma = 2 * np.arcsinh(0.1)
    st = fock_oracle(np.array([[1.0]]), sigma, cutoff=6)
    cov = covariance_exact(schmidt(np.array([[1.0]]), sigma))
    assert abs(st.vacuum([0], [0]) - vacuum_probability(cov)) < 1e-10
    assert abs(st.vacuum([0], [0]) - 0.9900990099009901) < 1e-10


def test_low_gain_one_pair_ratio():
    psi = _kernel(1)
    for gain in (1e-2, 1e-3):
        p = fock_oracle(psi, gain, cutoff=3).sector_probabilities
        assert abs(p[1] / p[0] / (gain**2 / 4) - 1) < 2 * gain


def test_random_vacuum_probabilities_match_determinant():
    psi = _kernel(2)
    gain = 0.3
    st = fock_oracle(psi, gain, cutoff=6)
    cov = covariance_exact(schmidt(psi, gain))
    for a, b in [([0, 1], [2]), ([0, 1, 2, 3], [0, 1, 2, 3]), ([3], []), ([], [1, 3])]:
        ma = np.isin(np.arange(4), a).astype(float)
        mb = np.isin(np.arange(4), b).astype(float)
        assert abs(st.vacuum(a, b) - vacuum_probability(cov, (ma, mb))) < 1e-8


def test_type0_vacuum_matches_determinant():
    psi = _kernel(3, symmetric=True)
    gain = 0.2
    st = fock_oracle(psi, gain, TYPE_0, cutoff=6)
    cov = covariance_exact(schmidt(psi, gain, TYPE_0))
    for modes in ([0, 1, 2, 3], [0, 1], [2]):
        m = np.isin(np.arange(4), modes).astype(float)
        assert abs(st.vacuum(modes) - vacuum_probability(cov, (m, m))) < 1e-8


def test_disentangled_form_matches_evolution():
    psi = _kernel(4, 2, 2)
    gain = 0.3
    st = fock_oracle(psi, gain, cutoff=6)
    evolved = truncated_evolution_state(psi, gain, cutoff=10)
    for n in range(4):
        np.testing.assert_allclose(st.sectors[n], evolved[n], atol=1e-8)


def test_insufficient_cutoff_raises():
    with pytest.raises(CutoffError):
        fock_oracle(_kernel(5), 3.0, cutoff=2)


def test_oracle_size_caps():
    with pytest.raises(ValueError):
        fock_oracle(np.ones((13, 2)) / 5, 0.1)
    with pytest.raises(ValueError):
        fock_oracle(np.eye(2) / np.sqrt(2), 0.1, cutoff=7)
