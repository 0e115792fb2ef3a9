import functools
import warnings

import numpy as np
import pytest

from tbqkd.covariance import gain_for_mean_pairs, schmidt, split_pump
from tbqkd.grid import make_grid
from tbqkd.jsa import TYPE_II, assemble_jsa, gaussian_phase_matching, gaussian_pump
from tbqkd.optics import ReceiverInterferometer, build_reduced_transformation
from tbqkd.pipeline import TimeLattice

# toy time-bin instance in dimensionless units: bin spacing 2, pulses ~0.25 wide
BIN = 2.0
DT = 0.125
BINS = {"e": (-1.0, 1.0), "c": (1.0, 3.0), "l": (3.0, 5.0)}


@functools.lru_cache(maxsize=None)
def toy_schmidt(n=161, pm_width=8.0, pump_fwhm=0.25):
    grid = make_grid(0.0, 24.0, n)
    pump = gaussian_pump(pump_fwhm, grid=make_grid(0.0, 60.0, 1201))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jsa = assemble_jsa(pump, gaussian_phase_matching(pm_width), grid, process_type=TYPE_II)
    sd = schmidt(jsa, 1.0, TYPE_II, tail_tol=1e-12)
    return sd


def toy_split(sd, mu, phase=0.0):
    base = split_pump(sd, 2**-0.5, (0.0, phase), (0.0, BIN))
    gain = gain_for_mean_pairs([c.schmidt for c in base.components], mu)
    sd = sd.with_gain(gain)
    return sd, split_pump(sd, 2**-0.5, (0.0, phase), (0.0, BIN))


def toy_lattice(n=160):
    return TimeLattice(-6.0 - DT * (max(0, n - 160) // 2), DT, n)


def receivers(phi_A=0.0, phi_B=0.0, **kw):
    a = ReceiverInterferometer(delays=(0.0, BIN), phases=(0.0, phi_A), **kw)
    b = ReceiverInterferometer(delays=(0.0, BIN), phases=(0.0, phi_B), **kw)
    return build_reduced_transformation(a, b)


@pytest.fixture(scope="session")
def toy_sd():
    return toy_schmidt()


# pass/fail lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
