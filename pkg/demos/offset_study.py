"""Coincidences between detuned WDM channels.

A broadband type-0 spectrum is cut by two flat-top channels placed
symmetrically around the degenerate frequency. Detuning one channel breaks
the energy-conservation match: coincidences fall from the correlated peak to
the accidental level given by the product of singles. Multi-pair emission
at higher mean pair numbers raises that floor, so the peak contrast drops.

Dimensionless units (channel width 5, pump bandwidth 1).

    python3 demos/offset_study.py
"""

import numpy as np

from tbqkd.grid import make_grid
from tbqkd.jsa import TYPE_0, assemble_jsa, cosine_pump, flat_top_channel, gaussian_phase_matching
from tbqkd.wdm import ChannelPair, WdmSetup, coincidence_vs_offset


def main():
    grid = make_grid(0.0, 24.0, 193)
    jsa = assemble_jsa(cosine_pump(1.0), gaussian_phase_matching(50.0), grid, process_type=TYPE_0)
    setup = WdmSetup(jsa, ChannelPair(flat_top_channel(-10.0, 5.0), flat_top_channel(10.0, 5.0)))
    offsets = np.linspace(-7.0, 7.0, 15)

    for mu in (0.02, 0.1, 0.2):
        curve = coincidence_vs_offset(setup, offsets, mu)
        print(f"mu = {mu:<4}  contrast {curve.contrast:7.1f}")
        print("   offset  normalized coincidence")
        for off, val in zip(offsets, curve.normalized):
            print(f"   {off:6.2f}  {val:.4f}  {'#' * int(40 * val)}")


if __name__ == "__main__":
    main()
