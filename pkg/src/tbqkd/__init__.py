"""Time- and frequency-resolved simulation of entanglement-based time-bin QKD links."""

from .grid import (
    DiscretizedKernel,
    FrequencyGrid,
    GridError,
    TimeGrid,
    embed_weights,
    inverse_symplectic_fourier,
    make_grid,
    make_time_grid,
    make_time_grid_step,
    symplectic_fourier,
)
from .jsa import (
    TYPE_0,
    TYPE_II,
    ChannelTransmission,
    JointSpectralAmplitude,
    PhaseMatching,
    PumpAmplitude,
    assemble_jsa,
    load_channel,
    phase_matching_from_fit,
    symmetrize_spectrum,
)
from .covariance import (
    RenormalizedCovariance,
    SchmidtDecomposition,
    covariance_exact,
    covariance_series,
    logdet_expansion,
    schmidt,
    split_pump,
    vacuum_probability,
)
from .pipeline import DetectionSystem, TimeLattice, build_time_state
from .detection import DetectorModel, EventModel, TimeBinning
from .scenario import (
    ConfigError,
    NumericalError,
    load_config,
    normalize_config,
    run_fit_jsa,
    run_simulate,
    run_sweep,
)
from .oracles import run_oracle_check

__version__ = "0.1.0"
