"""Spontaneous-collapse dynamics on position grids.

GRW jumps, random unitary kicks and CSL monitoring are simulated as
stochastic pure-state trajectories and compared with the master equations
their ensembles are meant to reproduce.
"""

from .core import (
    DensityMatrix,
    Hamiltonian,
    SpatialGrid,
    WaveFunction,
    cat_state,
    energy,
    evolve_unitary,
    fidelity,
    gaussian_packet,
    product_state,
    propagate_unitary,
    pure_density,
    spatial_entropy,
    trace_distance,
)
from .csl import CslParams, generate_signal, run_csl_batch, run_csl_trajectory, sse_step
from .ensemble import (
    EnsembleReport,
    average_ensemble,
    compare_to_master,
    fit_decay_rate,
    indistinguishability_test,
    report_from_amplitudes,
)
from .errors import (
    BoundaryWarning,
    CollapseSimError,
    ConfigError,
    DomainError,
    InvariantError,
    NumericalCollapseError,
    ResolutionError,
    StepSizeError,
    TrajectoryError,
)
from .grw import GrwParams, apply_jump, run_grw_trajectory, sample_outcome
from .kick import KickParams, apply_kick, kick_kernel, run_kick_trajectory
from .master import (
    DecoherenceKernel,
    csl_kernel,
    estimate_magnitudes,
    evolve_com_master,
    evolve_master,
    evolve_master_snapshots,
    grw_kernel,
    matched_csl_gamma,
)
from .rng import derive_stream

__version__ = "0.1.0"
