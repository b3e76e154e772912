"""Random unitary momentum kicks with the GRW decoherence kernel.

At Poisson times a particle receives ``psi -> exp(i k X_k) psi`` with ``k``
drawn from a zero-mean Gaussian that does not depend on the state.  Averaging
the phase over ``k`` gives ``E[exp(i k d)] = exp(-d^2 var_k / 2)``.  With the
default ``"matched"`` variance ``var_k = 1/(4 sigma^2)`` this is
``exp(-d^2/(8 sigma^2))``, the GRW kernel, so both processes share one master
equation.  ``"strong"`` uses ``var_k = 1/sigma^2`` instead and leads to
``exp(-d^2/(2 sigma^2))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Hamiltonian, WaveFunction
from .errors import DomainError
from .grw import GrwParams, TrajectoryRecord, _along_axis, run_poisson_process

KICK_VARIANCE_MODES = ("matched", "strong")


@dataclass(frozen=True)
class KickParams(GrwParams):
    variance_mode: str = "matched"

    def __post_init__(self):
        super().__post_init__()
        if self.variance_mode not in KICK_VARIANCE_MODES:
            raise DomainError(
                f"variance_mode must be one of {KICK_VARIANCE_MODES}, got {self.variance_mode!r}"
            )


@dataclass(frozen=True)
class KickEvent:
    time: float
    particle_index: int
    k: float

    def to_dict(self) -> dict:
        return {"time": self.time, "index": self.particle_index, "k": self.k}


def kick_variance(sigma: float, mode: str = "matched") -> float:
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if mode == "matched":
        return 1.0 / (4.0 * sigma**2)
    if mode == "strong":
        return 1.0 / sigma**2
    raise DomainError(f"unknown kick variance mode {mode!r}")


def sample_kick(sigma: float, rng: np.random.Generator, mode: str = "matched") -> float:
    """Momentum transfer ``k`` (in units of hbar); independent of any state."""
    return float(np.sqrt(kick_variance(sigma, mode)) * rng.standard_normal())


def apply_kick(psi: WaveFunction, particle_index: int, k: float) -> WaveFunction:
    if not 0 <= particle_index < psi.n_particles:
        raise DomainError(f"particle_index {particle_index} out of range")
    phase = np.exp(1j * k * psi.grid.x)
    return WaveFunction(
        psi.grid, psi.amplitudes * _along_axis(phase, particle_index, psi.n_particles), psi.n_particles
    )


def kick_kernel(d, sigma: float, mode: str = "matched"):
    """Averaged phase factor ``E[exp(i k d)]`` over the kick distribution."""
    d = np.asarray(d, dtype=float)
    return np.exp(-0.5 * d**2 * kick_variance(sigma, mode))


def run_kick_trajectory(
    psi0: WaveFunction,
    H: Hamiltonian,
    params: KickParams,
    t_final: float,
    snapshot_times: Sequence[float] = (),
    seed: int = 0,
    dt_max: float | None = None,
) -> TrajectoryRecord:
    """Simulate one kick trajectory on the same Poisson clock as GRW."""
    if psi0.n_particles != params.n_particles:
        raise DomainError(
            f"state has {psi0.n_particles} particle(s), params expect {params.n_particles}"
        )
    sigma, mode = params.sigma, params.variance_mode

    def kick(psi, index, time, rng):
        k = sample_kick(sigma, rng, mode)
        return apply_kick(psi, index, k), KickEvent(time, index, k)

    return run_poisson_process(
        psi0,
        H,
        params.total_rate,
        psi0.n_particles,
        kick,
        t_final,
        snapshot_times,
        seed,
        dt_max,
        {"model": "kick", **params.to_dict()},
    )
