"""GRW selective process: Poisson-timed unsharp position measurements.

Between events the state follows the Schrödinger equation.  At an event a
particle ``k`` is picked uniformly, an outcome ``x`` is drawn from

    p(x) = || sqrt(G(x - X_k)) psi ||^2

and the state is replaced by the normalized ``sqrt(G(x - X_k)) psi``, where
``G`` is a normalized Gaussian of standard deviation ``sigma``.

In rigid-body mode the simulated degree of freedom is the centre of mass of
``com_N`` constituents, each measured at rate ``lambda_rate``; the c.o.m. is
then measured at rate ``com_N * lambda_rate`` with the same ``sigma``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    Hamiltonian,
    SpatialGrid,
    WaveFunction,
    check_boundary,
    evolve_unitary,
    max_stable_dt,
)
from .errors import DomainError, NumericalCollapseError, ResolutionError
from .rng import CLOCK, MARKS, substream


@dataclass(frozen=True)
class GrwParams:
    lambda_rate: float
    sigma: float
    n_particles: int = 1
    com_rigid: bool = False
    com_N: int = 1

    def __post_init__(self):
        if self.lambda_rate < 0:
            raise DomainError(f"lambda_rate must be >= 0, got {self.lambda_rate}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.n_particles not in (1, 2):
            raise DomainError(f"n_particles must be 1 or 2, got {self.n_particles}")
        if self.com_N < 1 or int(self.com_N) != self.com_N:
            raise DomainError(f"com_N must be a positive integer, got {self.com_N}")
        if self.com_rigid and self.n_particles != 1:
            raise DomainError("rigid c.o.m. mode simulates a single degree of freedom")

    @property
    def total_rate(self) -> float:
        """Rate of events summed over all simulated degrees of freedom."""
        if self.com_rigid:
            return self.com_N * self.lambda_rate
        return self.n_particles * self.lambda_rate

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    particle_index: int
    outcome: float

    def to_dict(self) -> dict:
        return {"time": self.time, "index": self.particle_index, "outcome": self.outcome}


@dataclass
class TrajectoryRecord:
    """Event log and optional state snapshots of one realization."""

    params: dict
    seed: int
    events: list = field(default_factory=list)
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshots: list = field(default_factory=list)
    signal: object = None

    @property
    def final_state(self) -> WaveFunction:
        return self.snapshots[-1]

    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])


def state_digest(psi: WaveFunction) -> str:
    """Short content hash identifying an initial state in reports."""
    h = hashlib.sha256(np.ascontiguousarray(psi.amplitudes).tobytes())
    h.update(repr(psi.grid.to_dict()).encode())
    return h.hexdigest()[:16]


def gaussian_effect(grid: SpatialGrid, outcome: float, sigma: float) -> np.ndarray:
    """Square root of the Gaussian effect, ``sqrt(G(x_j - outcome))``."""
    if sigma < 2 * grid.dx:
        raise ResolutionError(f"sigma {sigma:g} is below the grid resolution 2*dx = {2 * grid.dx:g}")
    return (2 * np.pi * sigma**2) ** -0.25 * np.exp(-((grid.x - outcome) ** 2) / (4 * sigma**2))


def sample_outcome(
    psi: WaveFunction, particle_index: int, sigma: float, rng: np.random.Generator
) -> float:
    """Draw a measurement outcome for particle ``particle_index``.

    The outcome density is the particle's marginal position density convolved
    with ``G``, so a grid position is drawn from the marginal and then blurred
    by ``Normal(0, sigma**2)``.
    """
    grid = psi.grid
    cdf = np.cumsum(psi.marginal_pdf(particle_index))
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    j = min(j, grid.n_points - 1)
    return float(grid.x[j] + sigma * rng.standard_normal())


def _along_axis(vector: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = -1
    return vector.reshape(shape)


def apply_jump(psi: WaveFunction, particle_index: int, outcome: float, sigma: float) -> WaveFunction:
    """Collapse ``psi`` with the effect centred on ``outcome`` and renormalize."""
    if not 0 <= particle_index < psi.n_particles:
        raise DomainError(f"particle_index {particle_index} out of range")
    effect = gaussian_effect(psi.grid, outcome, sigma)
    amps = psi.amplitudes * _along_axis(effect, particle_index, psi.n_particles)
    norm = np.sqrt(np.sum(np.abs(amps) ** 2) * psi.volume_element)
    if not norm > 1e-12:
        raise NumericalCollapseError(
            f"outcome {outcome:g} has negligible probability (norm {norm:.2e})"
        )
    return WaveFunction(psi.grid, amps / norm, psi.n_particles)


def next_event_time(total_rate: float, rng: np.random.Generator) -> float:
    """Waiting time to the next event of a Poisson process."""
    if not total_rate > 0:
        raise DomainError(f"event rate must be positive, got {total_rate}")
    return float(rng.exponential(1.0 / total_rate))


def _snapshot_grid(snapshot_times: Sequence[float], t_final: float) -> np.ndarray:
    times = np.asarray(snapshot_times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > t_final):
        raise DomainError("snapshot_times must be sorted and lie in [0, t_final]")
    return times


def run_poisson_process(
    psi0: WaveFunction,
    H: Hamiltonian,
    total_rate: float,
    n_channels: int,
    apply_event: Callable,
    t_final: float,
    snapshot_times: Sequence[float],
    seed: int,
    dt_max: float | None,
    params: dict,
) -> TrajectoryRecord:
    """Piecewise-deterministic driver shared by the GRW and kick processes.

    ``apply_event(psi, index, time, rng)`` returns ``(new_psi, event)``.  Event
    times and channel indices come from the clock substream of ``seed``;
    everything ``apply_event`` draws comes from a separate marks substream, so
    two processes with the same seed and rate share their event times.
    """
    if not t_final > 0:
        raise DomainError(f"t_final must be positive, got {t_final}")
    times = _snapshot_grid(snapshot_times, t_final)
    if dt_max is None:
        dt_max = max_stable_dt(psi0.grid, H, psi0.n_particles)

    clock = substream(seed, CLOCK)
    marks = substream(seed, MARKS)
    next_event = next_event_time(total_rate, clock) if total_rate > 0 else np.inf

    psi, t, i = psi0, 0.0, 0
    events, snaps = [], []
    while True:
        t_snap = times[i] if i < times.size else np.inf
        t_stop = min(next_event, t_snap, t_final)
        psi = evolve_unitary(psi, H, t_stop - t, dt_max)
        t = t_stop
        while i < times.size and times[i] <= t:
            snaps.append(psi)
            i += 1
        if next_event <= t:
            index = int(clock.integers(n_channels)) if n_channels > 1 else 0
            psi, event = apply_event(psi, index, t, marks)
            events.append(event)
            next_event = t + next_event_time(total_rate, clock)
            continue
        if t >= t_final:
            break

    check_boundary(psi)
    record = dict(params)
    record.update(
        grid=psi0.grid.to_dict(),
        hamiltonian=H.to_dict(),
        psi0_digest=state_digest(psi0),
        t_final=t_final,
    )
    return TrajectoryRecord(record, int(seed), events, times, snaps)


def run_grw_trajectory(
    psi0: WaveFunction,
    H: Hamiltonian,
    params: GrwParams,
    t_final: float,
    snapshot_times: Sequence[float] = (),
    seed: int = 0,
    dt_max: float | None = None,
) -> TrajectoryRecord:
    """Simulate one GRW trajectory; fully determined by ``seed``."""
    if psi0.n_particles != params.n_particles:
        raise DomainError(
            f"state has {psi0.n_particles} particle(s), params expect {params.n_particles}"
        )
    if params.lambda_rate > 0:
        gaussian_effect(psi0.grid, 0.0, params.sigma)  # resolution check up front
    sigma = params.sigma

    def jump(psi, index, time, rng):
        outcome = sample_outcome(psi, index, sigma, rng)
        return apply_jump(psi, index, outcome, sigma), JumpEvent(time, index, outcome)

    return run_poisson_process(
        psi0,
        H,
        params.total_rate,
        psi0.n_particles,
        jump,
        t_final,
        snapshot_times,
        seed,
        dt_max,
        {"model": "grw", **params.to_dict()},
    )
