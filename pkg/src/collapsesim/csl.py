"""CSL as continuous monitoring of the smeared particle density.

The smeared density at ``x`` is the diagonal operator
``n(x) = sum_k w_k G(x - X_k)`` with ``G`` a normalized Gaussian of width
``r_C``.  The noise field is discretized into ``n_cells`` cells of width
``dx_c``; per time step each cell gets an independent Gaussian ``w_c`` with
variance ``1/(dt dx_c)``, and ``integral dx`` becomes ``sum_c dx_c``.

The conditional state obeys the Itô equation

    d psi = [-i H dt - (gamma/2) sum_c dx_c (n_c - <n_c>)^2 dt
             + sqrt(gamma) sum_c dx_c (n_c - <n_c>) w_c dt] psi

integrated by Euler-Maruyama and renormalized after each step.  The same
``w`` defines the monitored signal

    n_t(c) = <n_c> + w_c / (2 sqrt(gamma)),

whose noise part has variance ``1/(4 gamma dt dx_c)`` per cell and step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import (
    Hamiltonian,
    SpatialGrid,
    WaveFunction,
    _check_step,
    check_boundary,
    split_step,
)
from .errors import DomainError, ResolutionError, StepSizeError
from .grw import TrajectoryRecord, state_digest
from .rng import NOISE, substream

#: Largest accepted ``dt * gamma * sum_c dx_c Var(n_c)`` for one SSE step.
SSE_STEP_LIMIT = 0.1


@dataclass(frozen=True)
class CslParams:
    gamma: float
    r_C: float
    n_cells: int
    cell_width: float | None = None
    weights: tuple = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.gamma < 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if not self.r_C > 0:
            raise DomainError(f"r_C must be positive, got {self.r_C}")
        if self.n_cells < 1 or int(self.n_cells) != self.n_cells:
            raise DomainError(f"n_cells must be a positive integer, got {self.n_cells}")
        if not self.weights or min(self.weights) <= 0 or len(self.weights) > 2:
            raise DomainError("weights must hold one or two positive numbers")

    @property
    def n_particles(self) -> int:
        return len(self.weights)

    def cell_width_on(self, grid: SpatialGrid) -> float:
        return self.cell_width if self.cell_width is not None else grid.length / self.n_cells

    def cell_centers(self, grid: SpatialGrid) -> np.ndarray:
        width = self.cell_width_on(grid)
        return grid.x_min + width * (np.arange(self.n_cells) + 0.5)

    def validate(self, grid: SpatialGrid):
        if self.r_C < 2 * grid.dx:
            raise ResolutionError(f"r_C {self.r_C:g} is below the grid resolution 2*dx = {2 * grid.dx:g}")
        width = self.cell_width_on(grid)
        if abs(self.n_cells * width - grid.length) > 1e-9 * grid.length:
            raise DomainError(
                f"{self.n_cells} cells of width {width:g} do not span the grid length {grid.length:g}"
            )
        return self

    def saturation_rate(self) -> float:
        """Upper bound ``gamma sum_k w_k^2 / sqrt(4 pi r_C^2)`` on the drift rate."""
        return self.gamma * sum(w * w for w in self.weights) / np.sqrt(4 * np.pi * self.r_C**2)

    def max_dt(self) -> float:
        """State-independent step bound implying the per-step SSE guard."""
        rate = self.saturation_rate()
        return np.inf if rate == 0 else SSE_STEP_LIMIT / rate

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "r_C": self.r_C,
            "n_cells": self.n_cells,
            "cell_width": self.cell_width,
            "weights": list(self.weights),
        }


@dataclass(frozen=True)
class NoiseField:
    """Gaussian cell increments ``w`` with variance ``1/(dt * cell_width)``."""

    dt: float
    cell_width: float
    values: np.ndarray  # shape (n_steps, n_cells)

    @classmethod
    def draw(cls, rng, n_steps: int, n_cells: int, dt: float, cell_width: float) -> "NoiseField":
        z = rng.standard_normal((n_steps, n_cells))
        return cls(dt, cell_width, z / np.sqrt(dt * cell_width))


@dataclass
class SignalRecord:
    times: np.ndarray
    cells: np.ndarray
    values: np.ndarray
    expectation: np.ndarray

    @property
    def noise(self) -> np.ndarray:
        return self.values - self.expectation

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,cell_center,value,expectation_part\n")
        for i, t in enumerate(self.times):
            for c, center in enumerate(self.cells):
                buf.write(f"{t!r},{center!r},{self.values[i, c]!r},{self.expectation[i, c]!r}\n")
        return buf.getvalue()


def _gaussian(u, r_C):
    return np.exp(-(u**2) / (2 * r_C**2)) / np.sqrt(2 * np.pi * r_C**2)


def smeared_density(grid: SpatialGrid, cell_center: float, r_C: float, weights=(1.0,)) -> np.ndarray:
    """Diagonal of ``n(cell_center)`` over the configuration grid."""
    if r_C < 2 * grid.dx:
        raise ResolutionError(f"r_C {r_C:g} is below the grid resolution 2*dx = {2 * grid.dx:g}")
    g = np.asarray(weights[0]) * _gaussian(cell_center - grid.x, r_C)
    if len(weights) == 1:
        return g
    g2 = weights[1] * _gaussian(cell_center - grid.x, r_C)
    return g[:, None] + g2[None, :]


@lru_cache(maxsize=16)
def _operators(grid: SpatialGrid, params: CslParams):
    """Flattened ``n_c`` diagonals, shape ``(n_cells, n**p)``, and ``sum_c n_c^2``."""
    ops = np.stack(
        [smeared_density(grid, c, params.r_C, params.weights).reshape(-1) for c in params.cell_centers(grid)]
    )
    ops.setflags(write=False)
    sq = np.sum(ops**2, axis=0)
    sq.setflags(write=False)
    return ops, sq


def cell_kernel_matrix(grid: SpatialGrid, params: CslParams) -> np.ndarray:
    """Decoherence kernel generated by the cell discretization (one particle).

    ``(gamma/2) sum_c dx_c (n_c(x) - n_c(x'))^2``; tends to the continuum CSL
    kernel as the cells become narrow compared with ``r_C``.
    """
    if params.n_particles != 1:
        raise DomainError("cell_kernel_matrix is defined for a single particle")
    ops, _ = _operators(grid, params)
    width = params.cell_width_on(grid)
    diff = ops[:, :, None] - ops[:, None, :]
    return 0.5 * params.gamma * width * np.sum(diff**2, axis=0)


class _SseIntegrator:
    """Euler-Maruyama stepper holding the per-run constants."""

    def __init__(self, grid: SpatialGrid, H: Hamiltonian, params: CslParams, n_particles: int, dt: float):
        if params.n_particles != n_particles:
            raise DomainError(
                f"state has {n_particles} particle(s), CSL weights describe {params.n_particles}"
            )
        params.validate(grid)
        _check_step(grid, H, dt, n_particles)
        self.grid, self.H, self.params, self.dt = grid, H, params, dt
        self.shape = (grid.n_points,) * n_particles
        self.dv = grid.dx**n_particles
        self.width = params.cell_width_on(grid)
        self.ops, self.ops_sq = _operators(grid, params)
        self.gamma = params.gamma
        self.sqrt_gamma = np.sqrt(params.gamma)

    def expectation(self, pdf):
        return pdf @ self.ops.T * self.dv

    def step(self, psi: np.ndarray, w: np.ndarray):
        """Advance flattened amplitudes by one step; returns ``(psi, <n_c>)``.

        ``psi`` may carry leading batch axes, with ``w`` shaped to match.
        """
        dt, gamma = self.dt, self.gamma
        pdf = psi.real**2 + psi.imag**2
        mean = self.expectation(pdf)
        if gamma > 0:
            mean_sq = np.sum(mean * mean, axis=-1, keepdims=True)
            variance_sum = float(np.max(pdf @ self.ops_sq * self.dv - mean_sq[..., 0]))
            if dt * gamma * self.width * variance_sum > SSE_STEP_LIMIT * (1 + 1e-12):
                suggested = SSE_STEP_LIMIT / (gamma * self.width * variance_sum)
                raise StepSizeError(
                    f"dt={dt:g} too large for the monitoring strength; use dt <= {suggested:.6g}",
                    suggested_dt=suggested,
                )
            # sum_c (n_c - m_c)^2 and sum_c (n_c - m_c) w_c, expanded
            dev_sq = self.ops_sq - 2.0 * (mean @ self.ops) + mean_sq
            dev_w = w @ self.ops - np.sum(mean * w, axis=-1, keepdims=True)
            factor = 1.0 + dt * self.width * (-0.5 * gamma * dev_sq + self.sqrt_gamma * dev_w)
            psi = psi * factor
        if not self.H.is_zero:
            lead = psi.shape[:-1]
            amps = split_step(psi.reshape(lead + self.shape), self.grid, self.H, dt, len(self.shape))
            psi = amps.reshape(lead + (-1,))
        norm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=-1, keepdims=True) * self.dv)
        return psi / norm, mean

    def expected_norm_sq(self, psi: np.ndarray) -> float:
        """Noise average of the pre-renormalization squared norm, exactly."""
        dt, gamma = self.dt, self.gamma
        pdf = psi.real**2 + psi.imag**2
        mean = self.expectation(pdf)
        dev_sq = self.ops_sq - 2.0 * (mean @ self.ops) + mean @ mean
        drift = 1.0 - 0.5 * dt * gamma * self.width * dev_sq
        # each w_c dt has variance dt/width; cells are independent
        diffusion = gamma * self.width * dt * dev_sq
        return float(np.sum((drift**2 + diffusion) * pdf) * self.dv)


def sse_step(psi: WaveFunction, H: Hamiltonian, params: CslParams, noise, dt: float) -> WaveFunction:
    """One Euler-Maruyama step of the CSL stochastic Schrödinger equation.

    ``noise`` is the vector of cell increments ``w_c`` for this step.
    """
    integ = _SseIntegrator(psi.grid, H, params, psi.n_particles, dt)
    w = np.asarray(noise, dtype=float)
    if w.shape != (params.n_cells,):
        raise DomainError(f"noise must have shape ({params.n_cells},), got {w.shape}")
    new, _ = integ.step(psi.vector.copy(), w)
    return WaveFunction(psi.grid, new, psi.n_particles)


def expected_norm_drift(psi: WaveFunction, H: Hamiltonian, params: CslParams, dt: float) -> float:
    """Noise-averaged ``||psi + d psi||^2 - 1`` of one step, before renormalization."""
    integ = _SseIntegrator(psi.grid, H, params, psi.n_particles, dt)
    return integ.expected_norm_sq(psi.vector) - 1.0


def generate_signal(psi: WaveFunction, params: CslParams, noise, dt: float):
    """Monitored signal per cell and its expectation part for one step.

    Returns ``(values, expectation)``, both of length ``n_cells``.
    """
    if not params.gamma > 0:
        raise DomainError("the signal is undefined for gamma = 0")
    ops, _ = _operators(psi.grid, params)
    expectation = ops @ psi.pdf().reshape(-1) * psi.volume_element
    values = expectation + np.asarray(noise, dtype=float) / (2.0 * np.sqrt(params.gamma))
    return values, expectation


def _step_indices(snapshot_times, dt, n_steps, t_final):
    times = np.asarray(snapshot_times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > t_final * (1 + 1e-12)):
        raise DomainError("snapshot_times must be sorted and lie in [0, t_final]")
    idx = np.rint(times / dt).astype(int)
    if np.any(np.abs(idx * dt - times) > 1e-9 * max(1.0, t_final)):
        raise DomainError("snapshot_times must be multiples of dt")
    return times, idx


def run_csl_trajectory(
    psi0: WaveFunction,
    H: Hamiltonian,
    params: CslParams,
    t_final: float,
    dt: float,
    snapshot_times: Sequence[float] = (),
    seed: int = 0,
    record_signal: bool = False,
) -> TrajectoryRecord:
    """Integrate one CSL trajectory; fully determined by ``seed``.

    ``t_final`` and every snapshot time must be multiples of ``dt``.  The
    record's ``signal`` holds a :class:`SignalRecord` when ``record_signal``.
    """
    if not t_final > 0:
        raise DomainError(f"t_final must be positive, got {t_final}")
    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * t_final:
        raise DomainError(f"t_final={t_final:g} is not a multiple of dt={dt:g}")
    times, snap_idx = _step_indices(snapshot_times, dt, n_steps, t_final)
    integ = _SseIntegrator(psi0.grid, H, params, psi0.n_particles, dt)
    width = integ.width
    noise = NoiseField.draw(substream(seed, NOISE), n_steps, params.n_cells, dt, width)

    psi = psi0.vector.copy()
    snaps = []
    means = np.empty((n_steps, params.n_cells)) if record_signal else None
    j = 0
    for step in range(n_steps + 1):
        while j < snap_idx.size and snap_idx[j] == step:
            snaps.append(WaveFunction(psi0.grid, psi, psi0.n_particles))
            j += 1
        if step == n_steps:
            break
        psi, mean = integ.step(psi, noise.values[step])
        if record_signal:
            means[step] = mean

    final = WaveFunction(psi0.grid, psi, psi0.n_particles)
    check_boundary(final)
    signal = None
    if record_signal:
        values = means + noise.values / (2.0 * np.sqrt(params.gamma)) if params.gamma > 0 else means
        signal = SignalRecord(dt * np.arange(n_steps), params.cell_centers(psi0.grid), values, means)
    record = {
        "model": "csl",
        **params.to_dict(),
        "n_particles": psi0.n_particles,
        "dt": dt,
        "grid": psi0.grid.to_dict(),
        "hamiltonian": H.to_dict(),
        "psi0_digest": state_digest(psi0),
        "t_final": t_final,
    }
    return TrajectoryRecord(record, int(seed), [], times, snaps, signal)


def run_csl_batch(
    psi0: WaveFunction,
    H: Hamiltonian,
    params: CslParams,
    t_final: float,
    dt: float,
    batch: int,
    seed: int = 0,
    snapshot_times: Sequence[float] = (),
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Integrate ``batch`` trajectories side by side.

    Returns amplitudes shaped ``(batch, len(snapshot_times), n**p)``, or
    ``(batch, n**p)`` at ``t_final`` when no snapshot times are given.  The
    noise comes from one stream for the whole batch, so individual rows do
    not coincide with :func:`run_csl_trajectory` runs of any seed.  Passing
    ``noise`` (standard normals, shape ``(n_steps, batch, n_cells)``) allows
    coupled runs at different step sizes.
    """
    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * t_final:
        raise DomainError(f"t_final={t_final:g} is not a multiple of dt={dt:g}")
    times, snap_idx = _step_indices(snapshot_times, dt, n_steps, t_final)
    integ = _SseIntegrator(psi0.grid, H, params, psi0.n_particles, dt)
    rng = substream(seed, NOISE)
    scale = 1.0 / np.sqrt(dt * integ.width)
    if noise is not None and noise.shape != (n_steps, batch, params.n_cells):
        raise DomainError(f"noise must have shape {(n_steps, batch, params.n_cells)}")

    psi = np.broadcast_to(psi0.vector, (batch, psi0.vector.size)).copy()
    snaps = []
    j = 0
    for step in range(n_steps + 1):
        while j < snap_idx.size and snap_idx[j] == step:
            snaps.append(psi.copy())
            j += 1
        if step == n_steps:
            break
        z = noise[step] if noise is not None else rng.standard_normal((batch, params.n_cells))
        psi, _ = integ.step(psi, z * scale)
    if not snaps:
        return psi
    return np.stack(snaps, axis=1)
