"""Noise-averaged dynamics of the density matrix.

All three collapse models (GRW jumps, unitary kicks, CSL monitoring) lead to a
master equation whose dissipative part is diagonal in the position-pair basis:

    d rho(x, x')/dt = (Hamiltonian part) - K(x - x') rho(x, x')

with a saturating kernel ``K``.  The kernels implemented here:

* GRW:  ``lambda (1 - exp(-d^2 / (8 sigma^2)))``
* CSL:  ``gamma (4 pi r_C^2)^(-D/2) (1 - exp(-d^2 / (4 r_C^2)))`` in D dimensions

The CSL form follows from evaluating the double commutator with the smeared
density; the overlap of two normalized Gaussians of width ``r_C`` is a
Gaussian of width ``sqrt(2) r_C``.  Choosing ``gamma = (4 pi r_C^2)^(D/2)
lambda`` and ``sigma = r_C / sqrt(2)`` makes the two kernels identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DensityMatrix,
    Hamiltonian,
    SpatialGrid,
    _check_same_grid,
    _split_step_factors,
    max_stable_dt,
    substeps,
)
from .errors import DomainError, StepSizeError

#: Largest accepted ``dt * max kernel`` for a master-equation step.
DECOHERENCE_STEP_LIMIT = 0.1


def grw_kernel(d, lambda_rate: float, sigma: float):
    """Decoherence rate at separation ``d`` for GRW."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    d = np.asarray(d, dtype=float)
    return lambda_rate * (1.0 - np.exp(-(d**2) / (8.0 * sigma**2)))


def csl_kernel(d, gamma: float, r_C: float, dimension: int = 1):
    """Decoherence rate at separation ``d`` for CSL in ``dimension`` dimensions."""
    if not gamma > 0 or not r_C > 0:
        raise DomainError(f"gamma and r_C must be positive, got {gamma}, {r_C}")
    d = np.asarray(d, dtype=float)
    return csl_saturation_rate(gamma, r_C, dimension) * (1.0 - np.exp(-(d**2) / (4.0 * r_C**2)))


def csl_saturation_rate(gamma: float, r_C: float, dimension: int = 1) -> float:
    return gamma * (4.0 * np.pi * r_C**2) ** (-dimension / 2)


def matched_csl_gamma(lambda_rate: float, r_C: float, dimension: int = 3) -> float:
    """CSL strength whose kernel equals GRW's with ``sigma = r_C / sqrt(2)``."""
    return (4.0 * np.pi * r_C**2) ** (dimension / 2) * lambda_rate


@dataclass(frozen=True)
class DecoherenceKernel:
    """Separation-dependent decoherence rate; ``kernel(inf) == rate_scale``.

    For ``model="csl"`` the ``rate_scale`` is already the saturation rate
    ``gamma (4 pi r_C^2)^(-D/2)``; use :meth:`csl` to build it from ``gamma``.
    """

    model: str
    rate_scale: float
    length_scale: float
    dimension: int = 1
    variance_mode: str = "matched"

    def __post_init__(self):
        if self.model not in ("grw", "csl", "kick"):
            raise DomainError(f"unknown kernel model {self.model!r}")
        if self.rate_scale < 0 or not self.length_scale > 0:
            raise DomainError("kernel needs rate_scale >= 0 and length_scale > 0")
        if self.dimension not in (1, 3):
            raise DomainError(f"dimension must be 1 or 3, got {self.dimension}")

    @classmethod
    def grw(cls, lambda_rate: float, sigma: float) -> "DecoherenceKernel":
        return cls("grw", lambda_rate, sigma)

    @classmethod
    def kick(cls, lambda_rate: float, sigma: float, variance_mode: str = "matched"):
        return cls("kick", lambda_rate, sigma, variance_mode=variance_mode)

    @classmethod
    def csl(cls, gamma: float, r_C: float, dimension: int = 1) -> "DecoherenceKernel":
        return cls("csl", csl_saturation_rate(gamma, r_C, dimension), r_C, dimension)

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        length = self.length_scale
        if self.model == "csl":
            exponent = d**2 / (4.0 * length**2)
        elif self.model == "kick" and self.variance_mode == "strong":
            exponent = d**2 / (2.0 * length**2)
        else:
            # grw, and kicks with matched variance: one expression so the two
            # master equations agree bit for bit
            exponent = d**2 / (8.0 * length**2)
        return self.rate_scale * (1.0 - np.exp(-exponent))

    def matrix(self, grid: SpatialGrid) -> np.ndarray:
        return self(grid.separations())

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "rate_scale": self.rate_scale,
            "length_scale": self.length_scale,
            "dimension": self.dimension,
            "variance_mode": self.variance_mode,
        }


def _unitary_columns(m: np.ndarray, half_v: np.ndarray, kin: np.ndarray, harmonic: bool):
    if harmonic:
        m = half_v[:, None] * m
    m = np.fft.ifft(np.fft.fft(m, axis=0) * kin[:, None], axis=0)
    if harmonic:
        m = half_v[:, None] * m
    return m


def unitary_density_step(rho: np.ndarray, grid: SpatialGrid, H: Hamiltonian, dt: float):
    """``U rho U^dagger`` for one split step ``U`` of length ``dt``."""
    if H.is_zero or dt == 0:
        return rho
    half_v, kin = _split_step_factors(grid, H, float(dt), 1)
    harmonic = H.kind == "harmonic"
    left = _unitary_columns(rho, half_v, kin, harmonic)
    return _unitary_columns(left.conj().T, half_v, kin, harmonic).conj().T


def _check_master_step(grid, H, kernel_matrix, dt):
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    k_max = float(np.max(kernel_matrix))
    if k_max > 0 and dt * k_max > DECOHERENCE_STEP_LIMIT * (1 + 1e-12):
        limit = DECOHERENCE_STEP_LIMIT / k_max
        raise StepSizeError(
            f"dt={dt:g} too large for decoherence rate {k_max:g}; use dt <= {limit:.6g}",
            suggested_dt=limit,
        )
    limit = 2 * max_stable_dt(grid, H)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(
            f"dt={dt:g} exceeds the split-step stability bound; use dt <= {limit:.6g}",
            suggested_dt=limit,
        )


def evolve_master_snapshots(
    rho0: DensityMatrix,
    H: Hamiltonian,
    kernel: DecoherenceKernel,
    times: Sequence[float],
    dt: float,
) -> list[DensityMatrix]:
    """Solve the master equation, returning the state at each of ``times``.

    Each step is a Strang splitting: half unitary step, exact decoherence
    factor ``exp(-K dt)`` applied elementwise, half unitary step.  With
    ``H = 0`` the decoherence part is exact and is applied in one shot.
    """
    grid = rho0.grid
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise DomainError("times must be sorted and non-negative")
    K = kernel.matrix(grid)
    _check_master_step(grid, H, K, dt)

    out = []
    rho, t = np.array(rho0.elements), 0.0
    for target in times:
        interval = target - t
        if H.is_zero:
            rho = rho0.elements * np.exp(-K * target)
        else:
            n, step = substeps(interval, dt)
            if n:
                decay = np.exp(-K * step)
                for _ in range(n):
                    rho = unitary_density_step(rho, grid, H, step / 2)
                    rho = rho * decay
                    rho = unitary_density_step(rho, grid, H, step / 2)
        t = target
        out.append(DensityMatrix(grid, rho))
    return out


def evolve_master(
    rho0: DensityMatrix, H: Hamiltonian, kernel: DecoherenceKernel, t_final: float, dt: float
) -> DensityMatrix:
    """Master-equation state at ``t_final`` (see :func:`evolve_master_snapshots`)."""
    if t_final < 0:
        raise DomainError(f"t_final must be non-negative, got {t_final}")
    return evolve_master_snapshots(rho0, H, kernel, [t_final], dt)[0]


def evolve_com_master(
    rho0: DensityMatrix,
    H_com: Hamiltonian,
    N: int,
    lambda_rate: float,
    sigma: float,
    t_final: float,
    dt: float,
) -> DensityMatrix:
    """Centre-of-mass master equation: the GRW kernel with rate ``N * lambda``."""
    if N < 1 or int(N) != N:
        raise DomainError(f"N must be a positive integer, got {N}")
    return evolve_master(rho0, H_com, DecoherenceKernel.grw(N * lambda_rate, sigma), t_final, dt)


def off_diagonal(rhos: Sequence[DensityMatrix], x_a: float, x_b: float) -> np.ndarray:
    """Complex ``rho(x_a, x_b)`` (nearest grid points) for each state."""
    if not rhos:
        return np.zeros(0, dtype=complex)
    grid = rhos[0].grid
    ia, ib = grid.index_of(x_a), grid.index_of(x_b)
    for rho in rhos:
        _check_same_grid(grid, rho.grid)
    return np.array([rho.elements[ia, ib] for rho in rhos])


@dataclass(frozen=True)
class Magnitudes:
    """Order-of-magnitude collapse estimates for a macroscopic body."""

    constituents: float
    lambda_rate: float
    r_C: float
    sigma: float
    measurements_per_second: float
    collective_precision: float

    def to_dict(self) -> dict:
        return {
            "constituents": self.constituents,
            "lambda_rate": self.lambda_rate,
            "r_C": self.r_C,
            "sigma": self.sigma,
            "measurements_per_second": self.measurements_per_second,
            "collective_precision": self.collective_precision,
        }


def estimate_magnitudes(A: float, lambda_physical: float, r_C_physical: float) -> Magnitudes:
    """Measurements per second ``N = A lambda`` and c.o.m. precision ``sigma/sqrt(N)``.

    ``sigma = r_C / sqrt(2)``; the precision is in the units of ``r_C``.
    """
    if not (A > 0 and lambda_physical > 0 and r_C_physical > 0):
        raise DomainError("A, lambda and r_C must all be positive")
    sigma = r_C_physical / np.sqrt(2.0)
    n = A * lambda_physical
    return Magnitudes(
        constituents=float(A),
        lambda_rate=float(lambda_physical),
        r_C=float(r_C_physical),
        sigma=float(sigma),
        measurements_per_second=float(n),
        collective_precision=float(sigma / np.sqrt(n)),
    )
