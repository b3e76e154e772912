"""Grid-based quantum states and the elementary operations on them.

Units are dimensionless with hbar = 1.  All states live on a uniform,
periodic 1-D grid per particle; a two-particle wave function is stored as an
``(n, n)`` amplitude array over the configuration grid.

Normalization conventions
-------------------------
Amplitudes are continuum values sampled at grid points, so

    sum |psi_j|^2 * dx**n_particles == 1

and density-matrix elements satisfy ``sum rho_jj * dx == 1``.  The operator
represented by a density matrix on the grid is ``rho * dx``; eigenvalues and
trace distances are computed from that operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .errors import (
    BoundaryWarning,
    DomainError,
    InvariantError,
    ResolutionError,
    StepSizeError,
)

#: Largest accepted value of ``dt * max kinetic eigenvalue`` for one split step.
STABILITY_LIMIT = 0.5


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic lattice ``x_j = x_min + j*dx``, ``j = 0..n_points-1``."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise DomainError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise DomainError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + self.dx * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        k = 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        k.setflags(write=False)
        return k

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    def contains(self, position: float) -> bool:
        return self.x_min <= position <= self.x_max

    def index_of(self, position: float) -> int:
        """Index of the grid point closest to ``position``."""
        return int(np.argmin(np.abs(self.x - position)))

    def separations(self) -> np.ndarray:
        """Matrix of signed separations ``x_i - x_j``."""
        return self.x[:, None] - self.x[None, :]

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}

    @classmethod
    def from_dict(cls, data: dict) -> "SpatialGrid":
        return cls(data["x_min"], data["x_max"], data["n_points"])


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Amplitudes of a 1- or 2-particle state on a configuration grid.

    ``amplitudes`` may be passed flat (length ``n**n_particles``, row-major)
    or already shaped ``(n,) * n_particles``.  The stored array is read-only.
    """

    grid: SpatialGrid
    amplitudes: np.ndarray
    n_particles: int = field(default=0)

    def __post_init__(self):
        n = self.grid.n_points
        amps = np.array(self.amplitudes, dtype=np.complex128)
        n_particles = self.n_particles or max(1, round(np.log(amps.size) / np.log(n)))
        if n_particles not in (1, 2):
            raise DomainError(f"n_particles must be 1 or 2, got {n_particles}")
        if amps.size != n**n_particles:
            raise DomainError(
                f"expected {n ** n_particles} amplitudes for {n_particles} particle(s), "
                f"got {amps.size}"
            )
        object.__setattr__(self, "amplitudes", _readonly(amps.reshape((n,) * n_particles)))
        object.__setattr__(self, "n_particles", n_particles)

    @property
    def volume_element(self) -> float:
        return self.grid.dx**self.n_particles

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.volume_element))

    def normalized(self) -> "WaveFunction":
        norm = self.norm()
        if norm == 0:
            raise DomainError("cannot normalize the zero vector")
        return WaveFunction(self.grid, self.amplitudes / norm, self.n_particles)

    def pdf(self) -> np.ndarray:
        """Joint position probability density ``|psi|^2``."""
        return np.abs(self.amplitudes) ** 2

    def marginal_pdf(self, particle_index: int = 0) -> np.ndarray:
        """Position density of one particle, other coordinate summed out."""
        if not 0 <= particle_index < self.n_particles:
            raise DomainError(f"particle_index {particle_index} out of range")
        pdf = self.pdf()
        if self.n_particles == 2:
            pdf = pdf.sum(axis=1 - particle_index) * self.grid.dx
        return pdf

    def mean_position(self, particle_index: int = 0) -> float:
        return float(np.sum(self.grid.x * self.marginal_pdf(particle_index)) * self.grid.dx)

    def position_variance(self, particle_index: int = 0) -> float:
        p = self.marginal_pdf(particle_index) * self.grid.dx
        mean = np.sum(self.grid.x * p)
        return float(np.sum((self.grid.x - mean) ** 2 * p))

    def momentum_amplitudes(self) -> np.ndarray:
        """Momentum-space amplitudes in FFT order, normalized over ``dk``."""
        scale = (self.grid.dx / np.sqrt(2 * np.pi)) ** self.n_particles
        return np.fft.fftn(self.amplitudes) * scale

    def mean_momentum(self, particle_index: int = 0) -> float:
        phi = self.momentum_amplitudes()
        weights = np.abs(phi) ** 2
        if self.n_particles == 2:
            weights = weights.sum(axis=1 - particle_index)
        return float(np.sum(self.grid.k * weights) / np.sum(weights))

    def overlap(self, other: "WaveFunction") -> complex:
        _check_same_grid(self.grid, other.grid)
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.volume_element)


def momentum_to_position(grid: SpatialGrid, phi: np.ndarray) -> np.ndarray:
    """Inverse of :meth:`WaveFunction.momentum_amplitudes`."""
    ndim = np.ndim(phi)
    return np.fft.ifftn(phi) * (np.sqrt(2 * np.pi) / grid.dx) ** ndim


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density matrix ``rho(x, x')`` of a single degree of freedom."""

    grid: SpatialGrid
    elements: np.ndarray

    def __post_init__(self):
        n = self.grid.n_points
        rho = np.array(self.elements, dtype=np.complex128)
        if rho.shape != (n, n):
            raise DomainError(f"density matrix must have shape {(n, n)}, got {rho.shape}")
        object.__setattr__(self, "elements", _readonly(rho))

    @property
    def operator(self) -> np.ndarray:
        """Matrix of the operator on the grid (elements times dx)."""
        return self.elements * self.grid.dx

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.elements)).copy()

    def trace(self) -> float:
        return float(np.real(np.trace(self.elements)) * self.grid.dx)

    def purity(self) -> float:
        op = self.operator
        return float(np.real(np.sum(op * op.T)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.elements - self.elements.conj().T)))

    def eigenvalues(self) -> np.ndarray:
        op = self.operator
        return np.linalg.eigvalsh(0.5 * (op + op.conj().T))

    def element(self, x_a: float, x_b: float) -> complex:
        g = self.grid
        return complex(self.elements[g.index_of(x_a), g.index_of(x_b)])

    def check_invariants(self, hermitian_tol=1e-10, trace_tol=1e-8, positivity_tol=1e-8):
        """Raise :class:`InvariantError` if any density-matrix invariant fails."""
        herm = self.hermiticity_error()
        if herm > hermitian_tol:
            raise InvariantError(f"not Hermitian: max deviation {herm:.3e}")
        trace = self.trace()
        if abs(trace - 1.0) > trace_tol:
            raise InvariantError(f"trace {trace!r} differs from 1")
        smallest = float(self.eigenvalues()[0])
        if smallest < -positivity_tol:
            raise InvariantError(f"negative eigenvalue {smallest:.3e}")
        return self


@dataclass(frozen=True)
class Hamiltonian:
    """Single-particle Hamiltonian applied to every particle.

    ``kind`` is ``"free"`` (kinetic only), ``"harmonic"`` (kinetic plus
    ``m w^2 x^2 / 2``) or ``"zero"`` (no dynamics, H = 0).
    """

    kind: str = "free"
    mass: float = 1.0
    frequency: float = 0.0

    KINDS = ("zero", "free", "harmonic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"Hamiltonian kind must be one of {self.KINDS}, got {self.kind!r}")
        if not self.mass > 0:
            raise DomainError(f"mass must be positive, got {self.mass}")
        if self.frequency < 0:
            raise DomainError(f"frequency must be non-negative, got {self.frequency}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def kinetic(self, k: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(k)
        return k**2 / (2 * self.mass)

    def potential(self, x: np.ndarray) -> np.ndarray:
        if self.kind != "harmonic":
            return np.zeros_like(x)
        return 0.5 * self.mass * self.frequency**2 * x**2

    def max_kinetic(self, grid: SpatialGrid, n_particles: int = 1) -> float:
        return n_particles * float(self.kinetic(np.array(grid.k_max)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mass": self.mass, "frequency": self.frequency}


def _check_same_grid(a: SpatialGrid, b: SpatialGrid):
    if a != b:
        raise DomainError(f"grid mismatch: {a} vs {b}")


def _grid_sum(grid: SpatialGrid, values, n_particles: int) -> np.ndarray:
    """Broadcast a 1-D function of position to a configuration grid (additive)."""
    if n_particles == 1:
        return values
    return values[:, None] + values[None, :]


def max_stable_dt(grid: SpatialGrid, H: Hamiltonian, n_particles: int = 1) -> float:
    """Largest step accepted by :func:`propagate_unitary`."""
    t_max = H.max_kinetic(grid, n_particles)
    return np.inf if t_max == 0 else STABILITY_LIMIT / t_max


@lru_cache(maxsize=64)
def _split_step_factors(grid: SpatialGrid, H: Hamiltonian, dt: float, n_particles: int):
    half_v = np.exp(-0.5j * dt * _grid_sum(grid, H.potential(grid.x), n_particles))
    kin = np.exp(-1j * dt * _grid_sum(grid, H.kinetic(grid.k), n_particles))
    return _readonly(half_v), _readonly(kin)


def split_step(
    amplitudes: np.ndarray, grid: SpatialGrid, H: Hamiltonian, dt: float, n_particles: int | None = None
) -> np.ndarray:
    """One Strang step ``e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`` on a raw array.

    The trailing ``n_particles`` axes (default: all axes) are particle
    coordinates; any leading axes are batch axes.  No validation.
    """
    if H.is_zero or dt == 0:
        return amplitudes
    if n_particles is None:
        n_particles = amplitudes.ndim
    axes = tuple(range(amplitudes.ndim - n_particles, amplitudes.ndim))
    half_v, kin = _split_step_factors(grid, H, float(dt), n_particles)
    harmonic = H.kind == "harmonic"
    out = amplitudes * half_v if harmonic else amplitudes
    out = np.fft.ifftn(np.fft.fftn(out, axes=axes) * kin, axes=axes)
    if harmonic:
        out = out * half_v
    return out


def _check_step(grid: SpatialGrid, H: Hamiltonian, dt: float, n_particles: int = 1):
    if dt < 0:
        raise DomainError(f"time step must be non-negative, got {dt}")
    limit = max_stable_dt(grid, H, n_particles)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(
            f"dt={dt:g} exceeds the split-step stability bound; use dt <= {limit:.6g}",
            suggested_dt=limit,
        )


def propagate_unitary(psi: WaveFunction, H: Hamiltonian, dt: float) -> WaveFunction:
    """Advance ``psi`` by one split-step of length ``dt`` under ``H``."""
    _check_step(psi.grid, H, dt, psi.n_particles)
    if dt == 0 or H.is_zero:
        return psi
    return WaveFunction(psi.grid, split_step(psi.amplitudes, psi.grid, H, dt), psi.n_particles)


def substeps(duration: float, dt_max: float) -> tuple[int, float]:
    """Split ``duration`` into the fewest equal steps no longer than ``dt_max``."""
    if duration <= 0:
        return 0, 0.0
    n = int(np.ceil(duration / dt_max - 1e-9))
    n = max(n, 1)
    return n, duration / n


def evolve_unitary(psi: WaveFunction, H: Hamiltonian, t: float, dt_max: float) -> WaveFunction:
    """Propagate over time ``t`` using equal split steps no longer than ``dt_max``."""
    if t < 0:
        raise DomainError(f"evolution time must be non-negative, got {t}")
    if H.is_zero or t == 0:
        return psi
    n, dt = substeps(t, dt_max)
    _check_step(psi.grid, H, dt, psi.n_particles)
    amps = psi.amplitudes
    for _ in range(n):
        amps = split_step(amps, psi.grid, H, dt)
    return WaveFunction(psi.grid, amps, psi.n_particles)


def energy(psi: WaveFunction, H: Hamiltonian) -> float:
    """Expectation value of ``H`` (kinetic via FFT, potential on the grid)."""
    g, p = psi.grid, psi.n_particles
    phi = psi.momentum_amplitudes()
    dk = 2 * np.pi / g.length
    kinetic = np.sum(_grid_sum(g, H.kinetic(g.k), p) * np.abs(phi) ** 2) * dk**p
    potential = np.sum(_grid_sum(g, H.potential(g.x), p) * psi.pdf()) * psi.volume_element
    return float(kinetic + potential)


def gaussian_packet(
    grid: SpatialGrid, center: float, width: float, momentum: float = 0.0
) -> WaveFunction:
    """Normalized packet ``exp(-(x-center)^2/(4 width^2) + i momentum x)``.

    ``width`` is the position standard deviation of the packet.
    """
    if width < 2 * grid.dx:
        raise ResolutionError(f"width {width:g} is below the grid resolution 2*dx = {2 * grid.dx:g}")
    if not grid.contains(center):
        raise DomainError(f"center {center:g} lies outside [{grid.x_min:g}, {grid.x_max:g}]")
    x = grid.x
    amps = np.exp(-((x - center) ** 2) / (4 * width**2) + 1j * momentum * x)
    return WaveFunction(grid, amps, 1).normalized()


def cat_state(
    grid: SpatialGrid, separation: float, width: float, center: float = 0.0
) -> WaveFunction:
    """Equal-weight superposition of packets at ``center +- separation/2``."""
    if separation < 4 * width:
        raise DomainError(
            f"branches overlap: separation {separation:g} < 4*width = {4 * width:g}"
        )
    left = gaussian_packet(grid, center - separation / 2, width)
    right = gaussian_packet(grid, center + separation / 2, width)
    return WaveFunction(grid, left.amplitudes + right.amplitudes, 1).normalized()


def product_state(first: WaveFunction, second: WaveFunction) -> WaveFunction:
    """Two-particle product state ``psi1(x1) psi2(x2)``."""
    _check_same_grid(first.grid, second.grid)
    if first.n_particles != 1 or second.n_particles != 1:
        raise DomainError("product_state takes two single-particle states")
    return WaveFunction(first.grid, np.outer(first.amplitudes, second.amplitudes), 2)


def pure_density(psi: WaveFunction) -> DensityMatrix:
    """``rho(x, x') = psi(x) conj(psi(x'))`` for a single particle."""
    if psi.n_particles != 1:
        raise DomainError("pure_density is only supported for single-particle states")
    return DensityMatrix(psi.grid, np.outer(psi.amplitudes, psi.amplitudes.conj()))


def trace_distance(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """Half the trace norm of ``rho1 - rho2`` as an operator on the grid."""
    _check_same_grid(rho1.grid, rho2.grid)
    diff = (rho1.elements - rho2.elements) * rho1.grid.dx
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def fidelity(psi1: WaveFunction, psi2: WaveFunction) -> float:
    """Overlap probability ``|<psi1|psi2>|^2`` of two pure states."""
    return abs(psi1.overlap(psi2)) ** 2


def spatial_entropy(psi: WaveFunction) -> float:
    """Shannon entropy of the grid-cell occupation probabilities ``|psi|^2 dx``."""
    p = psi.pdf().reshape(-1) * psi.volume_element
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def boundary_probability(psi: WaveFunction, margin: float = 0.05) -> float:
    """Probability within ``margin * length`` of either grid edge, any particle."""
    g = psi.grid
    near = (g.x < g.x_min + margin * g.length) | (g.x > g.x_max - margin * g.length)
    total = 0.0
    for k in range(psi.n_particles):
        total += float(np.sum(psi.marginal_pdf(k)[near]) * g.dx)
    return total


def check_boundary(psi: WaveFunction, threshold: float = 1e-6, margin: float = 0.05) -> float:
    """Warn with :class:`BoundaryWarning` if the edge probability exceeds ``threshold``."""
    prob = boundary_probability(psi, margin)
    if prob > threshold:
        warnings.warn(
            f"probability {prob:.2e} within {margin:.0%} of the periodic boundary",
            BoundaryWarning,
            stacklevel=2,
        )
    return prob
