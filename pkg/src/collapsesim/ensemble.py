"""Deterministic trajectory ensembles and the statistics built on them.

Trajectory ``i`` of an ensemble with base seed ``s`` runs with seed
``derive_stream(s, i).key``.  Workers only change where trajectories run;
snapshots are gathered into an index-ordered array before any reduction, so a
report is bit-identical for any worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DensityMatrix, SpatialGrid, _check_same_grid, trace_distance
from .errors import DomainError, TrajectoryError
from .grw import TrajectoryRecord
from .rng import BOOTSTRAP, derive_stream

#: Keys of a report's ``setup`` that must agree between two compared ensembles.
SHARED_SETUP_KEYS = ("grid", "hamiltonian", "psi0_digest", "t_final", "lambda_rate", "sigma", "n_particles")


def trajectory_seed(base_seed: int, index: int) -> int:
    return derive_stream(base_seed, index).key


def _run_one(runner, seed, snapshot_times):
    try:
        return runner(seed=seed, snapshot_times=snapshot_times)
    except Exception as exc:  # re-raised with the seed attached
        raise TrajectoryError(f"trajectory with seed {seed} failed: {exc!r}", seed) from exc


def _run_chunk(runner, seeds, snapshot_times):
    return [_run_one(runner, s, snapshot_times) for s in seeds]


def run_trajectories(
    runner: Callable, M: int, base_seed: int, snapshot_times: Sequence[float], workers: int = 1
) -> list[TrajectoryRecord]:
    """Run ``M`` trajectories, returned in index order."""
    seeds = [trajectory_seed(base_seed, i) for i in range(M)]
    if workers <= 1:
        return _run_chunk(runner, seeds, snapshot_times)
    n_chunks = min(M, 4 * workers)
    bounds = np.linspace(0, M, n_chunks + 1).astype(int)
    chunks = [seeds[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [runner] * len(chunks), chunks, [snapshot_times] * len(chunks))
        return [rec for part in parts for rec in part]


def _mean_densities(amps: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted mean of ``|psi><psi|`` per snapshot; ``amps`` is (M, S, n)."""
    M = amps.shape[0]
    w = np.full(M, 1.0 / M) if weights is None else weights
    left = amps.transpose(1, 2, 0) * w  # (S, n, M)
    return left @ amps.transpose(1, 0, 2).conj()


def _entropies(amps: np.ndarray, dx: float) -> np.ndarray:
    p = (amps.real**2 + amps.imag**2) * dx
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


@dataclass
class Comparison:
    passed: bool
    distances: np.ndarray
    thresholds: np.ndarray
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "distances": [float(d) for d in self.distances],
            "thresholds": [float(t) for t in self.thresholds],
            "tolerance": self.tolerance,
        }


@dataclass
class EnsembleReport:
    M: int
    base_seed: int
    snapshot_times: np.ndarray
    mean_density: list
    bootstrap_error: np.ndarray
    entropy_mean: np.ndarray
    entropy_sem: np.ndarray
    setup: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)
    amplitudes: np.ndarray | None = None
    records: list | None = None
    single_trajectory: bool = False

    @property
    def grid(self) -> SpatialGrid:
        return self.mean_density[0].grid

    def off_diagonal(self, x_a: float, x_b: float) -> np.ndarray:
        ia, ib = self.grid.index_of(x_a), self.grid.index_of(x_b)
        return np.array([rho.elements[ia, ib] for rho in self.mean_density])

    def off_diagonal_sem(self, x_a: float, x_b: float) -> np.ndarray:
        """Monte Carlo standard error of :meth:`off_diagonal` per snapshot."""
        if self.amplitudes is None:
            raise DomainError("report was built without keeping amplitudes")
        if self.M < 2:
            return np.full(len(self.snapshot_times), np.nan)
        ia, ib = self.grid.index_of(x_a), self.grid.index_of(x_b)
        values = self.amplitudes[:, :, ia] * np.conj(self.amplitudes[:, :, ib])
        spread = np.sum(np.abs(values - values.mean(axis=0)) ** 2, axis=0) / (self.M - 1)
        return np.sqrt(spread / self.M)

    def branch_masses(self, threshold: float = 0.0) -> np.ndarray:
        """Per-trajectory probability at ``x > threshold``, shape (M, S)."""
        if self.amplitudes is None:
            raise DomainError("report was built without keeping amplitudes")
        mask = self.grid.x > threshold
        p = np.abs(self.amplitudes) ** 2 * self.grid.dx
        return p[..., mask].sum(axis=-1)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "base_seed": self.base_seed,
            "snapshot_times": [float(t) for t in self.snapshot_times],
            "bootstrap_error": [float(e) for e in self.bootstrap_error],
            "entropy_mean": [float(e) for e in self.entropy_mean],
            "entropy_sem": [float(e) for e in self.entropy_sem],
            "single_trajectory": self.single_trajectory,
            "setup": self.setup,
            "comparisons": {k: v.to_dict() for k, v in self.comparisons.items()},
        }


def bootstrap_errors(amps: np.ndarray, dx: float, base_seed: int, n_bootstrap: int = 200) -> np.ndarray:
    """Mean trace distance between resampled and full ensemble means, per snapshot."""
    M, S, n = amps.shape
    full = _mean_densities(amps)
    rng = derive_stream(base_seed, BOOTSTRAP).generator()
    dist = np.zeros((n_bootstrap, S))
    for b in range(n_bootstrap):
        counts = np.bincount(rng.integers(0, M, M), minlength=M) / M
        resampled = _mean_densities(amps, counts)
        diff = (resampled - full) * dx
        diff = 0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2)))
        dist[b] = 0.5 * np.abs(np.linalg.eigvalsh(diff)).sum(axis=-1)
    return dist.mean(axis=0)


def average_ensemble(
    runner: Callable,
    M: int,
    base_seed: int,
    snapshot_times: Sequence[float],
    workers: int = 1,
    n_bootstrap: int = 200,
    keep_records: bool = False,
) -> EnsembleReport:
    """Mean density over ``M`` trajectories at each snapshot time.

    ``runner(seed=..., snapshot_times=...)`` must return a single-particle
    :class:`TrajectoryRecord` with one snapshot per requested time.  ``M = 1``
    is accepted for debugging; the report is then flagged and carries NaN
    error bars.
    """
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    times = np.asarray(snapshot_times, dtype=float)
    if times.size == 0:
        raise DomainError("at least one snapshot time is required")
    if n_bootstrap < 100:
        raise DomainError("at least 100 bootstrap resamples are required")
    records = run_trajectories(runner, M, base_seed, times, workers)
    first = records[0]
    if first.snapshots[0].n_particles != 1:
        raise DomainError("ensemble averaging needs single-particle trajectories")
    grid = first.snapshots[0].grid
    amps = np.array([[s.amplitudes for s in r.snapshots] for r in records])
    if amps.shape[1] != times.size:
        raise DomainError("runner returned the wrong number of snapshots")
    report = report_from_amplitudes(amps, grid, times, base_seed, dict(first.params), n_bootstrap)
    if keep_records:
        report.records = records
    return report


def report_from_amplitudes(
    amps: np.ndarray,
    grid: SpatialGrid,
    snapshot_times: Sequence[float],
    base_seed: int,
    setup: dict | None = None,
    n_bootstrap: int = 200,
) -> EnsembleReport:
    """Ensemble statistics from stacked single-particle amplitudes ``(M, S, n)``."""
    amps = np.asarray(amps, dtype=complex)
    times = np.asarray(snapshot_times, dtype=float)
    if amps.ndim != 3 or amps.shape[1] != times.size or amps.shape[2] != grid.n_points:
        raise DomainError(f"amplitudes of shape {amps.shape} do not match {times.size} snapshots on the grid")
    if n_bootstrap < 100:
        raise DomainError("at least 100 bootstrap resamples are required")
    M = amps.shape[0]
    means = [DensityMatrix(grid, rho) for rho in _mean_densities(amps)]
    entropies = _entropies(amps, grid.dx)
    single = M == 1
    if single:
        warnings.warn("ensemble of a single trajectory: no error estimate", stacklevel=3)
        errors = np.full(times.size, np.nan)
        sem = np.full(times.size, np.nan)
    else:
        errors = bootstrap_errors(amps, grid.dx, base_seed, n_bootstrap)
        sem = entropies.std(axis=0, ddof=1) / np.sqrt(M)

    return EnsembleReport(
        M=M,
        base_seed=int(base_seed),
        snapshot_times=times,
        mean_density=means,
        bootstrap_error=errors,
        entropy_mean=entropies.mean(axis=0),
        entropy_sem=sem,
        setup=dict(setup or {}),
        amplitudes=amps,
        single_trajectory=single,
    )


def compare_to_master(
    report: EnsembleReport, master_solution: Sequence[DensityMatrix], tolerance: float, name: str | None = None
) -> Comparison:
    """Per-snapshot trace distance to a master solution.

    Passes when every distance is at most ``max(tolerance, 3 * bootstrap_error)``.
    """
    if len(master_solution) != len(report.mean_density):
        raise DomainError(
            f"{len(master_solution)} master snapshots for {len(report.mean_density)} ensemble snapshots"
        )
    for rho in master_solution:
        _check_same_grid(report.grid, rho.grid)
    distances = np.array(
        [trace_distance(a, b) for a, b in zip(report.mean_density, master_solution)]
    )
    errors = np.nan_to_num(report.bootstrap_error, nan=0.0)
    thresholds = np.maximum(tolerance, 3.0 * errors)
    result = Comparison(bool(np.all(distances <= thresholds)), distances, thresholds, tolerance)
    if name:
        report.comparisons[name] = result
    return result


@dataclass
class IndistinguishabilityResult:
    indistinguishable: bool
    distances: np.ndarray
    combined_error: np.ndarray
    entropy_separation: np.ndarray
    trajectory_level_differs: bool
    M: tuple

    def to_dict(self) -> dict:
        return {
            "indistinguishable": bool(self.indistinguishable),
            "distances": [float(d) for d in self.distances],
            "combined_error": [float(e) for e in self.combined_error],
            "entropy_separation": [None if np.isnan(s) else float(s) for s in self.entropy_separation],
            "trajectory_level_differs": bool(self.trajectory_level_differs),
            "M": list(self.M),
        }


def indistinguishability_test(
    report_a: EnsembleReport, report_b: EnsembleReport, separation_sigmas: float = 5.0
) -> IndistinguishabilityResult:
    """Can the averaged states of two ensembles be told apart?

    The ensembles are declared indistinguishable when at every snapshot the
    trace distance of their mean densities is within three combined bootstrap
    errors.  Independently, the mean spatial entropy of individual
    trajectories is compared; ``trajectory_level_differs`` is set when the
    two entropy curves separate by more than ``separation_sigmas`` combined
    standard errors at some snapshot.
    """
    if not np.array_equal(report_a.snapshot_times, report_b.snapshot_times):
        raise DomainError("reports have different snapshot times")
    _check_same_grid(report_a.grid, report_b.grid)
    for key in SHARED_SETUP_KEYS:
        if key in report_a.setup and key in report_b.setup and report_a.setup[key] != report_b.setup[key]:
            raise DomainError(f"setup mismatch on {key!r}: {report_a.setup[key]} vs {report_b.setup[key]}")
    if report_a.base_seed == report_b.base_seed:
        raise DomainError("ensembles must use independent base seeds")

    distances = np.array(
        [trace_distance(a, b) for a, b in zip(report_a.mean_density, report_b.mean_density)]
    )
    combined = np.hypot(report_a.bootstrap_error, report_b.bootstrap_error)
    same = bool(np.all(distances <= 3.0 * combined + 1e-12))
    sem = np.hypot(report_a.entropy_sem, report_b.entropy_sem)
    gap = np.abs(report_a.entropy_mean - report_b.entropy_mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        separation = np.where(sem > 0, gap / sem, np.nan)
    differs = bool(np.nanmax(separation, initial=0.0) > separation_sigmas)
    return IndistinguishabilityResult(same, distances, combined, separation, differs, (report_a.M, report_b.M))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    residual: float


def fit_decay_rate(
    times: Sequence[float], magnitudes: Sequence[float], errors: Sequence[float] | None = None
) -> DecayFit:
    """Least-squares fit of ``log|m| = intercept - rate * t``.

    With ``errors`` (standard errors of the magnitudes) each point is
    weighted by ``m / error``, the inverse error of ``log m``.
    """
    t = np.asarray(times, dtype=float)
    m = np.asarray(magnitudes, dtype=float)
    if t.size < 5 or t.size != m.size:
        raise DomainError("need at least 5 (time, magnitude) pairs")
    if np.any(m <= 0):
        raise DomainError("non-positive magnitude: decay fell below the noise floor")
    w = None
    if errors is not None:
        e = np.asarray(errors, dtype=float)
        if e.shape != m.shape or np.any(~(e > 0)):
            raise DomainError("errors must be positive and match the magnitudes")
        w = m / e
    slope, intercept = np.polyfit(t, np.log(m), 1, w=w)
    resid = np.log(m) - (intercept + slope * t)
    return DecayFit(float(-slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


def log_log_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Slope of ``log y`` against ``log x`` (Monte Carlo convergence order)."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
