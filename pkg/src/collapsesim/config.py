"""Experiment configs: JSON files with a versioned schema.

Example::

    {
      "schema_version": 1,
      "name": "grw_cat",
      "grid": {"x_min": -8, "x_max": 8, "n_points": 64},
      "initial_state": {"kind": "cat", "separation": 4.0, "width": 0.5},
      "hamiltonian": {"kind": "zero"},
      "model": {"kind": "grw", "lambda_rate": 1.0, "sigma": 0.5},
      "M": 2000, "t_final": 2.0, "dt": 0.05,
      "snapshot_times": [0.4, 0.8, 1.2, 1.6, 2.0],
      "base_seed": 20261015
    }

``dt`` is the micro-step between jumps for GRW/kick trajectories, the
Euler-Maruyama step for CSL and the Strang step for master equations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import (
    Hamiltonian,
    SpatialGrid,
    boundary_probability,
    cat_state,
    gaussian_packet,
    max_stable_dt,
)
from .csl import CslParams
from .errors import CollapseSimError, ConfigError
from .grw import GrwParams
from .kick import KICK_VARIANCE_MODES, KickParams
from .master import DECOHERENCE_STEP_LIMIT, DecoherenceKernel

SCHEMA_VERSION = 1
MODEL_KINDS = ("grw", "kick", "csl", "master-grw", "master-csl", "com")
BOUNDARY_THRESHOLD = 1e-6


@dataclass(frozen=True)
class InitialStateSpec:
    kind: str = "cat"
    center: float = 0.0
    width: float = 0.5
    momentum: float = 0.0
    separation: float = 4.0


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "grw"
    lambda_rate: float = 1.0
    sigma: float = 0.5
    com_rigid: bool = False
    com_N: int = 1
    kick_variance_mode: str = "matched"
    gamma: float | None = None
    r_C: float | None = None
    n_cells: int | None = None
    weights: tuple = (1.0,)
    dimension: int = 1


@dataclass(frozen=True)
class EstimatesSpec:
    constituents: float = 6.022e23
    lambda_rate: float = 1e-19
    r_C: float = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    grid: SpatialGrid
    initial_state: InitialStateSpec
    hamiltonian: Hamiltonian
    model: ModelSpec
    M: int = 2000
    t_final: float = 2.0
    dt: float = 0.05
    snapshot_times: tuple = (0.4, 0.8, 1.2, 1.6, 2.0)
    base_seed: int = 20261015
    tolerance: float = 0.05
    com_N_values: tuple = (1, 10, 100)
    estimates: EstimatesSpec = field(default_factory=EstimatesSpec)
    event_logs: int = 10
    name: str = "experiment"
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        problems = []
        if not isinstance(data, dict):
            raise ConfigError([("<root>", "config must be a JSON object")])
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            problems.append(("schema_version", f"unsupported version {version}"))

        def section(name, factory, required=True):
            raw = data.get(name)
            if raw is None:
                if required:
                    problems.append((name, "missing section"))
                return None
            if not isinstance(raw, dict):
                problems.append((name, "must be an object"))
                return None
            known = {f.name for f in fields(factory)} if hasattr(factory, "__dataclass_fields__") else None
            for key in raw:
                if known is not None and key not in known:
                    problems.append((f"{name}.{key}", "unknown field"))
            try:
                return factory(**{k: v for k, v in raw.items() if known is None or k in known})
            except (CollapseSimError, TypeError, ValueError) as exc:
                problems.append((name, str(exc)))
                return None

        grid = section("grid", SpatialGrid)
        initial = section("initial_state", InitialStateSpec)
        hamiltonian = section("hamiltonian", Hamiltonian)
        model = section("model", ModelSpec)
        estimates = section("estimates", EstimatesSpec, required=False) or EstimatesSpec()

        top = {f.name for f in fields(cls)}
        for key in data:
            if key not in top:
                problems.append((key, "unknown field"))
        scalars = {}
        for key in ("M", "t_final", "dt", "base_seed", "tolerance", "event_logs", "name", "output_dir"):
            if key in data:
                scalars[key] = data[key]
        for key in ("snapshot_times", "com_N_values"):
            if key in data:
                scalars[key] = tuple(data[key])
        if model is not None:
            model = replace(model, weights=tuple(float(w) for w in model.weights))
        if problems:
            raise ConfigError(problems)
        config = cls(grid, initial, hamiltonian, model, estimates=estimates, **scalars)
        errors = [p for p in config.diagnose()[0]]
        if errors:
            raise ConfigError(errors)
        return config

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([(f"line {exc.lineno} column {exc.colno}", exc.msg)]) from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {
            "schema_version": self.schema_version,
            "name": self.name,
            "grid": self.grid.to_dict(),
            "initial_state": asdict(self.initial_state),
            "hamiltonian": self.hamiltonian.to_dict(),
            "model": {**asdict(self.model), "weights": list(self.model.weights)},
            "M": self.M,
            "t_final": self.t_final,
            "dt": self.dt,
            "snapshot_times": list(self.snapshot_times),
            "base_seed": self.base_seed,
            "tolerance": self.tolerance,
            "com_N_values": list(self.com_N_values),
            "estimates": asdict(self.estimates),
            "event_logs": self.event_logs,
            "output_dir": self.output_dir,
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    # -- derived objects --------------------------------------------------

    def initial_wavefunction(self):
        s = self.initial_state
        if s.kind == "cat":
            return cat_state(self.grid, s.separation, s.width, s.center)
        return gaussian_packet(self.grid, s.center, s.width, s.momentum)

    def probe_points(self) -> tuple[float, float]:
        """Pair of positions whose coherence is tracked in decay curves."""
        s = self.initial_state
        half = s.separation / 2 if s.kind == "cat" else 2 * s.width
        return s.center - half, s.center + half

    def grw_params(self, com_N: int | None = None) -> GrwParams:
        m = self.model
        rigid = m.com_rigid or com_N is not None or m.kind == "com"
        return GrwParams(m.lambda_rate, m.sigma, 1, rigid, com_N or m.com_N)

    def kick_params(self) -> KickParams:
        m = self.model
        return KickParams(m.lambda_rate, m.sigma, 1, m.com_rigid, m.com_N, m.kick_variance_mode)

    def csl_params(self) -> CslParams:
        m = self.model
        return CslParams(m.gamma, m.r_C, m.n_cells, None, m.weights)

    def kernel(self, kind: str | None = None) -> DecoherenceKernel:
        m = self.model
        kind = kind or m.kind
        if kind in ("csl", "master-csl"):
            return DecoherenceKernel.csl(m.gamma, m.r_C, 1)
        if kind == "kick":
            return DecoherenceKernel.kick(m.lambda_rate, m.sigma, m.kick_variance_mode)
        if kind == "com" or m.com_rigid:
            return DecoherenceKernel.grw(m.com_N * m.lambda_rate, m.sigma)
        return DecoherenceKernel.grw(m.lambda_rate, m.sigma)

    # -- validation -------------------------------------------------------

    def diagnose(self) -> tuple[list, list]:
        """Evaluate every downstream precondition; returns ``(errors, warnings)``."""
        errors, warnings = [], []
        g, s, m, H = self.grid, self.initial_state, self.model, self.hamiltonian
        dx = g.dx

        if s.kind not in ("cat", "packet"):
            errors.append(("initial_state.kind", f"must be 'cat' or 'packet', got {s.kind!r}"))
        if s.width < 2 * dx:
            errors.append(("initial_state.width", f"{s.width:g} is below the grid resolution 2*dx = {2 * dx:g}"))
        if s.kind == "cat" and s.separation < 4 * s.width:
            errors.append(("initial_state.separation", f"must be >= 4*width = {4 * s.width:g}"))
        if not g.contains(s.center):
            errors.append(("initial_state.center", "outside the grid"))

        if m.kind not in MODEL_KINDS:
            errors.append(("model.kind", f"must be one of {MODEL_KINDS}, got {m.kind!r}"))
        if m.lambda_rate < 0:
            errors.append(("model.lambda_rate", "must be >= 0"))
        if not m.sigma > 0:
            errors.append(("model.sigma", "must be positive"))
        elif m.kind in ("grw", "com") and m.sigma < 2 * dx:
            errors.append(("model.sigma", f"{m.sigma:g} is below the grid resolution 2*dx = {2 * dx:g}"))
        if m.com_N < 1:
            errors.append(("model.com_N", "must be a positive integer"))
        if m.kick_variance_mode not in KICK_VARIANCE_MODES:
            errors.append(("model.kick_variance_mode", f"must be one of {KICK_VARIANCE_MODES}"))
        if m.dimension not in (1, 3):
            errors.append(("model.dimension", "must be 1 or 3"))
        csl = m.kind in ("csl", "master-csl")
        if csl:
            for name in ("gamma", "r_C", "n_cells"):
                if getattr(m, name) is None:
                    errors.append((f"model.{name}", "required for CSL models"))
        if self.M < 1:
            errors.append(("M", "must be >= 1"))
        elif self.M == 1 and not m.kind.startswith("master"):
            warnings.append(("M", "a single trajectory gives no error estimate"))
        if not self.t_final > 0:
            errors.append(("t_final", "must be positive"))
        if not self.dt > 0:
            errors.append(("dt", "must be positive"))
        times = np.asarray(self.snapshot_times, dtype=float)
        if times.size == 0:
            errors.append(("snapshot_times", "at least one time is required"))
        elif np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > self.t_final:
            errors.append(("snapshot_times", "must be sorted and lie in [0, t_final]"))
        if any(int(n) != n or n < 1 for n in self.com_N_values):
            errors.append(("com_N_values", "must be positive integers"))
        if errors:
            return errors, warnings

        # preconditions that need the objects built above
        if m.kind == "csl":
            try:
                params = self.csl_params().validate(g)
            except CollapseSimError as exc:
                errors.append(("model", str(exc)))
            else:
                if self.dt > params.max_dt():
                    errors.append(
                        ("dt", f"too large for gamma={m.gamma:g}; suggested dt <= {params.max_dt():.6g}")
                    )
                steps = times / self.dt
                if np.any(np.abs(steps - np.rint(steps)) > 1e-9) or abs(
                    self.t_final / self.dt - round(self.t_final / self.dt)
                ) > 1e-9:
                    errors.append(("snapshot_times", "CSL snapshot times and t_final must be multiples of dt"))
        elif csl:
            if not (m.gamma > 0 and m.r_C > 0):
                errors.append(("model.gamma", "gamma and r_C must be positive"))
        if not errors:
            try:
                k_max = float(np.max(self.kernel().matrix(g)))
            except CollapseSimError as exc:
                errors.append(("model", str(exc)))
                k_max = 0.0
            if m.kind in ("master-grw", "master-csl", "com") and k_max * self.dt > DECOHERENCE_STEP_LIMIT:
                errors.append(
                    ("dt", f"too large for the decoherence rate; suggested dt <= {DECOHERENCE_STEP_LIMIT / k_max:.6g}")
                )
        limit = max_stable_dt(g, H)
        factor = 2 if m.kind.startswith("master") else 1
        if self.dt > factor * limit:
            errors.append(("dt", f"exceeds the split-step stability bound; suggested dt <= {factor * limit:.6g}"))

        if not errors:
            try:
                prob = boundary_probability(self.initial_wavefunction())
            except CollapseSimError as exc:
                errors.append(("initial_state", str(exc)))
            else:
                if prob > BOUNDARY_THRESHOLD:
                    warnings.append(("initial_state", f"boundary probability {prob:.2e} exceeds 1e-6"))
        return errors, warnings


def default_config_path(name: str = "grw_cat"):
    return resources.files("collapsesim") / "configs" / f"{name}.json"


def load_default(name: str = "grw_cat") -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(default_config_path(name).read_text()))
