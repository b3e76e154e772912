"""Command-line experiment harness.

Every subcommand reads an :class:`~collapsesim.config.ExperimentConfig`,
runs, and writes into the output directory::

    report.json        results, config hash and base seed; run_info holds the timestamp
    curves/*.csv       the data behind every plot
    plots/*.svg        line charts (skipped with --no-plots)
    events/*.jsonl     jump/kick logs of the first trajectories
    states/*.cstate    final mean and master densities

Exit status is 0 when the subcommand's check passes, 2 when it fails and 1
on any error (invalid configs print one line per offending field).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_default
from .core import pure_density
from .csl import run_csl_trajectory
from .ensemble import (
    average_ensemble,
    compare_to_master,
    fit_decay_rate,
    indistinguishability_test,
    trajectory_seed,
)
from .errors import CollapseSimError, ConfigError
from .grw import run_grw_trajectory
from .kick import kick_kernel, run_kick_trajectory
from .master import (
    DecoherenceKernel,
    csl_kernel,
    estimate_magnitudes,
    evolve_master_snapshots,
    grw_kernel,
    matched_csl_gamma,
)
from .rng import derive_stream
from .serialization import save_state, write_events

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULT_CONFIGS = {
    "grw-traj": "grw_cat",
    "kick-traj": "kick_cat",
    "csl-traj": "csl_cat",
    "master": "master_harmonic",
    "compare": "grw_cat",
    "indist": "grw_cat",
    "com-amplify": "com",
    "estimates": "estimates",
    "kernels": "grw_cat",
    "validate": "grw_cat",
}

# order-of-magnitude targets for the estimates subcommand
REFERENCE_RATE = 1e4
REFERENCE_PRECISION = 1e-7


class Output:
    """Collects files for one run under ``root``."""

    def __init__(self, root, plots: bool):
        self.root = Path(root)
        self.plots = plots
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def curve(self, name: str, columns: dict):
        path = self.path("curves", f"{name}.csv")
        keys = list(columns)
        rows = zip(*(np.asarray(columns[k]).tolist() for k in keys))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(keys)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        return path

    def plot(self, name: str, x, series: dict, xlabel: str, ylabel: str, logy: bool = False):
        if not self.plots:
            return None
        from .plotting import line_plot

        return line_plot(self.path("plots", f"{name}.svg"), x, series, xlabel, ylabel, name, logy)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# -- experiment building blocks ----------------------------------------------


def _trajectory_runner(config: ExperimentConfig, kind: str | None = None):
    kind = kind or config.model.kind
    psi0, H = config.initial_wavefunction(), config.hamiltonian
    if kind == "grw":
        return partial(run_grw_trajectory, psi0, H, config.grw_params(), config.t_final, dt_max=config.dt)
    if kind == "kick":
        return partial(run_kick_trajectory, psi0, H, config.kick_params(), config.t_final, dt_max=config.dt)
    if kind == "csl":
        if config.model.gamma is None or config.model.r_C is None or config.model.n_cells is None:
            raise ConfigError([("model", "CSL runs need gamma, r_C and n_cells")])
        return partial(run_csl_trajectory, psi0, H, config.csl_params(), config.t_final, config.dt)
    raise ConfigError([("model.kind", f"{kind!r} has no trajectory unraveling")])


def _master_solution(config: ExperimentConfig, kind: str | None = None, times=None):
    rho0 = pure_density(config.initial_wavefunction())
    times = config.snapshot_times if times is None else times
    return evolve_master_snapshots(rho0, config.hamiltonian, config.kernel(kind), times, config.dt)


def _invariants(states) -> dict:
    failures = []
    for i, rho in enumerate(states):
        try:
            rho.check_invariants()
        except CollapseSimError as exc:
            failures.append(f"state {i}: {exc}")
    return {"passed": not failures, "failures": failures}


def _ensemble(config, kind, threads, base_seed=None):
    seed = config.base_seed if base_seed is None else base_seed
    return average_ensemble(_trajectory_runner(config, kind), config.M, seed, config.snapshot_times, workers=threads)


def _write_event_logs(out: Output, config, kind, base_seed):
    if kind == "csl" or config.event_logs <= 0:
        return []
    runner = _trajectory_runner(config, kind)
    names = []
    for i in range(min(config.event_logs, config.M)):
        record = runner(seed=trajectory_seed(base_seed, i), snapshot_times=())
        name = f"{kind}_{i:04d}.jsonl"
        write_events(out.path("events", name), record.events)
        names.append(name)
    return names


def _ensemble_vs_master(config, kind, out: Output, threads, name):
    report = _ensemble(config, kind, threads)
    master = _master_solution(config, kind)
    comparison = compare_to_master(report, master, config.tolerance, name="master")
    a, b = config.probe_points()
    times = report.snapshot_times
    ens_off = np.abs(report.off_diagonal(a, b))
    master_off = np.abs([rho.element(a, b) for rho in master])
    out.curve(
        name,
        {
            "time": times,
            "offdiag_ensemble": ens_off,
            "offdiag_master": master_off,
            "trace_distance": comparison.distances,
            "bootstrap_error": report.bootstrap_error,
            "entropy_mean": report.entropy_mean,
            "entropy_sem": report.entropy_sem,
        },
    )
    out.plot(f"{name}_offdiag", times, {"ensemble": ens_off, "master": master_off}, "t", "|rho(a, b)|")
    out.plot(f"{name}_entropy", times, {"ensemble": report.entropy_mean}, "t", "mean trajectory entropy")
    out.plot(f"{name}_trace_distance", times, {"distance": comparison.distances}, "t", "trace distance")
    save_state(out.path("states", f"{name}_mean_final.cstate"), report.mean_density[-1])
    save_state(out.path("states", f"{name}_master_final.cstate"), master[-1])
    invariants = _invariants(report.mean_density + master)
    events = _write_event_logs(out, config, kind, config.base_seed)
    results = {
        "model": kind,
        "probe_points": [a, b],
        "ensemble": report.to_dict(),
        "comparison": comparison.to_dict(),
        "invariants": invariants,
        "event_logs": events,
    }
    if kind == "csl":
        results["signal"] = _signal_outputs(config, out)
        masses = report.branch_masses(config.initial_state.center)
        final = masses[:, -1]
        results["branch_mass"] = {
            "mean": [float(m) for m in masses.mean(axis=0)],
            "sem": [float(s) for s in masses.std(axis=0, ddof=1) / np.sqrt(report.M)],
            "decided_fraction": float(np.mean((final < 0.01) | (final > 0.99))),
            "upper_fraction": float(np.mean(final > 0.5)),
        }
    return results, comparison.passed and invariants["passed"]


def _signal_outputs(config, out: Output) -> dict:
    seed = trajectory_seed(config.base_seed, 0)
    record = _trajectory_runner(config, "csl")(seed=seed, snapshot_times=(), record_signal=True)
    sig = record.signal
    path = out.path("curves", "signal.csv")
    path.write_text(sig.to_csv())
    centre = len(sig.cells) // 2
    picks = sorted({centre - 4, centre, centre + 4} & set(range(len(sig.cells))))
    out.plot(
        "signal",
        sig.times,
        {f"x={sig.cells[c]:.2f}": sig.values[:, c] for c in picks},
        "t",
        "signal",
    )
    return {"trajectory_seed": seed, "cells": len(sig.cells), "steps": len(sig.times)}


# -- subcommands --------------------------------------------------------------


def cmd_traj(kind):
    def run(config, out, args):
        return _ensemble_vs_master(config, kind, out, args.threads, kind)

    return run


def cmd_compare(config, out, args):
    kind = config.model.kind
    if kind not in ("grw", "kick", "csl"):
        kind = "grw"
    return _ensemble_vs_master(config, kind, out, args.threads, f"compare_{kind}")


def cmd_master(config, out, args):
    kind = config.model.kind
    times = np.asarray(config.snapshot_times, dtype=float)
    states = _master_solution(config, kind, times)
    a, b = config.probe_points()
    off = np.abs([rho.element(a, b) for rho in states])
    purity = np.array([rho.purity() for rho in states])
    out.curve("master", {"time": times, "offdiag": off, "purity": purity})
    out.plot("master_offdiag", times, {"|rho(a, b)|": off}, "t", "|rho(a, b)|")
    out.plot("master_purity", times, {"purity": purity}, "t", "purity")
    save_state(out.path("states", "master_final.cstate"), states[-1])
    invariants = _invariants(states)
    results = {
        "kernel": config.kernel(kind).to_dict(),
        "probe_points": [a, b],
        "times": times.tolist(),
        "offdiag": off.tolist(),
        "purity": purity.tolist(),
        "invariants": invariants,
    }
    return results, invariants["passed"]


def cmd_indist(config, out, args):
    grw = _ensemble(config, "grw", args.threads)
    kick_seed = derive_stream(config.base_seed, 1).key
    kick = _ensemble(config, "kick", args.threads, kick_seed)
    result = indistinguishability_test(grw, kick)
    times = grw.snapshot_times
    out.curve(
        "indist",
        {
            "time": times,
            "trace_distance": result.distances,
            "combined_error": result.combined_error,
            "entropy_grw": grw.entropy_mean,
            "entropy_kick": kick.entropy_mean,
            "entropy_separation": result.entropy_separation,
        },
    )
    out.plot("indist_entropy", times, {"grw": grw.entropy_mean, "kick": kick.entropy_mean}, "t", "mean trajectory entropy")
    out.plot(
        "indist_distance",
        times,
        {"trace distance": result.distances, "3 x combined error": 3 * result.combined_error},
        "t",
        "distance",
    )
    invariants = _invariants(grw.mean_density + kick.mean_density)
    results = {
        "grw": grw.to_dict(),
        "kick": kick.to_dict(),
        "test": result.to_dict(),
        "invariants": invariants,
    }
    passed = result.indistinguishable and result.trajectory_level_differs and invariants["passed"]
    return results, passed


def cmd_com(config, out, args):
    """Decay rate of the c.o.m. coherence for each N in ``com_N_values``.

    Times are the configured snapshot times divided by N, so every run
    covers the same number of decay constants.  Ratios are taken against the
    single-constituent master rate; trajectory rates use inverse-variance
    weights from the ensemble's own Monte Carlo errors.
    """
    base_times = np.asarray(config.snapshot_times, dtype=float)
    a, b = config.probe_points()
    rho0 = pure_density(config.initial_wavefunction())
    lam, sigma = config.model.lambda_rate, config.model.sigma
    single = evolve_master_snapshots(rho0, config.hamiltonian, DecoherenceKernel.grw(lam, sigma), base_times, config.dt)
    reference = fit_decay_rate(base_times, np.abs([rho.element(a, b) for rho in single])).rate
    rows, master_rates, traj_rates, traj_errs = [], [], [], []
    for N in config.com_N_values:
        N = int(N)
        times = base_times / N
        kernel = DecoherenceKernel.grw(N * lam, sigma)
        master = evolve_master_snapshots(rho0, config.hamiltonian, kernel, times, config.dt / N)
        m_off = np.abs([rho.element(a, b) for rho in master])
        sub = replace(config, t_final=config.t_final / N, dt=config.dt / N)
        runner = partial(
            run_grw_trajectory,
            sub.initial_wavefunction(),
            sub.hamiltonian,
            sub.grw_params(com_N=N),
            sub.t_final,
            dt_max=sub.dt,
        )
        seed = derive_stream(config.base_seed, N).key
        report = average_ensemble(runner, config.M, seed, times, workers=args.threads)
        t_off = np.abs(report.off_diagonal(a, b))
        t_sem = report.off_diagonal_sem(a, b)
        master_rates.append(fit_decay_rate(times, m_off).rate)
        traj_rates.append(fit_decay_rate(times, t_off, t_sem).rate)
        rows.append(
            {
                "N": N,
                "base_seed": seed,
                "times": times.tolist(),
                "offdiag_master": m_off.tolist(),
                "offdiag_ensemble": t_off.tolist(),
                "offdiag_ensemble_sem": t_sem.tolist(),
            }
        )
        out.curve(
            f"com_N{N}",
            {"time": times, "offdiag_master": m_off, "offdiag_ensemble": t_off, "offdiag_ensemble_sem": t_sem},
        )
    Ns = np.array([int(n) for n in config.com_N_values])
    master_ratio = np.array(master_rates) / reference
    traj_ratio = np.array(traj_rates) / reference
    master_err = np.abs(master_ratio / Ns - 1)
    traj_err = np.abs(traj_ratio / Ns - 1)
    out.curve(
        "com_rates",
        {
            "N": Ns,
            "rate_master": master_rates,
            "rate_ensemble": traj_rates,
            "ratio_master": master_ratio,
            "ratio_ensemble": traj_ratio,
        },
    )
    out.plot(
        "com_rates",
        Ns,
        {"master": master_rates, "ensemble": traj_rates, "N x single rate": Ns * reference},
        "N",
        "fitted decay rate",
        logy=True,
    )
    passed = bool(np.all(master_err <= 0.01) and np.all(traj_err <= config.tolerance))
    results = {
        "N": Ns.tolist(),
        "reference_rate": reference,
        "rate_master": master_rates,
        "rate_ensemble": traj_rates,
        "ratio_master": master_ratio.tolist(),
        "ratio_ensemble": traj_ratio.tolist(),
        "relative_error_master": master_err.tolist(),
        "relative_error_ensemble": traj_err.tolist(),
        "series": rows,
    }
    return results, passed


def cmd_estimates(config, out, args):
    e = config.estimates
    A = args.constituents if args.constituents is not None else e.constituents
    lam = args.lambda_rate if args.lambda_rate is not None else e.lambda_rate
    r_C = args.r_C if args.r_C is not None else e.r_C
    mags = estimate_magnitudes(A, lam, r_C)
    rate_decades = abs(np.log10(mags.measurements_per_second / REFERENCE_RATE))
    precision_decades = abs(np.log10(mags.collective_precision / REFERENCE_PRECISION))
    out.curve(
        "estimates",
        {
            "quantity": ["measurements_per_second", "collective_precision", "sigma"],
            "value": [mags.measurements_per_second, mags.collective_precision, mags.sigma],
        },
    )
    print(f"N = A lambda = {mags.measurements_per_second:.3g} per second")
    print(f"sigma / sqrt(N) = {mags.collective_precision:.3g} (units of r_C)")
    results = {
        **mags.to_dict(),
        "reference_rate": REFERENCE_RATE,
        "reference_precision": REFERENCE_PRECISION,
        "rate_decades_off": float(rate_decades),
        "precision_decades_off": float(precision_decades),
    }
    return results, bool(rate_decades <= 1 and precision_decades <= 1)


def cmd_kernels(config, out, args):
    m = config.model
    lam, sigma = m.lambda_rate, m.sigma
    r_C = np.sqrt(2.0) * sigma
    d = np.linspace(0.0, 12.0 * sigma, 241)
    grw = grw_kernel(d, lam, sigma)
    kick = lam * (1.0 - kick_kernel(d, sigma, m.kick_variance_mode))
    csl3 = csl_kernel(d, matched_csl_gamma(lam, r_C, 3), r_C, 3)
    csl1 = csl_kernel(d, matched_csl_gamma(lam, r_C, 1), r_C, 1)
    out.curve("kernels", {"separation": d, "grw": grw, "kick": kick, "csl_3d": csl3, "csl_1d": csl1})
    out.plot("kernels", d, {"grw": grw, "kick": kick, "csl (3-D matched)": csl3}, "separation", "decoherence rate")
    diffs = {
        "kick_vs_grw": float(np.max(np.abs(kick - grw))),
        "csl_3d_vs_grw": float(np.max(np.abs(csl3 - grw))),
        "csl_1d_vs_grw": float(np.max(np.abs(csl1 - grw))),
    }
    for key, value in diffs.items():
        print(f"max |{key.replace('_vs_', ' - ')}| = {value:.3g}")
    results = {"lambda_rate": lam, "sigma": sigma, "r_C": r_C, "max_abs_difference": diffs}
    return results, all(v <= 1e-15 * max(lam, 1.0) for v in diffs.values())


COMMANDS = {
    "grw-traj": (cmd_traj("grw"), "GRW trajectory ensemble compared with its master equation"),
    "kick-traj": (cmd_traj("kick"), "random-kick ensemble compared with its master equation"),
    "csl-traj": (cmd_traj("csl"), "CSL ensemble, branch masses and a monitoring signal"),
    "master": (cmd_master, "deterministic master-equation solve"),
    "compare": (cmd_compare, "ensemble of the configured model against the master equation"),
    "indist": (cmd_indist, "GRW versus kick indistinguishability test"),
    "com-amplify": (cmd_com, "centre-of-mass decay rate against the number of constituents"),
    "estimates": (cmd_estimates, "order-of-magnitude collapse estimates for a macroscopic body"),
    "kernels": (cmd_kernels, "tabulate the GRW, kick and CSL decoherence kernels"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collapsesim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "estimates":
            p.add_argument("--constituents", type=float, help="number of constituents A")
            p.add_argument("--lambda-rate", type=float, help="per-constituent rate")
            p.add_argument("--r-C", dest="r_C", type=float, help="localization length")
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config_path", nargs="?", help="config file (default: --config or the shipped GRW config)")
    _common(p)
    return parser


def _common(p):
    p.add_argument("--config", help="JSON experiment config (default: a shipped config)")
    p.add_argument("--seed", type=int, help="override base_seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    p.add_argument("--no-plots", action="store_true", help="skip SVG output")


def _load(args) -> ExperimentConfig:
    path = getattr(args, "config_path", None) or args.config
    config = ExperimentConfig.load(path) if path else load_default(DEFAULT_CONFIGS[args.command])
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError([("--seed", "must be an unsigned 64-bit integer")])
        config = replace(config, base_seed=args.seed)
    return config


def _validate(args) -> int:
    try:
        config = _load(args)
    except ConfigError as exc:
        for field_name, message in exc.problems:
            print(f"error\t{field_name}\t{message}")
        return EXIT_ERROR
    errors, warnings = config.diagnose()
    for field_name, message in errors:
        print(f"error\t{field_name}\t{message}")
    for field_name, message in warnings:
        print(f"warning\t{field_name}\t{message}")
    if not errors:
        print(f"valid\t{config.name}\t{len(warnings)} warning(s)")
    return EXIT_ERROR if errors else EXIT_PASS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _validate(args)
    try:
        config = _load(args)
        if args.threads < 1:
            raise ConfigError([("--threads", "must be >= 1")])
        out = Output(args.out or config.output_dir, plots=not args.no_plots)
        run, _ = COMMANDS[args.command]
        results, passed = run(config, out, args)
    except ConfigError as exc:
        for field_name, message in exc.problems:
            print(f"error\t{field_name}\t{message}", file=sys.stderr)
        return EXIT_ERROR
    except (CollapseSimError, OSError, ValueError) as exc:
        print(f"error\t{type(exc).__name__}\t{exc}", file=sys.stderr)
        return EXIT_ERROR

    report = {
        "command": args.command,
        "config_hash": config.digest(),
        "base_seed": config.base_seed,
        "config": config.to_dict(),
        "passed": bool(passed),
        "results": _jsonable(results),
        "run_info": {
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__,
            "threads": args.threads,
        },
    }
    path = out.path("report.json")
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{args.command}\t{'pass' if passed else 'FAIL'}\t{path}")
    return EXIT_PASS if passed else EXIT_FAIL


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


if __name__ == "__main__":
    sys.exit(main())
