"""Experiment dispatch and artifact writing.

Every run leaves a directory named <mode>-<confighash>-s<seed> containing
deterministic report artifacts (CSV/JSON, identical bytes for identical
config+seed regardless of thread count) plus a manifest and timing files,
which carry wall-clock data and are exempt from the byte-identity contract.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    Diagnostic,
    ExperimentConfig,
    build_control,
    build_initial_configuration,
    build_kernel,
    build_limit_spec,
    build_problem,
    config_hash,
)
from .control import ControlSignal, control_to_csv
from .dynamics import TimeGrid, envelopes, integrate
from .limits import (
    ConvergenceReport,
    gamma_convergence_experiment,
    meanfield_convergence_experiment,
    optimal_control_sweep,
    stability_experiment,
)
from .measures import config_norm

OUTPUT_ENV_VAR = "SPARSEFLOCK_OUT"


@dataclass
class RunResult:
    exit_code: int
    run_dir: Path | None = None
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    failure: str | None = None


def set_worker_threads(requested: int | None) -> int:
    """Clamp and apply the numba thread count; returns the effective value."""
    import numba

    if requested is None:
        return numba.get_num_threads()
    limit = numba.config.NUMBA_NUM_THREADS
    effective = max(1, min(int(requested), limit))
    numba.set_num_threads(effective)
    return effective


def resolve_out_dir(cfg: ExperimentConfig | None, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg is not None and cfg.output.directory:
        return Path(cfg.output.directory)
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return Path(env)
    return Path.cwd() / "runs"


def _float_repr(v) -> str:
    return repr(float(v))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [_float_repr(v) if isinstance(v, (float, np.floating)) else v for v in row]
        )
    return buf.getvalue()


def _json_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _trajectory_csv(traj, every: int) -> str:
    d = traj.y.shape[2]
    header = ["t", "role", "index"] + [f"p{i + 1}" for i in range(d)] + [
        f"q{i + 1}" for i in range(d)
    ]
    rows = []
    picks = list(range(0, traj.n_instants, every))
    if picks[-1] != traj.n_instants - 1:
        picks.append(traj.n_instants - 1)
    for j in picks:
        t = float(traj.times[j])
        for k in range(traj.y.shape[1]):
            rows.append([t, "leader", k, *traj.y[j, k], *traj.w[j, k]])
        for i in range(traj.x.shape[1]):
            rows.append([t, "follower", i, *traj.x[j, i], *traj.v[j, i]])
    return _csv_text(header, rows)


def _report_rows_csv(report: ConvergenceReport) -> str:
    extra_keys = sorted({k for row in report.rows for k in row.extra if k != "control"})
    header = ["n", "value"] + extra_keys
    rows = []
    for row in report.rows:
        rows.append([row.n, row.value] + [row.extra.get(k, "") for k in extra_keys])
    return _csv_text(header, rows)


def _timings_csv(report: ConvergenceReport) -> str:
    rows = [["row", str(i), row.wall_clock] for i, row in enumerate(report.rows)]
    rows += [["phase", k, v] for k, v in sorted(report.timings.items())]
    return _csv_text(["kind", "key", "seconds"], rows)


def _report_json(report: ConvergenceReport, run_id: str) -> str:
    payload = {
        "kind": report.kind,
        "run_id": run_id,
        "seed": report.seed,
        "verdicts": report.verdicts,
        "rows": [
            {"n": row.n, "value": row.value, **{k: v for k, v in row.extra.items() if k != "control"}}
            for row in report.rows
        ],
    }
    return _json_text(payload)


class _ArtifactWriter:
    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.names: list[str] = []

    def write(self, name: str, text: str):
        (self.run_dir / name).write_text(text)
        self.names.append(name)


def _run_simulate(cfg: ExperimentConfig, art: _ArtifactWriter) -> dict:
    kernel = build_kernel(cfg)
    control = build_control(cfg)
    c0 = build_initial_configuration(cfg)
    grid = TimeGrid(cfg.grid.T, cfg.grid.n_steps, control.breakpoints())
    traj = integrate(c0, control, kernel, grid)
    growth_bound, lip_bound = envelopes(c0, kernel, control.admissible_radius, cfg.grid.T)
    max_norm = max(config_norm(traj.state(j)) for j in range(traj.n_instants))
    summary = {
        "mode": "simulate",
        "n_instants": traj.n_instants,
        "final_norm": config_norm(traj.final_state()),
        "max_norm": max_norm,
        "growth_bound": growth_bound,
        "lipschitz_bound": lip_bound,
        "within_envelope": bool(max_norm <= growth_bound),
    }
    if "csv" in cfg.output.formats:
        art.write("trajectory.csv", _trajectory_csv(traj, cfg.output.snapshot_every))
    if "json" in cfg.output.formats:
        art.write("report.json", _json_text(summary))
    return summary


def _run_optimize(cfg: ExperimentConfig, art: _ArtifactWriter) -> dict:
    from .optimizer import solve

    problem = build_problem(cfg)
    u0 = build_control(cfg) if cfg.control.values is not None else None
    solve_report = solve(problem, u0)
    summary = {
        "mode": "optimize",
        "cost": solve_report.cost,
        "sparsity_fraction": solve_report.sparsity_fraction,
        "converged": solve_report.converged,
        "stalled": solve_report.stalled,
        "n_iters": solve_report.n_iters,
    }
    if "csv" in cfg.output.formats:
        art.write("control.csv", control_to_csv(solve_report.control))
        art.write(
            "history.csv",
            _csv_text(["iter", "J"], [[i, j] for i, j in enumerate(solve_report.history)]),
        )
    if "json" in cfg.output.formats:
        art.write("report.json", _json_text(summary))
    return summary


def _write_convergence(
    cfg: ExperimentConfig, art: _ArtifactWriter, report: ConvergenceReport, run_id: str
) -> dict:
    if "csv" in cfg.output.formats:
        art.write("report.csv", _report_rows_csv(report))
    if "json" in cfg.output.formats:
        art.write("report.json", _report_json(report, run_id))
    art.write("timings.csv", _timings_csv(report))
    for name, control in report.objects.get("controls", {}).items():
        if isinstance(control, ControlSignal) and "csv" in cfg.output.formats:
            art.write(f"control_{name}.csv", control_to_csv(control))
    return {"mode": report.kind, "verdicts": report.verdicts, "rows": len(report.rows)}


def _run_meanfield(cfg: ExperimentConfig, art: _ArtifactWriter, run_id: str) -> dict:
    spec = build_limit_spec(cfg)
    report = meanfield_convergence_experiment(spec)
    return _write_convergence(cfg, art, report, run_id)


def _run_gamma(cfg: ExperimentConfig, art: _ArtifactWriter, run_id: str) -> dict:
    spec = build_limit_spec(cfg)
    report = gamma_convergence_experiment(spec)
    return _write_convergence(cfg, art, report, run_id)


def _run_sweep(cfg: ExperimentConfig, art: _ArtifactWriter, run_id: str) -> dict:
    spec = build_limit_spec(cfg)
    report = optimal_control_sweep(spec, tuple(cfg.experiment.gamma_list))
    return _write_convergence(cfg, art, report, run_id)


def _run_stability(cfg: ExperimentConfig, art: _ArtifactWriter) -> dict:
    spec = build_limit_spec(cfg)
    result = stability_experiment(spec, delta0=cfg.experiment.delta0)
    summary = {"mode": "stability", **result}
    if "json" in cfg.output.formats:
        art.write("report.json", _json_text(summary))
    if "csv" in cfg.output.formats:
        keys = sorted(result)
        art.write("report.csv", _csv_text(keys, [[result[k] for k in keys]]))
    return summary


def run(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
) -> RunResult:
    """Execute the configured mode; never raises for runtime failures."""
    t_start = time.perf_counter()
    if seed is not None:
        cfg = cfg.model_copy(deep=True)
        cfg.experiment.seed = seed
    effective_threads = set_worker_threads(threads)

    run_id = f"{cfg.mode}-{config_hash(cfg)}-s{cfg.experiment.seed}"
    base = resolve_out_dir(cfg, str(out_dir) if out_dir is not None else None)
    run_dir = base / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    art = _ArtifactWriter(run_dir)

    failure = None
    summary = {}
    try:
        if cfg.mode == "simulate":
            summary = _run_simulate(cfg, art)
        elif cfg.mode == "optimize":
            summary = _run_optimize(cfg, art)
        elif cfg.mode == "meanfield":
            summary = _run_meanfield(cfg, art, run_id)
        elif cfg.mode == "gamma":
            summary = _run_gamma(cfg, art, run_id)
        elif cfg.mode == "sweep":
            summary = _run_sweep(cfg, art, run_id)
        elif cfg.mode == "stability":
            summary = _run_stability(cfg, art)
        else:  # pragma: no cover - validation forbids
            raise ValueError(f"unknown mode {cfg.mode!r}")
    except Exception as exc:  # noqa: BLE001 - failures become manifest records
        failure = f"{type(exc).__module__}.{type(exc).__qualname__}: {exc}"

    manifest = {
        "run_id": run_id,
        "mode": cfg.mode,
        "seed": cfg.experiment.seed,
        "config": cfg.model_dump(),
        "config_hash": config_hash(cfg),
        "threads_effective": effective_threads,
        "versions": {
            "sparseflock": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_clock_s": time.perf_counter() - t_start,
        "artifacts": art.names,
        "failure": failure,
    }
    (run_dir / "manifest.json").write_text(_json_text(manifest))

    if failure is not None:
        return RunResult(1, run_dir, art.names, summary, failure=failure)
    return RunResult(0, run_dir, art.names, summary)


def run_config_file(
    path: str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
    validate_only: bool = False,
) -> RunResult:
    """Validate (and optionally run) a config file; diagnostics on failure."""
    from .config import validate_config

    try:
        cfg = validate_config(path)
    except ConfigError as exc:
        return RunResult(2, diagnostics=exc.diagnostics)
    if validate_only:
        return RunResult(0, summary={"valid": True, "mode": cfg.mode})
    return run(cfg, out_dir=out_dir, seed=seed, threads=threads)
