"""Declarative experiment configs: TOML in, validated models out.

Validation is all-or-nothing: either a fully typed ExperimentConfig or a list
of diagnostics, each carrying a machine code, the config key path, and a
message.  Builders turn the validated config into core objects.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import ControlSignal, RunningCost
from .kernels import Kernel
from .limits import LimitExperimentSpec
from .measures import Configuration, InitialDensitySpec, measure_from_csv, sample_initial_measure
from .optimizer import OptimalControlProblem, OptimizerParams

MODES = ("simulate", "optimize", "meanfield", "gamma", "stability", "sweep")


@dataclass(frozen=True)
class Diagnostic:
    code: str  # parse-error | unknown-key | missing-key | invalid-value
    path: str
    message: str

    def as_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        lines = "; ".join(f"{d.path}: {d.message}" for d in diagnostics)
        super().__init__(f"invalid config: {lines}")


class _Table(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelTable(_Table):
    family: Literal["zero", "cucker_smale", "repulsion_attraction", "custom_table"]
    K: float = 1.0
    sigma: float = 1.0
    beta: float = 0.45
    sign: float = -1.0
    sigma_r: float = 1.0
    sigma_a: float = 1.0
    regularizer: float = 1e-3
    radii: list[float] | None = None
    values: list[float] | None = None
    growth_constant: float | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.family == "cucker_smale":
            if self.K <= 0 or self.sigma <= 0 or self.beta < 0:
                raise ValueError("cucker_smale needs K > 0, sigma > 0, beta >= 0")
            if self.sign not in (1.0, -1.0):
                raise ValueError("sign must be +1 or -1")
        if self.family == "repulsion_attraction":
            if self.sigma_r < 0 or self.sigma_a < 0 or self.regularizer <= 0:
                raise ValueError("need sigma_r >= 0, sigma_a >= 0, regularizer > 0")
        if self.family == "custom_table" and (self.radii is None or self.values is None):
            raise ValueError("custom_table needs radii and values")
        if self.growth_constant is not None and self.growth_constant <= 0:
            raise ValueError("growth_constant must be positive")
        return self


class InitialTable(_Table):
    dimension: int = Field(ge=1)
    leaders_y: list[list[float]]
    leaders_w: list[list[float]]
    followers_family: Literal[
        "uniform_box", "gaussian_truncated", "two_cluster", "explicit"
    ] = "gaussian_truncated"
    followers_n: int | None = Field(default=None, ge=1)
    followers_atoms: list[list[float]] | None = None
    mean: list[float] | None = None
    mean2: list[float] | None = None
    scale: float = 0.0
    radius: float = 1.0
    low: list[float] | None = None
    high: list[float] | None = None

    @model_validator(mode="after")
    def _check(self):
        d = self.dimension
        if not self.leaders_y or any(len(row) != d for row in self.leaders_y):
            raise ValueError(f"leaders_y rows must have length {d}")
        if len(self.leaders_w) != len(self.leaders_y) or any(
            len(row) != d for row in self.leaders_w
        ):
            raise ValueError("leaders_w must match leaders_y in shape")
        if self.followers_family == "explicit":
            if self.followers_atoms is None:
                raise ValueError("explicit followers need followers_atoms")
            if any(len(row) != 2 * d for row in self.followers_atoms):
                raise ValueError(f"followers_atoms rows must have length {2 * d}")
        return self

    @property
    def m(self) -> int:
        return len(self.leaders_y)


class ControlTable(_Table):
    n_cells: int = Field(ge=1)
    U: float
    values: list[list[list[float]]] | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.U <= 0:
            raise ValueError("must be positive")
        return self


class CostTable(_Table):
    family: Literal["velocity_consensus", "leader_tracking", "measure_target"]
    gamma: float = Field(default=1.0, ge=0)
    target_y: list[list[float]] | None = None
    target_w: list[list[float]] | None = None
    target_csv: str | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.family == "leader_tracking" and (self.target_y is None or self.target_w is None):
            raise ValueError("leader_tracking needs target_y and target_w")
        if self.family == "measure_target" and self.target_csv is None:
            raise ValueError("measure_target needs target_csv")
        return self


class GridTable(_Table):
    T: float = Field(gt=0)
    n_steps: int = Field(ge=1)


class ExperimentTable(_Table):
    N_list: list[int] | None = None
    N_ref: int | None = None
    seed: int = 0
    eval_times: list[float] | None = None
    gamma_list: list[float] | None = None
    delta0: float = Field(default=1e-3, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.N_list is not None:
            if sorted(set(self.N_list)) != self.N_list:
                raise ValueError("must be strictly increasing")
            if any(n < 1 for n in self.N_list):
                raise ValueError("entries must be positive")
        return self


class OptimizerTable(_Table):
    max_iters: int = Field(default=2000, ge=1)
    eta0: float = Field(default=1.0, gt=0)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    tol_j_rel: float = Field(default=1e-8, gt=0)
    tol_u_rel: float = Field(default=1e-6, gt=0)


class OutputTable(_Table):
    directory: str | None = None
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    snapshot_every: int = Field(default=1, ge=1)


class ExperimentConfig(_Table):
    mode: Literal["simulate", "optimize", "meanfield", "gamma", "stability", "sweep"]
    kernel: KernelTable
    initial: InitialTable
    control: ControlTable
    cost: CostTable | None = None
    grid: GridTable
    experiment: ExperimentTable = Field(default_factory=ExperimentTable)
    optimizer: OptimizerTable = Field(default_factory=OptimizerTable)
    output: OutputTable = Field(default_factory=OutputTable)

    @model_validator(mode="after")
    def _check(self):
        m, d = self.initial.m, self.initial.dimension
        if self.control.values is not None:
            vals = self.control.values
            if len(vals) != self.control.n_cells or any(
                len(cell) != m or any(len(u) != d for u in cell) for cell in vals
            ):
                raise ValueError(
                    f"control.values must be n_cells x m x d = "
                    f"{self.control.n_cells} x {m} x {d}"
                )
        needs_cost = self.mode in ("optimize", "gamma", "sweep")
        if needs_cost and self.cost is None:
            raise ValueError(f"mode {self.mode!r} requires a [cost] table")
        if self.mode in ("simulate", "meanfield", "stability", "gamma"):
            if self.control.values is None:
                raise ValueError(f"mode {self.mode!r} requires explicit control.values")
        if self.mode in ("meanfield", "gamma", "stability", "sweep"):
            exp = self.experiment
            if exp.N_list is None or exp.N_ref is None:
                raise ValueError(f"mode {self.mode!r} requires experiment.N_list and N_ref")
            if exp.N_ref < 4 * max(exp.N_list):
                raise ValueError("experiment.N_ref must be at least 4 * max(N_list)")
            if self.initial.followers_family == "explicit":
                raise ValueError("limit experiments need a density, not explicit atoms")
        if self.mode == "sweep" and self.experiment.gamma_list is None:
            raise ValueError("mode 'sweep' requires experiment.gamma_list")
        if self.mode in ("simulate", "optimize"):
            if self.initial.followers_family != "explicit" and self.initial.followers_n is None:
                raise ValueError(f"mode {self.mode!r} needs initial.followers_n")
        if self.cost is not None and self.cost.family == "leader_tracking":
            ty, tw = self.cost.target_y, self.cost.target_w
            if any(len(r) != d for r in ty) or any(len(r) != d for r in tw):
                raise ValueError(f"tracking target rows must have length {d}")
            if len(ty) not in (1, m) or len(tw) not in (1, m):
                raise ValueError("tracking targets must have 1 or m rows")
        return self


def _pydantic_diagnostics(exc: ValidationError) -> list[Diagnostic]:
    out = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"]]
        path = ".".join(loc) or "<root>"
        if err["type"] == "extra_forbidden":
            code = "unknown-key"
        elif err["type"] == "missing":
            code = "missing-key"
        else:
            code = "invalid-value"
        out.append(Diagnostic(code, path, err["msg"]))
    return out


def validate_config_text(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError carrying all diagnostics."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([Diagnostic("parse-error", "<file>", str(exc))]) from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_pydantic_diagnostics(exc)) from exc


def validate_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([Diagnostic("parse-error", "<file>", f"no such file: {path}")])
    cfg = validate_config_text(path.read_text())
    if cfg.cost is not None and cfg.cost.target_csv is not None:
        target = (path.parent / cfg.cost.target_csv).resolve()
        if not target.is_file():
            raise ConfigError(
                [Diagnostic("invalid-value", "cost.target_csv", f"no such file: {target}")]
            )
        cfg = cfg.model_copy(deep=True)
        cfg.cost.target_csv = str(target)
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Short hash of the deterministic config content (output table excluded)."""
    payload = cfg.model_dump()
    payload.pop("output", None)
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def emit_config(cfg: ExperimentConfig) -> str:
    """Render a validated config back to TOML (round-trips through validate)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        raise TypeError(f"cannot emit {type(v)}")

    lines = [f"mode = {json.dumps(cfg.mode)}", ""]
    for name in ("kernel", "initial", "control", "cost", "grid", "experiment", "optimizer", "output"):
        table = getattr(cfg, name)
        if table is None:
            continue
        dumped = table.model_dump(exclude_none=True)
        lines.append(f"[{name}]")
        for key, val in dumped.items():
            lines.append(f"{key} = {fmt(val)}")
        lines.append("")
    return "\n".join(lines)


# -- builders ---------------------------------------------------------------


def build_kernel(cfg: ExperimentConfig) -> Kernel:
    kt = cfg.kernel
    d = cfg.initial.dimension
    if kt.family == "zero":
        return Kernel.zero(d)
    if kt.family == "cucker_smale":
        return Kernel.cucker_smale(d, kt.K, kt.sigma, kt.beta, kt.sign, kt.growth_constant)
    if kt.family == "repulsion_attraction":
        return Kernel.repulsion_attraction(
            d, kt.sigma_r, kt.sigma_a, kt.regularizer, kt.growth_constant
        )
    return Kernel.custom_table(
        d, np.array(kt.radii), np.array(kt.values), kt.regularizer, kt.growth_constant
    )


def build_density(cfg: ExperimentConfig) -> InitialDensitySpec:
    it = cfg.initial
    if it.followers_family == "explicit":
        raise ValueError("explicit followers have no density spec")
    kwargs = dict(family=it.followers_family, dimension=it.dimension)
    if it.followers_family == "uniform_box":
        kwargs.update(low=np.array(it.low), high=np.array(it.high))
    else:
        kwargs.update(mean=np.array(it.mean), scale=it.scale, radius=it.radius)
        if it.followers_family == "two_cluster":
            kwargs.update(mean2=np.array(it.mean2))
    return InitialDensitySpec(**kwargs)


def build_initial_configuration(cfg: ExperimentConfig) -> Configuration:
    it = cfg.initial
    y = np.array(it.leaders_y)
    w = np.array(it.leaders_w)
    if it.followers_family == "explicit":
        atoms = np.array(it.followers_atoms)
        return Configuration(y, w, atoms[:, : it.dimension], atoms[:, it.dimension :])
    mu = sample_initial_measure(build_density(cfg), it.followers_n, cfg.experiment.seed)
    return Configuration(y, w, mu.positions, mu.velocities)


def build_control(cfg: ExperimentConfig) -> ControlSignal:
    ct = cfg.control
    if ct.values is not None:
        return ControlSignal(np.array(ct.values), cfg.grid.T, ct.U)
    return ControlSignal.zero(ct.n_cells, cfg.initial.m, cfg.initial.dimension, cfg.grid.T, ct.U)


def build_cost(cfg: ExperimentConfig) -> RunningCost:
    ct = cfg.cost
    if ct is None:
        raise ValueError("config has no [cost] table")
    if ct.family == "velocity_consensus":
        return RunningCost("velocity_consensus", ct.gamma)
    if ct.family == "leader_tracking":
        m = cfg.initial.m
        ty = np.array(ct.target_y)
        tw = np.array(ct.target_w)
        if ty.shape[0] == 1:
            ty = np.repeat(ty, m, axis=0)
        if tw.shape[0] == 1:
            tw = np.repeat(tw, m, axis=0)
        return RunningCost("leader_tracking", ct.gamma, target_y=ty, target_w=tw)
    target = measure_from_csv(Path(ct.target_csv).read_text())
    return RunningCost("measure_target", ct.gamma, target_measure=target)


def build_optimizer_params(cfg: ExperimentConfig) -> OptimizerParams:
    ot = cfg.optimizer
    return OptimizerParams(
        max_iters=ot.max_iters,
        eta0=ot.eta0,
        backtrack=ot.backtrack,
        tol_j_rel=ot.tol_j_rel,
        tol_u_rel=ot.tol_u_rel,
    )


def build_limit_spec(cfg: ExperimentConfig) -> LimitExperimentSpec:
    exp = cfg.experiment
    eval_times = exp.eval_times
    if eval_times is None:
        eval_times = list(np.linspace(0.0, cfg.grid.T, 6))
    cost = build_cost(cfg) if cfg.cost is not None else RunningCost("velocity_consensus", 0.0)
    return LimitExperimentSpec(
        density=build_density(cfg),
        leaders_y0=np.array(cfg.initial.leaders_y),
        leaders_w0=np.array(cfg.initial.leaders_w),
        kernel=build_kernel(cfg),
        cost=cost,
        control=build_control(cfg),
        n_list=tuple(exp.N_list),
        n_ref=exp.N_ref,
        seed=exp.seed,
        horizon=cfg.grid.T,
        n_steps=cfg.grid.n_steps,
        eval_times=tuple(eval_times),
        optimizer=build_optimizer_params(cfg),
    )


def build_problem(cfg: ExperimentConfig) -> OptimalControlProblem:
    from .dynamics import TimeGrid

    control = build_control(cfg)
    grid = TimeGrid(cfg.grid.T, cfg.grid.n_steps, control.breakpoints())
    return OptimalControlProblem(
        build_initial_configuration(cfg),
        build_kernel(cfg),
        build_cost(cfg),
        grid,
        cfg.control.n_cells,
        cfg.control.U,
        build_optimizer_params(cfg),
    )
