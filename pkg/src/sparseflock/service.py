"""HTTP service wrapping the lab: validate configs, run experiments, W1 queries.

Experiments execute synchronously server-side and write their artifacts to
the server's filesystem; responses carry the run directory, artifact names,
and the summary.  The CLI drives the same handlers, in process by default or
over HTTP against a remote instance.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, validate_config_text
from .kernels import GrowthBoundError, Kernel, estimate_growth_constant
from .measures import EmpiricalMeasure, w1_distance
from .runner import RunResult, resolve_out_dir, run


class HealthResponse(BaseModel):
    status: str
    version: str


class DiagnosticModel(BaseModel):
    code: str
    path: str
    message: str


class ValidateRequest(BaseModel):
    toml_text: str


class ValidateResponse(BaseModel):
    valid: bool
    mode: str | None = None
    diagnostics: list[DiagnosticModel] = Field(default_factory=list)


class RunRequest(BaseModel):
    toml_text: str
    out_dir: str | None = None
    seed: int | None = None
    threads: int | None = None
    validate_only: bool = False


class RunResponse(BaseModel):
    exit_code: int
    run_dir: str | None = None
    artifacts: list[str] = Field(default_factory=list)
    summary: dict = Field(default_factory=dict)
    diagnostics: list[DiagnosticModel] = Field(default_factory=list)
    failure: str | None = None


class MeasurePayload(BaseModel):
    atoms: list[list[float]]
    weights: list[float] | None = None

    def build(self) -> EmpiricalMeasure:
        atoms = np.array(self.atoms, dtype=float)
        if self.weights is None:
            return EmpiricalMeasure.uniform(atoms)
        return EmpiricalMeasure(atoms, np.array(self.weights, dtype=float))


class W1Request(BaseModel):
    mu: MeasurePayload
    nu: MeasurePayload


class W1Response(BaseModel):
    distance: float


class GrowthCheckRequest(BaseModel):
    family: str
    dimension: int = Field(ge=1)
    params: dict[str, float] = Field(default_factory=dict)
    box_radius: float = Field(default=10.0, gt=0)
    n_samples: int = Field(default=1000, ge=1)
    seed: int = 0


class GrowthCheckResponse(BaseModel):
    estimate: float
    declared: float
    within_bound: bool
    witness: list[float] | None = None


def _diag_models(diags) -> list[DiagnosticModel]:
    return [DiagnosticModel(**d.as_dict()) for d in diags]


def _run_response(result: RunResult) -> RunResponse:
    return RunResponse(
        exit_code=result.exit_code,
        run_dir=str(result.run_dir) if result.run_dir else None,
        artifacts=result.artifacts,
        summary=result.summary,
        diagnostics=_diag_models(result.diagnostics),
        failure=result.failure,
    )


def handle_run(request: RunRequest) -> RunResponse:
    """Shared by the HTTP endpoint and the local CLI path."""
    try:
        cfg = validate_config_text(request.toml_text)
    except ConfigError as exc:
        return _run_response(RunResult(2, diagnostics=exc.diagnostics))
    if request.validate_only:
        return RunResponse(exit_code=0, summary={"valid": True, "mode": cfg.mode})
    out_dir = request.out_dir or str(resolve_out_dir(cfg, None))
    result = run(cfg, out_dir=out_dir, seed=request.seed, threads=request.threads)
    return _run_response(result)


def build_kernel_from_request(req: GrowthCheckRequest) -> Kernel:
    p = req.params
    if req.family == "zero":
        return Kernel.zero(req.dimension)
    if req.family == "cucker_smale":
        return Kernel.cucker_smale(
            req.dimension,
            p.get("K", 1.0),
            p.get("sigma", 1.0),
            p.get("beta", 0.45),
            p.get("sign", -1.0),
            p.get("growth_constant"),
        )
    if req.family == "repulsion_attraction":
        return Kernel.repulsion_attraction(
            req.dimension,
            p.get("sigma_r", 1.0),
            p.get("sigma_a", 1.0),
            p.get("regularizer", 1e-3),
            p.get("growth_constant"),
        )
    raise ValueError(f"unsupported kernel family {req.family!r}")


def create_app() -> FastAPI:
    app = FastAPI(title="sparseflock", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/config/validate", response_model=ValidateResponse)
    def validate(request: ValidateRequest):
        try:
            cfg = validate_config_text(request.toml_text)
        except ConfigError as exc:
            return ValidateResponse(valid=False, diagnostics=_diag_models(exc.diagnostics))
        return ValidateResponse(valid=True, mode=cfg.mode)

    @app.post("/experiments/run", response_model=RunResponse)
    def run_experiment(request: RunRequest):
        return handle_run(request)

    @app.post("/measures/w1", response_model=W1Response)
    def w1(request: W1Request):
        return W1Response(distance=w1_distance(request.mu.build(), request.nu.build()))

    @app.post("/kernels/growth-check", response_model=GrowthCheckResponse)
    def growth_check(request: GrowthCheckRequest):
        kernel = build_kernel_from_request(request)
        try:
            est = estimate_growth_constant(
                kernel, request.box_radius, request.n_samples, request.seed
            )
        except GrowthBoundError as exc:
            return GrowthCheckResponse(
                estimate=exc.estimate,
                declared=exc.declared,
                within_bound=False,
                witness=[float(v) for v in exc.witness],
            )
        return GrowthCheckResponse(
            estimate=est, declared=kernel.growth_constant, within_bound=True
        )

    return app


app = create_app()
