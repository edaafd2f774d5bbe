"""HTTP service wrapping the simulator.

Handlers are plain functions over pydantic request/response models; the
FastAPI routes and the CLI's in-process transport both call them, so local
and remote invocations share one code path. Usage problems map to HTTP 400,
runtime failures to 500.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel as _BaseModel
from pydantic import ConfigDict, Field


class BaseModel(_BaseModel):
    # unknown fields in configs are almost always typos; reject them
    model_config = ConfigDict(extra="forbid")

from . import __version__
from .catalog import CatalogError, generate_fixture, hierarchy_stats, load_catalog, save_catalog
from .metrics import compute_metrics, write_metrics_csv, write_summary_csv
from .personas import load_profiles
from .simulation import (
    INCOMPLETE_SENTINEL,
    SWEEP_AXES,
    ConfigError,
    SimulationConfig,
    SimulationError,
    audit_run_log,
    load_records,
    persist_run,
    run,
    run_sweep,
    sweep_aggregates,
    write_sweep_summary_csv,
)


class UsageError(Exception):
    """Bad request: invalid config, missing file, malformed input."""


class RunFailure(Exception):
    """The operation itself failed (simulation error, corrupt log)."""


# --- request/response models -------------------------------------------------


class TrainingModel(BaseModel):
    dim: int = 16
    lr: float = 0.05
    reg: float = 1e-4
    epochs: int = 5
    init_scale: float = 0.1
    label_mode: str = "label-flip"
    cumulative: bool = True


class LLMModel(BaseModel):
    base_url: str = ""
    model: str = ""
    api_key_env: str = "BUBBLESIM_LLM_API_KEY"
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    parallelism: int = 4


class SimulationConfigModel(BaseModel):
    n_users: int = 20
    items_per_iteration: int = 5
    n_iterations: int = 20
    model: str = "mf"
    strategy: str = "default"
    cscmr: int = 50
    motivation: str = "gratification"
    backend: str = "rule"
    seed: int = 0
    history_window: int = 20
    metric_window: str = "per_iteration"
    watch_mode: str = "positive"
    save_transcripts: bool = True
    save_checkpoints: bool = False
    training: TrainingModel = Field(default_factory=TrainingModel)
    llm: LLMModel = Field(default_factory=LLMModel)

    def to_config(self) -> SimulationConfig:
        return SimulationConfig.from_dict(self.model_dump())


class SummaryRowModel(BaseModel):
    iteration: int
    level: int
    mean_entropy: float
    mean_satisfaction: float
    bubble_proportion: float


class HealthResponse(BaseModel):
    status: str
    version: str


class FixtureRequest(BaseModel):
    seed: int
    n_items: int
    shape: tuple[float, float, float] = (21, 2.62, 4.22)
    out_path: str


class CatalogStatsResponse(BaseModel):
    path: str
    n_items: int
    unique_counts: tuple[int, int, int]
    avg_children: tuple[float, float]


class CatalogStatsRequest(BaseModel):
    catalog_path: str


class RunRequest(BaseModel):
    config: SimulationConfigModel = Field(default_factory=SimulationConfigModel)
    catalog_path: str
    out_dir: str


class RunResponse(BaseModel):
    out_dir: str
    n_records: int
    audit_problems: list[str]
    summary: list[SummaryRowModel]


class SweepRequest(BaseModel):
    config: SimulationConfigModel = Field(default_factory=SimulationConfigModel)
    catalog_path: str
    out_dir: str
    axis: str
    values: list[str]
    seeds: list[int]


class SweepResponse(BaseModel):
    out_dir: str
    n_runs: int
    run_dirs: list[str]
    failures: list[str]
    summary_path: str


class MetricsRequest(BaseModel):
    run_dir: str
    window: str | None = None  # override the run's metric window
    watch: str | None = None


class MetricsResponse(BaseModel):
    metrics_path: str
    identical: bool
    overridden: bool
    window: str
    watch: str


# --- handlers ------------------------------------------------------------------


def _load_catalog_or_usage(path: str):
    try:
        return load_catalog(path)
    except FileNotFoundError:
        raise UsageError(f"catalog file not found: {path}") from None
    except CatalogError as exc:
        raise UsageError(f"invalid catalog: {exc}") from None


def handle_health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def handle_fixture(req: FixtureRequest) -> CatalogStatsResponse:
    try:
        catalog = generate_fixture(req.seed, req.n_items, tuple(req.shape))
    except CatalogError as exc:
        raise UsageError(str(exc)) from None
    out = Path(req.out_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_catalog(catalog, out)
    stats = hierarchy_stats(catalog)
    return CatalogStatsResponse(
        path=str(out),
        n_items=len(catalog),
        unique_counts=stats.unique_counts,
        avg_children=stats.avg_children,
    )


def handle_catalog_stats(req: CatalogStatsRequest) -> CatalogStatsResponse:
    catalog = _load_catalog_or_usage(req.catalog_path)
    stats = hierarchy_stats(catalog)
    return CatalogStatsResponse(
        path=req.catalog_path,
        n_items=len(catalog),
        unique_counts=stats.unique_counts,
        avg_children=stats.avg_children,
    )


def handle_run(req: RunRequest, transport=None) -> RunResponse:
    try:
        config = req.config.to_config()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    catalog = _load_catalog_or_usage(req.catalog_path)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentinel = out / INCOMPLETE_SENTINEL
    sentinel.write_text("run in progress\n", encoding="utf-8")
    try:
        run_log = run(config, catalog, transport=transport)
        persist_run(run_log, out, catalog=catalog)
    except SimulationError as exc:
        raise RunFailure(str(exc)) from None
    sentinel.unlink()
    return RunResponse(
        out_dir=str(out),
        n_records=len(run_log.records),
        audit_problems=audit_run_log(run_log),
        summary=[
            SummaryRowModel(
                iteration=row.iteration,
                level=row.level,
                mean_entropy=row.mean_entropy,
                mean_satisfaction=row.mean_satisfaction,
                bubble_proportion=row.bubble_proportion,
            )
            for row in run_log.summary
        ],
    )


def _typed_axis_values(axis: str, values: list[str]):
    if axis == "cscmr":
        try:
            return [int(v) for v in values]
        except ValueError:
            raise UsageError(f"cscmr values must be integers, got {values}") from None
    return list(values)


def handle_sweep(req: SweepRequest, transport=None) -> SweepResponse:
    try:
        config = req.config.to_config()
        values = _typed_axis_values(req.axis, req.values)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if req.axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {req.axis!r}; choose from {tuple(SWEEP_AXES)}")
    if not req.seeds:
        raise UsageError("seeds list must not be empty")
    if not values:
        raise UsageError("values list must not be empty")
    catalog = _load_catalog_or_usage(req.catalog_path)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentinel = out / INCOMPLETE_SENTINEL
    sentinel.write_text("sweep in progress\n", encoding="utf-8")
    try:
        report = run_sweep(config, req.axis, values, req.seeds, catalog,
                           out_root=out, transport=transport)
    except ConfigError as exc:
        sentinel.unlink()
        raise UsageError(str(exc)) from None
    summary_path = out / "sweep_summary.csv"
    write_sweep_summary_csv(report, summary_path)
    (out / "report.json").write_text(
        json.dumps(
            {
                "axis": report.axis,
                "values": [str(v) for v in report.values],
                "seeds": report.seeds,
                "aggregates": sweep_aggregates(report),
                "failures": [list(f) for f in report.failures],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    sentinel.unlink()
    return SweepResponse(
        out_dir=str(out),
        n_runs=len(report.run_dirs),
        run_dirs=report.run_dirs,
        failures=[f"{axis_value} seed={seed}: {msg}" for axis_value, seed, msg in report.failures],
        summary_path=str(summary_path),
    )


def handle_metrics(req: MetricsRequest) -> MetricsResponse:
    run_dir = Path(req.run_dir)
    for required in ("records.jsonl", "slates.jsonl", "config.json", "profiles.jsonl", "catalog.jsonl"):
        if not (run_dir / required).exists():
            raise UsageError(f"run dir missing {required}")
    try:
        config = SimulationConfig.from_dict(
            json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        )
    except (json.JSONDecodeError, ConfigError) as exc:
        raise RunFailure(f"corrupt config.json: {exc}") from None
    window = req.window or config.metric_window
    watch = req.watch or config.watch_mode
    overridden = window != config.metric_window or watch != config.watch_mode
    catalog = _load_catalog_or_usage(str(run_dir / "catalog.jsonl"))
    try:
        records = load_records(run_dir / "records.jsonl")
        profiles = load_profiles(run_dir / "profiles.jsonl")
        rows, summary = compute_metrics(
            records, [p.user_id for p in profiles], catalog, window=window, watch=watch
        )
    except (SimulationError, ValueError) as exc:
        raise RunFailure(f"corrupt run log: {exc}") from None
    if overridden:
        metrics_path = run_dir / f"metrics.{window}.{watch}.csv"
        write_metrics_csv(rows, metrics_path)
        identical = False
    else:
        metrics_path = run_dir / "metrics.csv"
        previous = metrics_path.read_bytes() if metrics_path.exists() else None
        write_metrics_csv(rows, metrics_path)
        write_summary_csv(summary, run_dir / "summary.csv")
        identical = previous == metrics_path.read_bytes()
    return MetricsResponse(
        metrics_path=str(metrics_path),
        identical=identical,
        overridden=overridden,
        window=window,
        watch=watch,
    )


# --- FastAPI app ------------------------------------------------------------------


def create_app() -> FastAPI:
    app = FastAPI(
        title="bubblesim",
        version=__version__,
        description="Closed-loop short-video recommendation simulator",
    )

    def guarded(handler, *args):
        try:
            return handler(*args)
        except UsageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        except RunFailure as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from None

    @app.get("/health", response_model=HealthResponse)
    def health():
        return handle_health()

    @app.post("/fixture", response_model=CatalogStatsResponse)
    def fixture(req: FixtureRequest):
        return guarded(handle_fixture, req)

    @app.post("/catalog/stats", response_model=CatalogStatsResponse)
    def catalog_stats(req: CatalogStatsRequest):
        return guarded(handle_catalog_stats, req)

    @app.post("/run", response_model=RunResponse)
    def run_simulation(req: RunRequest):
        return guarded(handle_run, req)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        return guarded(handle_sweep, req)

    @app.post("/metrics/recompute", response_model=MetricsResponse)
    def metrics(req: MetricsRequest):
        return guarded(handle_metrics, req)

    return app


app = create_app()
