"""Command-line client for the simulation service.

All commands build the same request models the HTTP API consumes. Without
--server they execute in process; with --server they post to a running
service instead (requests and responses are identical either way).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
from pydantic import ValidationError

from . import __version__
from .service import (
    CatalogStatsResponse,
    FixtureRequest,
    MetricsRequest,
    MetricsResponse,
    RunFailure,
    RunRequest,
    RunResponse,
    SimulationConfigModel,
    SweepRequest,
    SweepResponse,
    UsageError,
    handle_fixture,
    handle_metrics,
    handle_run,
    handle_sweep,
)


class ServiceClient:
    """Dispatches a request either to the local handlers or a remote service."""

    def __init__(self, base_url: str | None = None, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url
        self.transport = transport

    def call(self, path: str, handler, request, response_model):
        if self.base_url is None:
            return handler(request)
        with httpx.Client(transport=self.transport, timeout=None) as client:
            response = client.post(
                self.base_url.rstrip("/") + path, json=request.model_dump()
            )
        if response.status_code in (400, 422):
            raise UsageError(_detail(response))
        if response.status_code >= 500:
            raise RunFailure(_detail(response))
        response.raise_for_status()
        return response_model.model_validate(response.json())


def _detail(response: httpx.Response) -> str:
    try:
        return str(response.json().get("detail", response.text))
    except json.JSONDecodeError:
        return response.text


def _fail(code: int, message) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _execute(client: ServiceClient, path: str, handler, request, response_model):
    try:
        return client.call(path, handler, request, response_model)
    except UsageError as exc:
        _fail(1, exc)
    except RunFailure as exc:
        _fail(2, exc)
    except httpx.HTTPError as exc:
        _fail(2, f"service request failed: {exc}")


def _load_config_model(config_path: str | None) -> SimulationConfigModel:
    if config_path is None:
        return SimulationConfigModel()
    path = Path(config_path)
    if not path.exists():
        _fail(1, f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return SimulationConfigModel.model_validate(data)
    except (json.JSONDecodeError, ValidationError) as exc:
        _fail(1, f"invalid config: {exc}")


@click.group()
@click.version_option(__version__)
@click.option(
    "--server",
    default=None,
    envvar="BUBBLESIM_SERVER",
    help="Base URL of a running bubblesim service; omitted means in-process execution.",
)
@click.pass_context
def main(ctx, server):
    """Closed-loop short-video recommendation simulator.

    LLM-backed runs read the API key from the environment variable named by
    the config's llm.api_key_env (default BUBBLESIM_LLM_API_KEY); credentials
    are never written into run directories.
    """
    ctx.obj = ServiceClient(server)


@main.command("run")
@click.option("--config", "config_path", default=None, type=str,
              help="JSON config mirroring SimulationConfig fields; defaults used if omitted.")
@click.option("--catalog", "catalog_path", required=True, type=str, help="Catalog JSONL file.")
@click.option("--out", "out_dir", required=True, type=str, help="Run directory to create.")
@click.option("--backend", default=None, type=click.Choice(["rule", "llm", "transcript"]),
              help="Override the config's agent backend.")
@click.pass_obj
def cmd_run(client: ServiceClient, config_path, catalog_path, out_dir, backend):
    """Run one simulation and write the run directory."""
    config = _load_config_model(config_path)
    if backend is not None:
        config = config.model_copy(update={"backend": backend})
    try:
        request = RunRequest(config=config, catalog_path=catalog_path, out_dir=out_dir)
    except ValidationError as exc:
        _fail(1, exc)
    response: RunResponse = _execute(client, "/run", handle_run, request, RunResponse)
    click.echo(f"{'iteration':>9}  {'mean_entropy_l1':>15}  {'mean_satisfaction':>17}")
    for row in response.summary:
        if row.level == 1:
            click.echo(f"{row.iteration:>9}  {row.mean_entropy:>15.4f}  {row.mean_satisfaction:>17.4f}")
    if response.audit_problems:
        for problem in response.audit_problems:
            click.echo(f"audit: {problem}", err=True)
        _fail(2, "run log failed invariant audit")
    click.echo(f"run written to {response.out_dir} ({response.n_records} records)")


@main.command("sweep")
@click.option("--config", "config_path", default=None, type=str)
@click.option("--catalog", "catalog_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--axis", required=True, type=str,
              help="Swept parameter: cscmr, strategy, motivation, or model.")
@click.option("--values", required=True, type=str, help="Comma-separated axis values.")
@click.option("--seeds", required=True, type=str, help="Comma-separated integer seeds.")
@click.pass_obj
def cmd_sweep(client: ServiceClient, config_path, catalog_path, out_dir, axis, values, seeds):
    """Run one simulation per (axis value, seed) and write sweep_summary.csv."""
    config = _load_config_model(config_path)
    value_list = [v.strip() for v in values.split(",") if v.strip()]
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        _fail(1, f"seeds must be integers, got {seeds!r}")
    try:
        request = SweepRequest(
            config=config,
            catalog_path=catalog_path,
            out_dir=out_dir,
            axis=axis,
            values=value_list,
            seeds=seed_list,
        )
    except ValidationError as exc:
        _fail(1, exc)
    response: SweepResponse = _execute(client, "/sweep", handle_sweep, request, SweepResponse)
    click.echo(f"{response.n_runs} runs completed under {response.out_dir}")
    for failure in response.failures:
        click.echo(f"failed: {failure}", err=True)
    click.echo(f"sweep summary: {response.summary_path}")


@main.command("metrics")
@click.option("--run", "run_dir", required=True, type=str, help="Existing run directory.")
@click.option("--window", default=None, type=click.Choice(["per_iteration", "cumulative"]),
              help="Recompute with a different metric window.")
@click.option("--watch", default=None, type=click.Choice(["positive", "shown"]),
              help="Recompute with a different watched-video rule.")
@click.pass_obj
def cmd_metrics(client: ServiceClient, run_dir, window, watch):
    """Recompute metrics.csv from the persisted run log."""
    request = MetricsRequest(run_dir=run_dir, window=window, watch=watch)
    response: MetricsResponse = _execute(
        client, "/metrics/recompute", handle_metrics, request, MetricsResponse
    )
    flag = " (OVERRIDDEN: differs from run config)" if response.overridden else ""
    click.echo(f"window={response.window} watch={response.watch}{flag}")
    click.echo(f"metrics written to {response.metrics_path}")
    if not response.overridden:
        state = "identical to" if response.identical else "DIFFERS from"
        click.echo(f"recomputed metrics are {state} the in-run file")


@main.command("fixture")
@click.option("--seed", required=True, type=int)
@click.option("--n-items", required=True, type=int)
@click.option("--shape", default="21,2.62,4.22", type=str,
              help="level-1 count, avg children per level-1, avg children per level-2.")
@click.option("--out", "out_path", required=True, type=str)
@click.pass_obj
def cmd_fixture(client: ServiceClient, seed, n_items, shape, out_path):
    """Generate a synthetic catalog fixture (JSONL)."""
    parts = [p.strip() for p in shape.split(",")]
    try:
        shape_tuple = tuple(float(p) for p in parts)
    except ValueError:
        _fail(1, f"shape must be three numbers, got {shape!r}")
    if len(shape_tuple) != 3:
        _fail(1, f"shape must have three components, got {shape!r}")
    try:
        request = FixtureRequest(seed=seed, n_items=n_items, shape=shape_tuple, out_path=out_path)
    except ValidationError as exc:
        _fail(1, exc)
    response: CatalogStatsResponse = _execute(
        client, "/fixture", handle_fixture, request, CatalogStatsResponse
    )
    click.echo(
        f"wrote {response.n_items} items to {response.path}; "
        f"categories per level: {response.unique_counts}, "
        f"avg children: ({response.avg_children[0]:.2f}, {response.avg_children[1]:.2f})"
    )


@main.command("serve")
@click.option("--host", default="127.0.0.1", type=str)
@click.option("--port", default=8000, type=int)
def cmd_serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("bubblesim.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
