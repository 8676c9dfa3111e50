"""CLI commands for geonav."""

from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, List, Optional

import pandas as pd
import typer
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from .. import pipeline
from ..bench.scenarios import load_scenario, run_scenario, write_summary
from ..core.config import RunConfig, Workbench, build_provider, config_from_dict, load_config
from ..core.exceptions import (
    ArchitectureMismatchError,
    ConfigError,
    DegenerateTaskError,
    GeonavError,
    GridGeometryError,
    GridParseError,
    NonFiniteError,
    OutOfCoverageError,
    RegistryError,
    SamplingExhaustedError,
    ScenarioFailure,
    ShapeMismatchError,
)
from ..core.registry import Registry
from ..sim.field_model import iter_lattice, load_grid, sample, save_grid
from ..utils.display import (
    console,
    display_comparison_table,
    display_field_sample,
    display_metrics,
    display_scenario_result,
)
from ..utils.logging import configure_logging

# Exit 1: the user can fix the input. Exit 2: the run itself aborted.
INPUT_ERRORS = (
    ConfigError, GridParseError, GridGeometryError, OutOfCoverageError, ArchitectureMismatchError,
    ShapeMismatchError, ScenarioFailure, RegistryError, FileNotFoundError, ValueError,
)
RUNTIME_ERRORS = (NonFiniteError, SamplingExhaustedError, DegenerateTaskError, GeonavError)

app = typer.Typer(help="GEONAV - geomagnetic navigation lab: train, distill, evaluate")
field_app = typer.Typer(help="Field grids: import, query, contour export")
tasks_app = typer.Typer(help="Task batteries")
scenario_app = typer.Typer(help="Reproduction scenarios")
app.add_typer(field_app, name="field")
app.add_typer(tasks_app, name="tasks")
app.add_typer(scenario_app, name="scenario")

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Run config (TOML)")


@app.callback()
def main(
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v info, -vv debug logging"),
):
    """Geomagnetic navigation lab."""
    configure_logging(verbose)


def _load(config: Path) -> tuple:
    cfg = load_config(config)
    return cfg, Workbench.from_config(cfg)


def _input_error(e: Exception) -> None:
    console.print(f"[red]Error: {e}[/red]")
    raise typer.Exit(1)


def _runtime_error(e: Exception) -> None:
    console.print(f"[red]Run aborted: {e}[/red]")
    raise typer.Exit(2)


@contextmanager
def _progress(description: str, total: Optional[int]) -> Iterator[Callable[[int], None]]:
    """Advance callback; renders a progress bar only on a terminal."""
    if not console.is_terminal:
        yield lambda n=1: None
        return
    columns = (SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(),
               MofNCompleteColumn(), TimeElapsedColumn())
    with Progress(*columns, console=console, transient=True) as progress:
        task = progress.add_task(description, total=total)
        yield lambda n=1: progress.advance(task, n)


def _show_files(title: str, out: pipeline.StageOutput) -> None:
    lines = "\n".join(f"{kind}: {path}" for kind, path in sorted(out.files.items()))
    console.print(Panel(lines, title=title, border_style="green"))


@app.command()
def train(
    config: Path = CONFIG_OPTION,
    region: str = typer.Option(..., "--region", "-r", help="Training region name"),
    variant: Optional[str] = typer.Option(None, "--variant", help="Reward variant override: SR, ER or ST"),
    seed_index: int = typer.Option(0, "--seed-index", help="Independent repeat of the same teacher"),
    resume: bool = typer.Option(False, "--resume", help="Continue from the last interval checkpoint"),
):
    """Train one teacher in a region."""
    try:
        cfg, bench = _load(config)
        cfg.region(region)
        with _progress(f"Training teacher {region}", cfg.td3.total_env_steps) as advance:
            out = pipeline.train_stage(cfg, bench, region, variant, seed_index, resume,
                                       on_episode=lambda row: advance(row["steps"]))
        first = out.extra["first_success_episode"]
        console.print(f"[green]✓ Teacher {region} trained: {out.extra['episodes']} episodes, "
                      f"{out.extra['total_steps']} steps[/green]")
        if first is None:
            console.print("[yellow]The goal was never reached during training.[/yellow]")
        else:
            console.print(f"[dim]First success at episode {first}[/dim]")
        _show_files(out.stage, out)
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)
    except RUNTIME_ERRORS as e:
        _runtime_error(e)


@app.command()
def distill(
    config: Path = CONFIG_OPTION,
    teachers: Optional[List[Path]] = typer.Argument(None, help="Teacher checkpoints (default: the config's teachers)"),
):
    """Distill one student from teacher checkpoints."""
    try:
        cfg, bench = _load(config)
        paths = list(teachers or [])
        if not paths:
            paths = [pipeline.run_dir(cfg) / pipeline.teacher_stage_name(r) / "teacher.json" for r in cfg.teachers]
        if not paths:
            raise ConfigError("teachers", "no teacher checkpoints given and none configured")
        for path in paths:
            if not path.exists():
                raise ConfigError("teachers", f"checkpoint not found: {path}")
        with console.status("Distilling student..."):
            out = pipeline.distill_stage(cfg, bench, paths)
        console.print(f"[green]✓ Student distilled from {len(paths)} teacher(s)[/green]")
        for teacher, mse in sorted(out.extra["final_val_mse"].items()):
            console.print(f"[dim]{teacher}: validation MSE {mse:.6g}[/dim]")
        _show_files(out.stage, out)
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)
    except RUNTIME_ERRORS as e:
        _runtime_error(e)


@app.command(name="eval")
def evaluate(
    config: Path = CONFIG_OPTION,
    policy: str = typer.Option(..., "--policy", "-p", help="Checkpoint path, baseline:<METHOD>, oracle or null"),
    battery: str = typer.Option(..., "--battery", "-b", help="Battery name from the config"),
    trajectories: bool = typer.Option(True, "--trajectories/--no-trajectories", help="Write per-task trajectories"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", min=1, help="Tasks run in parallel (default: config)"),
):
    """Run a task battery through a policy and write its reports."""
    try:
        cfg, bench = _load(config)
        n = cfg.battery(battery).n
        with _progress(f"Evaluating on {battery}", n) as advance:
            out = pipeline.eval_stage(
                cfg, bench, policy, battery, trajectories, on_episode=lambda _: advance(1), workers=workers,
            )
        display_metrics(out.report, f"{out.extra['label']} on {battery}")
        _show_files(out.stage, out)
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)
    except RUNTIME_ERRORS as e:
        _runtime_error(e)


@app.command()
def compare(
    config: Path = CONFIG_OPTION,
    battery: Optional[str] = typer.Option(None, "--battery", "-b", help="Restrict to one battery"),
):
    """Show every evaluated policy of the run side by side."""
    try:
        cfg = load_config(config)
        with Registry.for_run(pipeline.run_dir(cfg)) as registry:
            rows = registry.comparison(cfg.run_id, battery)
        display_comparison_table(rows, title=f"Run {cfg.run_id}")
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)


def _field_config(config: Optional[Path]) -> RunConfig:
    if config is not None:
        return load_config(config)
    return config_from_dict({"regions_preset": "four_corners"})


@field_app.command("import")
def field_import(
    grid_csv: Path = typer.Argument(..., help="Grid CSV: lon_deg,lat_deg,bx_nt,by_nt,bz_nt"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Normalized copy (default: <out>/field/<name>)"),
):
    """Validate a field grid and write its normalized copy."""
    try:
        grid = load_grid(grid_csv)
        if output is None:
            output = Path(pipeline.out_root(RunConfig())) / "field" / grid_csv.name
        if output.resolve() == grid_csv.resolve():
            raise ConfigError("output", "refusing to overwrite the input grid")
        save_grid(grid, output)
        cov = grid.coverage
        console.print(f"[green]✓ Grid imported: {grid.nlon} x {grid.nlat} nodes[/green]")
        console.print(f"[dim]Coverage lon {cov.lon_min:g}..{cov.lon_max:g}, lat {cov.lat_min:g}..{cov.lat_max:g}[/dim]")
        console.print(f"[dim]Written to {output}[/dim]")
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)


@field_app.command("query")
def field_query(
    lon: float = typer.Option(..., "--lon", help="Longitude in degrees"),
    lat: float = typer.Option(..., "--lat", help="Latitude in degrees"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Run config (default: desk dipole)"),
):
    """Print the seven field elements at a point."""
    try:
        provider = build_provider(_field_config(config))
        display_field_sample(provider.sample_lonlat(lon, lat), lon, lat)
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)


@field_app.command("export-contours")
def field_export_contours(
    output: Path = typer.Argument(..., help="Lattice CSV to write"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Run config (default: desk dipole)"),
    nlon: int = typer.Option(91, "--nlon", help="Lattice points in longitude"),
    nlat: int = typer.Option(51, "--nlat", help="Lattice points in latitude"),
):
    """Write total intensity on a super-region lattice for external contour plots."""
    try:
        if nlon < 2 or nlat < 2:
            raise ConfigError("nlon", "lattice needs at least 2 x 2 points")
        cfg = _field_config(config)
        provider = build_provider(cfg)
        rows = [{"lon_deg": p.lon_deg, "lat_deg": p.lat_deg, "bf_nt": sample(provider, p).bf}
                for p in iter_lattice(cfg.super_region, nlon, nlat)]
        output.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=["lon_deg", "lat_deg", "bf_nt"]).to_csv(output, index=False)
        console.print(f"[green]✓ {len(rows)} lattice values written to {output}[/green]")
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)


@tasks_app.command("generate")
def tasks_generate(
    config: Path = CONFIG_OPTION,
    battery: str = typer.Option(..., "--battery", "-b", help="Battery name from the config"),
    calibrate: bool = typer.Option(True, "--calibrate/--no-calibrate", help="Also compute the goal radius"),
):
    """Write a battery's task list."""
    try:
        cfg, bench = _load(config)
        out = pipeline.tasks_stage(cfg, bench, battery, calibrate)
        console.print(f"[green]✓ {out.extra['n_tasks']} tasks generated for {battery}[/green]")
        if calibrate:
            console.print(f"[dim]Goal radius D(zeta): {out.extra['goal_radius_km']:.3f} km[/dim]")
        _show_files("tasks", out)
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)
    except RUNTIME_ERRORS as e:
        _runtime_error(e)


@scenario_app.command("run")
def scenario_run(
    scenarios: List[Path] = typer.Argument(..., help="Scenario TOML files"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output root (default: <out>/scenarios)"),
):
    """Run reproduction scenarios and check their expected outcomes."""
    root = out or Path(pipeline.out_root(RunConfig())) / "scenarios"
    results = []
    try:
        for path in scenarios:
            scenario = load_scenario(path)
            with console.status(f"Running {scenario.name}...") as status:
                result = run_scenario(scenario, root, on_progress=status.update, raise_on_failure=False)
            display_scenario_result(scenario.name, result.passed, result.diff_path.read_text(encoding="utf-8"))
            results.append(result)
        summary = write_summary(results, root / "summary.csv")
        console.print(f"[dim]Summary written to {summary}[/dim]")
        failed = [r for r in results if not r.passed]
        if failed:
            raise ScenarioFailure([v for r in failed for v in r.violations])
        console.print(f"[green]✓ {len(results)} scenario(s) passed[/green]")
    except typer.Exit:
        raise
    except INPUT_ERRORS as e:
        _input_error(e)
    except RUNTIME_ERRORS as e:
        _runtime_error(e)


if __name__ == "__main__":
    app()
