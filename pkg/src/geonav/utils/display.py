"""Console tables and panels for geonav."""

import math
from typing import Dict, List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..core.models import FieldSample, MetricsReport

console = Console()


def _fmt(value, digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "[dim]n/a[/dim]"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def display_comparison_table(rows: List[Dict], title: str = "Comparison") -> None:
    """Display metrics rows (one per policy) in table layout.

    Args:
        rows: Dictionaries with the comparison columns
        title: Table title
    """
    if not rows:
        console.print("[yellow]No metrics recorded.[/yellow]")
        return

    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("Policy", style="cyan", no_wrap=True)
    table.add_column("Battery", style="blue", no_wrap=True)
    table.add_column("SR ‰", style="green", justify="right")
    table.add_column("SPL ‰", style="green", justify="right")
    table.add_column("MAE rad", justify="right")
    table.add_column("RMSE rad", justify="right")
    table.add_column("NE km", justify="right")
    table.add_column("TNT", justify="right")

    for row in rows:
        table.add_row(
            row["policy"],
            row.get("battery", ""),
            _fmt(row["sr_permille"], 1),
            _fmt(row["spl_permille"], 1),
            _fmt(row["heading_mae_rad"], 4),
            _fmt(row["heading_rmse_rad"], 4),
            _fmt(row["ne_km"], 3),
            _fmt(row["tnt_steps"], 1),
        )

    console.print(table)
    console.print(f"\n[dim]Total: {len(rows)} row(s)[/dim]")


def display_metrics(report: MetricsReport, title: str) -> None:
    details = (
        f"SR: {_fmt(report.sr_permille, 1)} ‰   SPL: {_fmt(report.spl_permille, 1)} ‰\n"
        f"Heading MAE/RMSE: {_fmt(report.heading_mae_rad, 4)} / {_fmt(report.heading_rmse_rad, 4)} rad\n"
        f"NE: {_fmt(report.ne_km, 3)} km (successes {_fmt(report.ne_success_km, 3)} km)\n"
        f"TNT: {_fmt(report.tnt_steps, 1)} steps (successes {_fmt(report.tnt_success_steps, 1)})\n"
        f"Tasks: {report.n_tasks}"
    )
    console.print(Panel(details, title=title, border_style="blue"))


def display_field_sample(sample: FieldSample, lon: float, lat: float) -> None:
    """Print the seven field elements at one point."""
    table = Table(title=f"Field at lon {lon:g}, lat {lat:g}", show_header=True, header_style="bold magenta")
    table.add_column("Element", style="cyan")
    table.add_column("Value", justify="right")
    table.add_column("Unit", style="dim")
    table.add_row("BF", f"{sample.bf:.4f}", "nT")
    table.add_row("BH", f"{sample.bh:.4f}", "nT")
    table.add_row("BX", f"{sample.bx:.4f}", "nT")
    table.add_row("BY", f"{sample.by:.4f}", "nT")
    table.add_row("BZ", f"{sample.bz:.4f}", "nT")
    table.add_row("D", f"{math.degrees(sample.decl_d):.6f}", "deg")
    table.add_row("I", f"{math.degrees(sample.incl_i):.6f}", "deg")
    console.print(table)
    if sample.degenerate:
        console.print("[yellow]Horizontal field vanishes here; declination is undefined.[/yellow]")


def display_scenario_result(name: str, passed: bool, diff: Optional[str] = None) -> None:
    status = "[green]✓ passed[/green]" if passed else "[red]✗ failed[/red]"
    console.print(Panel(diff or "[dim]no differences[/dim]", title=f"{name}: {status}",
                        border_style="green" if passed else "red"))
