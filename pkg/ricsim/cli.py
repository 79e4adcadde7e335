import sys
from pathlib import Path

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress
from rich.table import Table
from rich.theme import Theme

from .config import DEFAULT_OUTPUT_DIR
from .errors import ConfigError, PolicyError, RicSimError
from .policy import cross_check, load_policy_file
from .runner import run_config, sweep as run_sweep, write_run
from .scenario import apply_overrides, from_dict, load_document
from .utils import parse_value, setup_logging

THEME = Theme({
    "accent": "#C15F3C",
    "ok": "green",
    "bad": "bold red",
})

console = Console(theme=THEME)
err_console = Console(theme=THEME, stderr=True)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _config_failure(e: ConfigError):
    lines = "\n".join(f"[accent]{path}[/accent]: {message}" for path, message in e.diagnostics)
    err_console.print(Panel(lines or str(e), title="[bad]Invalid scenario[/bad]", border_style="red",
                            title_align="left"))
    sys.exit(EXIT_CONFIG)


def _runtime_failure(e: Exception):
    err_console.print(Panel(f"[bad]Error:[/bad] {e}", title="Run failed", border_style="red", title_align="left"))
    sys.exit(EXIT_RUNTIME)


def _summary_table(title: str, summary) -> Table:
    table = Table(title=title, title_justify="left")
    table.add_column("metric", style="accent")
    table.add_column("value", justify="right")
    for metric, value in sorted(summary.items()):
        table.add_row(metric, f"{value:.6g}")
    return table


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
def cli(verbose):
    """[bold accent]ricsim[/bold accent]: deterministic Near-RT RIC and xApp simulator"""
    setup_logging(verbose)


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a scenario field")
def run(scenario, seed, out_dir, overrides):
    """Run one scenario and write its CSV tables and report.md"""
    try:
        doc = apply_overrides(load_document(scenario), overrides)
        if seed is not None:
            doc["seed"] = seed
        cfg = from_dict(doc)
    except ConfigError as e:
        _config_failure(e)

    target = Path(out_dir or cfg.output_dir or DEFAULT_OUTPUT_DIR / cfg.name)
    try:
        with console.status(f"[bold accent]Running {cfg.name}...", spinner="dots"):
            result = run_config(cfg)
            written = write_run(result, target)
    except ConfigError as e:
        _config_failure(e)
    except (RicSimError, OSError) as e:
        _runtime_failure(e)

    console.print(_summary_table(f"{cfg.name} (seed {cfg.seed})", result.summary))
    console.print(Panel(
        f"[bold accent]Done.[/bold accent] {len(written['files'])} files in [accent]{written['dir']}[/accent]\n"
        f"sha256 of CSVs: {written['checksum']}",
        border_style="accent",
        title_align="left",
    ))


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--param", required=True, help="Dotted key to vary, e.g. ta.scs_khz")
@click.option("--values", required=True, help="Comma-separated values")
@click.option("--seeds", type=int, default=1, show_default=True, help="Runs per value")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a scenario field")
def sweep(scenario, param, values, seeds, out_dir, overrides):
    """Repeat a scenario over parameter values and seeds; writes sweep.csv"""
    parsed = [parse_value(v.strip()) for v in values.split(",") if v.strip()]
    if not parsed:
        err_console.print("[bad]--values is empty[/bad]")
        sys.exit(EXIT_CONFIG)
    if seeds < 1:
        err_console.print("[bad]--seeds must be >= 1[/bad]")
        sys.exit(EXIT_CONFIG)
    try:
        doc = apply_overrides(load_document(scenario), overrides)
        for value in parsed:
            from_dict(apply_overrides(doc, [(param, value)]))
    except ConfigError as e:
        _config_failure(e)

    target = Path(out_dir or DEFAULT_OUTPUT_DIR / f"{doc['name']}_sweep")
    try:
        with Progress(console=console) as progress:
            task = progress.add_task(f"[accent]{param}", total=len(parsed) * seeds)
            table = run_sweep(doc, param, parsed, seeds, target,
                              on_run=lambda value, seed: progress.advance(task))
    except ConfigError as e:
        _config_failure(e)
    except (RicSimError, OSError) as e:
        _runtime_failure(e)

    shown = Table(title=f"{doc['name']}: {param}", title_justify="left")
    means = [c for c in table.columns if c.endswith("_mean")]
    shown.add_column(param, style="accent")
    for c in means:
        shown.add_column(c[:-len("_mean")], justify="right")
    for _, row in table.iterrows():
        shown.add_row(str(row["value"]), *(f"{row[c]:.4g}" for c in means))
    console.print(shown)
    console.print(f"[accent]sweep.csv[/accent] written to {target}")


@cli.group()
def policy():
    """A1 policy tools"""


@policy.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(dir_okay=False))
def lint(files):
    """Validate policy files and cross-check them in order"""
    active = []
    failed = False
    for path in files:
        try:
            candidate = load_policy_file(path)
        except PolicyError as e:
            err_console.print(f"[bad]FAIL[/bad] {path}: [accent]{e.path}[/accent] {e.message}")
            failed = True
            continue
        except OSError as e:
            err_console.print(f"[bad]FAIL[/bad] {path}: {e}")
            failed = True
            continue
        findings = cross_check(active, candidate)
        if findings:
            failed = True
            for finding in findings:
                err_console.print(f"[bad]FAIL[/bad] {path}: {finding.kind} ({finding.detail})")
        else:
            console.print(f"[ok]OK[/ok]   {path}: {candidate.describe()}")
        active = [p for p in active if p.key != candidate.key] + [candidate]
    sys.exit(EXIT_RUNTIME if failed else EXIT_OK)


if __name__ == "__main__":
    cli()
