import logging
import os
import sys

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from tabulate import tabulate

from solvers.errors import ConfigError, ExportError
from solvers.experiment import load_config, run_experiment
from tools.exporters import read_table_csv
from utils.trace_enrichment import SolverTraceHook, setup_tracing

# load environment variables
load_dotenv()

# initialize console for pretty output
console = Console()

EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


def configure_logging(level_name=None):
    """Route library logging through rich; level from flag, then BANGBANG_LOG_LEVEL."""
    level_name = (level_name or os.getenv('BANGBANG_LOG_LEVEL', 'WARNING')).upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {level_name!r}")
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def parse_levels(value):
    if value is None:
        return None
    try:
        return [int(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f"--levels expects comma separated integers, got {value!r}")


def print_level(record):
    status = "[green]converged[/green]" if record.converged else "[red]not converged[/red]"
    console.print(
        f"  n={record.n:<4} nodes={record.nodes:<6} iters={record.iterations:<4} "
        f"fact.={record.factorizations:<5} solves={record.solves:<6} "
        f"time={record.wall_time:.4f}s {status}"
    )
    for warning in record.warnings:
        console.print(f"    [yellow]{warning}[/yellow]")


@click.group()
def cli():
    """Bang-bang optimal control solvers on the unit square (-1, 1)^2."""


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='Experiment JSON file.')
@click.option('--case', type=click.Choice(['linear', 'semilinear', 'fixed-point']))
@click.option('--ub', type=float, help='Control bound u_b.')
@click.option('--alpha', type=float, help='Cubic coefficient of the state equation.')
@click.option('--levels', help='Comma separated mesh sizes, e.g. 8,16,32.')
@click.option('--out', 'output_dir', type=click.Path(file_okay=False), help='Output directory.')
@click.option('--tol', type=float, help='Outer stopping tolerance.')
@click.option('--max-iter', type=int, help='Outer iteration cap.')
@click.option('--solver', type=click.Choice(['semismooth', 'trust-region']))
@click.option('--no-timings', is_flag=True, help='Write time_s as 0.0000 for reproducible tables.')
@click.option('--no-fields', is_flag=True, help='Skip the VTK control exports.')
@click.option('--log-level', help='Logging level (default from BANGBANG_LOG_LEVEL or WARNING).')
@click.option('--trace-console', is_flag=True, help='Print OpenTelemetry spans to stdout.')
def run(config_path, case, ub, alpha, levels, output_dir, tol, max_iter, solver,
        no_timings, no_fields, log_level, trace_console):
    """Run an experiment and write table.csv, trace and VTK files."""
    try:
        configure_logging(log_level)
        overrides = {
            'case': case,
            'u_b': ub,
            'alpha': alpha,
            'levels': parse_levels(levels),
            'output_dir': output_dir,
            'tolerance': tol,
            'max_iterations': max_iter,
            'solver': solver,
            'record_timings': False if no_timings else None,
            'export_fields': False if no_fields else None,
        }
        config = load_config(
            config_path, overrides, defaults={'output_dir': os.getenv('BANGBANG_OUTPUT_DIR')}
        )
    except ConfigError as e:
        console.print(f"[red]✗ Configuration error: {e}[/red]")
        sys.exit(EXIT_CONFIG_ERROR)

    endpoint = os.getenv('OTEL_EXPORTER_OTLP_ENDPOINT')
    provider = None
    if endpoint or trace_console:
        provider = setup_tracing(os.getenv('OTEL_SERVICE_NAME', 'bangbang'), endpoint, console=trace_console)

    console.print(Panel.fit(
        f"[bold blue]Bang-bang control: {config.case}[/bold blue]\n"
        f"[dim]solver={config.resolved_solver} u_b={config.u_b:g} alpha={config.alpha:g} "
        f"levels={','.join(str(n) for n in config.levels)}[/dim]",
        border_style="blue"
    ))

    try:
        report = run_experiment(config, hook=SolverTraceHook(), on_level=print_level)
    except ExportError as e:
        console.print(f"[red]✗ Output error: {e}[/red]")
        sys.exit(EXIT_IO_ERROR)
    finally:
        if provider is not None:
            provider.shutdown()

    console.print()
    console.print(report.summary())
    console.print(f"\n[green]Results written to {config.output_dir}[/green]")


@cli.command()
@click.argument('table', type=click.Path(dir_okay=False))
def summarize(table):
    """Print an existing table.csv."""
    try:
        frame = read_table_csv(table)
    except ExportError as e:
        console.print(f"[red]✗ {e}[/red]")
        sys.exit(EXIT_IO_ERROR)
    console.print(tabulate(
        frame.values.tolist(),
        headers=['# nodes', 'iters', 'fact.', 'solves', 'time (s)', 'converged'],
        tablefmt='grid',
        floatfmt='.4f',
    ))


if __name__ == "__main__":
    cli()
