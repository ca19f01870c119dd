from __future__ import annotations

import argparse
import logging
from pathlib import Path
import sys

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeRemainingColumn
from rich.table import Table

from . import __version__
from .errors import ConfigError, InputFormatError, IqMetaError, NumericalError, ValidationError
from .files import parse_simulation_config
from .model import ALL_STATISTICS, Statistic
from .report import (
    AnalysisRequest,
    compare_measures,
    popcurves,
    render_structured,
    report_table,
    run_analysis,
    simulate,
    summarize,
)
from .settings import AnalysisSettings, load_settings, save_settings, settings_path


EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


def _configure_logging(verbosity: int, console: Console) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    handler = RichHandler(console=console, show_path=False, show_time=False)
    root = logging.getLogger("iq_meta")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _error_panel(message: str, *, numerical: bool = False) -> Table:
    table = Table(title="Error", box=box.SIMPLE, border_style="red", show_header=False)
    table.add_column("Details", style="red")
    table.add_row(message)
    table.add_row("")
    table.add_row("Troubleshooting")
    if numerical:
        table.add_row("- This is an internal numerical fault; rerun with -vv and report the input")
    else:
        table.add_row("- Summary CSV header must be `study,y,n,var_y`")
        table.add_row("- `var_y` is the squared standard error: se**2, or sd**2 / n")
        table.add_row("- Every study needs n >= 2 and var_y > 0; at least 2 studies")
    return table


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _statistics(text: str) -> frozenset[Statistic]:
    try:
        return Statistic.parse_list(text)
    except ValidationError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _sizes(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}") from None


def _build_parser(settings: AnalysisSettings) -> argparse.ArgumentParser:
    parser = _Parser(
        prog="iqmeta",
        description="Heterogeneity in random-effects meta-analysis: IQ, I² and J².",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More log output (-v info, -vv debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="Quantify heterogeneity of a summary CSV")
    analyze.add_argument("--input", type=Path, required=True, help="Summary CSV with header study,y,n,var_y")
    analyze.add_argument("--alpha", type=float, default=settings.alpha, help="1 - confidence level (default: %(default)s)")
    analyze.add_argument("--stats", type=_statistics, default=ALL_STATISTICS, help="Comma list of iq,i2,j2 (default: all)")
    analyze.add_argument("--format", choices=["text", "structured"], default="text", help="Output format (default: text)")
    analyze.add_argument("--j2-tol", type=float, default=settings.j2_tol, help="J² convergence tolerance (default: %(default)s)")
    analyze.add_argument("--j2-max-iter", type=int, default=settings.j2_max_iter, help="J² iteration cap (default: %(default)s)")

    sim = sub.add_parser("simulate", help="Run a Monte Carlo experiment from a key=value config")
    sim.add_argument("--config", type=Path, required=True, help="Experiment config file")
    sim.add_argument("--out", type=Path, required=True, help="Output CSV")
    sim.add_argument("--seed", type=int, default=None, help="Override the config seed")
    sim.add_argument("--workers", type=int, default=settings.workers, help="Worker processes (default: %(default)s)")

    curves = sub.add_parser("popcurves", help="Emit plot-ready normal population curves per study")
    curves.add_argument("--input", type=Path, required=True, help="Summary CSV")
    curves.add_argument("--out", type=Path, required=True, help="Output CSV (study,x,density)")
    curves.add_argument("--points", type=int, default=201, help="Points per curve (default: %(default)s)")

    summ = sub.add_parser("summarize", help="Turn long-format raw data (study,value) into a summary CSV")
    summ.add_argument("--input", type=Path, required=True, help="Raw CSV")
    summ.add_argument("--out", type=Path, required=True, help="Summary CSV to write")

    measures = sub.add_parser("measures", help="Compare ICC_HT and ICC_MA across per-study sample sizes")
    measures.add_argument("--tau2", type=float, required=True, help="Between-study variance")
    measures.add_argument("--sigma2", type=float, required=True, help="Common error variance of observations")
    measures.add_argument("--n", type=_sizes, default=[4, 40, 400], help="Comma list of sample sizes")

    sett = sub.add_parser("settings", help="Show or save default settings")
    sett.add_argument("--save", action="store_true", help=f"Write the values below to {settings_path()}")
    sett.add_argument("--alpha", type=float, default=settings.alpha)
    sett.add_argument("--j2-tol", type=float, default=settings.j2_tol)
    sett.add_argument("--j2-max-iter", type=int, default=settings.j2_max_iter)
    sett.add_argument("--workers", type=int, default=settings.workers)
    return parser


def _run_analyze(console: Console, args) -> int:
    request = AnalysisRequest(
        input_path=args.input,
        alpha=args.alpha,
        statistics=args.stats,
        output_format=args.format,
        j2_tol=args.j2_tol,
        j2_max_iter=args.j2_max_iter,
    )
    report = run_analysis(request)
    if request.output_format == "structured":
        sys.stdout.write(render_structured(report, request.statistics))
        return EXIT_OK
    console.print(report_table(report, request.statistics))
    for warning in report.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")
    return EXIT_OK


def _run_simulate(console: Console, args) -> int:
    with Progress(
        TextColumn("{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeRemainingColumn(),
        console=console,
        transient=True,
    ) as progress:
        task_id = progress.add_task("Replications", total=None)

        def advance(count: int) -> None:
            progress.update(task_id, advance=count)

        config = parse_simulation_config(args.config)
        total = len(config.cells()) * config.replications if config.reported_statistics else 0
        progress.update(task_id, total=total)
        result = simulate(args.config, args.out, seed=args.seed, workers=args.workers, progress=advance)

    console.print(f"[green]Wrote {len(result.cells)} cell(s) to[/green] {args.out}")
    return EXIT_OK


def _run_measures(console: Console, args) -> int:
    table = Table(title="Heterogeneity measures", box=box.SIMPLE)
    table.add_column("n", justify="right", style="bold cyan")
    table.add_column("ICC_HT", justify="right")
    table.add_column("ICC_MA", justify="right")
    for n, icc_ht, icc_ma in compare_measures(args.tau2, args.sigma2, args.n):
        table.add_row(str(n), f"{icc_ht:.4f}", f"{icc_ma:.4f}")
    console.print(table)
    return EXIT_OK


def _run_settings(console: Console, args) -> int:
    settings = AnalysisSettings(
        alpha=args.alpha, j2_tol=args.j2_tol, j2_max_iter=args.j2_max_iter, workers=args.workers
    )
    if args.save:
        path = save_settings(settings)
        console.print(f"[green]Saved settings to[/green] {path}")
    table = Table(title="Settings", box=box.SIMPLE, show_header=False)
    table.add_column("Key", style="bold cyan")
    table.add_column("Value")
    for key, value in vars(settings).items():
        table.add_row(key, str(value))
    console.print(table)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    console = Console(stderr=True)
    out = Console()
    _configure_logging(0, console)

    parser = _build_parser(load_settings())
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, console)

    try:
        if args.command == "analyze":
            return _run_analyze(out, args)
        if args.command == "simulate":
            return _run_simulate(console, args)
        if args.command == "popcurves":
            rows = popcurves(args.input, args.out, points=args.points)
            console.print(f"[green]Wrote {rows} curve point(s) to[/green] {args.out}")
            return EXIT_OK
        if args.command == "summarize":
            dataset = summarize(args.input, args.out)
            console.print(f"[green]Wrote {dataset.k} study summaries to[/green] {args.out}")
            return EXIT_OK
        if args.command == "measures":
            return _run_measures(out, args)
        if args.command == "settings":
            return _run_settings(out, args)
    except NumericalError as e:
        console.print(_error_panel(str(e), numerical=True))
        return EXIT_NUMERICAL
    except (ValidationError, InputFormatError, ConfigError) as e:
        console.print(_error_panel(str(e)))
        return EXIT_INPUT
    except OSError as e:
        console.print(_error_panel(f"{e.filename or ''}: {e.strerror or e}"))
        return EXIT_INPUT
    except IqMetaError as e:
        console.print(_error_panel(str(e)))
        return EXIT_INPUT

    parser.error(f"unknown command {args.command!r}")
    return EXIT_INPUT
