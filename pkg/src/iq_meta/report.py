from __future__ import annotations

from dataclasses import dataclass, replace
import io
import json
import math
from pathlib import Path
from typing import Any, Callable, Literal

from rich import box
from rich.console import Console
from rich.table import Table

from .errors import ValidationError
from .estimators import (
    DEFAULT_J2_MAX_ITER,
    DEFAULT_J2_TOL,
    MeasureInputs,
    heterogeneity_report,
    icc_ht_true,
    icc_ma_true,
    summarize_raw,
)
from .files import (
    density_curves,
    parse_raw_csv,
    parse_simulation_config,
    parse_summary_csv,
    write_curves_csv,
    write_simulation_csv,
    write_summary_csv,
)
from .model import ALL_STATISTICS, HeterogeneityReport, MetaDataset, Statistic
from .simulation import SimulationResult, run_experiment


OutputFormat = Literal["text", "structured"]

FIELD_SYMBOLS = {
    "k": "k",
    "total_size": "N",
    "size_weighted_mean": "ȳ",
    "sum_w": "Σw",
    "sum_wy": "Σwy",
    "weighted_mean": "ȳ_w",
    "q_stat": "Q",
    "msb": "MSB_MA",
    "msw": "MSW_MA",
    "nbar": "n̄",
    "f_ratio": "F̄_MA",
    "i2_point": "I²",
    "iq_point": "IQ",
    "iq_ci": "CI",
    "j2_raw": "Ĵ²",
    "j2": "J²",
}

_LABELS = {
    "k": "Studies",
    "total_size": "Total sample size",
    "size_weighted_mean": "Size-weighted mean",
    "sum_w": "Sum of inverse-variance weights",
    "sum_wy": "Sum of weighted effects",
    "weighted_mean": "Inverse-variance weighted mean",
    "q_stat": "Cochran's Q",
    "msb": "Between-population mean square",
    "msw": "Within-population mean square",
    "nbar": "Adjusted sample size",
    "f_ratio": "Mean square ratio",
    "i2_point": "I² statistic",
    "iq_point": "IQ statistic",
    "iq_ci": "Confidence interval for ICC_MA",
    "j2_raw": "Untruncated J²",
    "j2": "J² statistic",
}


@dataclass(frozen=True)
class AnalysisRequest:
    input_path: Path
    alpha: float = 0.05
    statistics: frozenset[Statistic] = ALL_STATISTICS
    output_format: OutputFormat = "text"
    j2_tol: float = DEFAULT_J2_TOL
    j2_max_iter: int = DEFAULT_J2_MAX_ITER

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.statistics:
            raise ValidationError("at least one statistic must be requested")
        if self.output_format not in ("text", "structured"):
            raise ValidationError(f"unknown output format {self.output_format!r}")


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def report_fields(report: HeterogeneityReport, statistics: frozenset[Statistic]) -> list[tuple[str, Any]]:
    out: list[tuple[str, Any]] = [
        ("k", report.k),
        ("total_size", report.total_size),
        ("size_weighted_mean", report.size_weighted_mean),
        ("sum_w", report.sum_w),
        ("sum_wy", report.sum_wy),
        ("weighted_mean", report.weighted_mean),
        ("q_stat", report.q_stat),
        ("msb", report.msb),
        ("msw", report.msw),
        ("nbar", report.nbar),
        ("f_ratio", report.f_ratio),
    ]
    if Statistic.I2 in statistics:
        out.append(("i2_point", report.i2_point))
    if Statistic.IQ in statistics:
        out.append(("iq_point", report.iq_point))
        out.append(("iq_ci", report.iq_ci))
    if Statistic.J2 in statistics and report.j2 is not None:
        out.append(("j2_raw", report.j2.j2_raw))
        out.append(("j2", report.j2.j2))
    return out


def format_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, tuple):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        return "undefined"
    return f"{value:.4f}"


def report_table(report: HeterogeneityReport, statistics: frozenset[Statistic]) -> Table:
    level = round(100 * (1 - report.alpha), 6)
    table = Table(title="Heterogeneity", box=box.SIMPLE)
    table.add_column("Quantity")
    table.add_column("Symbol", style="bold cyan")
    table.add_column("Value", justify="right")
    for name, value in report_fields(report, statistics):
        label = _LABELS[name]
        if name == "iq_ci":
            label = f"{level:g}% {label}"
        table.add_row(label, FIELD_SYMBOLS[name], format_value(value))
    if report.j2 is not None and Statistic.J2 in statistics:
        j2 = report.j2
        state = "converged" if j2.converged else ("aborted (non-finite update)" if j2.aborted_nan else "not converged")
        table.add_row("J² iterations", "", f"{j2.iterations} ({state})")
    return table


def render_text(report: HeterogeneityReport, statistics: frozenset[Statistic], *, width: int = 100) -> str:
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, force_terminal=False, color_system=None)
    console.print(report_table(report, statistics))
    for warning in report.warnings:
        console.print(f"warning: {warning}")
    return buffer.getvalue()


def structured_document(report: HeterogeneityReport, statistics: frozenset[Statistic]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for name, value in report_fields(report, statistics):
        if isinstance(value, tuple):
            value = [_finite_or_none(v) for v in value]
        elif isinstance(value, float):
            value = _finite_or_none(value)
        values[FIELD_SYMBOLS[name]] = value

    document: dict[str, Any] = {
        "alpha": report.alpha,
        "statistics": values,
        "fields": {FIELD_SYMBOLS[name]: name for name, _ in report_fields(report, statistics)},
        "warnings": list(report.warnings),
    }
    if report.j2 is not None and Statistic.J2 in statistics:
        j2 = report.j2
        document["j2_fit"] = {
            "mu_hat": _finite_or_none(j2.mu_hat),
            "tau2_hat": _finite_or_none(j2.tau2_hat),
            "sigma2_hat": _finite_or_none(j2.sigma2_hat),
            "iterations": j2.iterations,
            "converged": j2.converged,
            "aborted_nan": j2.aborted_nan,
            "identifiability_warning": j2.identifiability_warning,
        }
    return document


def render_structured(report: HeterogeneityReport, statistics: frozenset[Statistic]) -> str:
    return json.dumps(structured_document(report, statistics), ensure_ascii=False, indent=2) + "\n"


def run_analysis(request: AnalysisRequest) -> HeterogeneityReport:
    dataset = parse_summary_csv(request.input_path)
    return heterogeneity_report(
        dataset,
        alpha=request.alpha,
        with_j2=Statistic.J2 in request.statistics,
        j2_tol=request.j2_tol,
        j2_max_iter=request.j2_max_iter,
    )


def analyze(request: AnalysisRequest) -> str:
    report = run_analysis(request)
    if request.output_format == "structured":
        return render_structured(report, request.statistics)
    return render_text(report, request.statistics)


def simulate(
    config_path: str | Path,
    out_path: str | Path,
    *,
    seed: int | None = None,
    workers: int = 1,
    progress: Callable[[int], None] | None = None,
) -> SimulationResult:
    config = parse_simulation_config(config_path)
    if seed is not None:
        config = replace(config, seed=seed)
    result = run_experiment(config, workers=workers, progress=progress)
    write_simulation_csv(result, out_path)
    return result


def popcurves(input_path: str | Path, out_path: str | Path, *, points: int = 201) -> int:
    curves = density_curves(parse_summary_csv(input_path), points=points)
    write_curves_csv(curves, out_path)
    return len(curves)


def summarize(input_path: str | Path, out_path: str | Path) -> MetaDataset:
    raw, labels = parse_raw_csv(input_path)
    summary = summarize_raw(raw)
    dataset = MetaDataset(studies=summary.studies, labels=labels)
    write_summary_csv(dataset, out_path)
    return dataset


def compare_measures(tau2: float, sigma2: float, sizes: list[int]) -> list[tuple[int, float, float]]:
    icc_ma = icc_ma_true(MeasureInputs(tau2, sigma2))
    rows = []
    for n in sizes:
        if n < 1:
            raise ValidationError(f"sample size must be >= 1, got {n}")
        rows.append((n, icc_ht_true(MeasureInputs(tau2, sigma2 / n)), icc_ma))
    return rows
