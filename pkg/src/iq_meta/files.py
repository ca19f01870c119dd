"""Flat-file formats.

Summary CSV (UTF-8, comma separated, header required)::

    study,y,n,var_y
    Wang (2013),-3.10,8,1.81

`var_y` is the squared standard error of `y`, not a standard deviation. From a
reported standard deviation sd use var_y = sd**2 / n; from a standard error se
use var_y = se**2.

Raw CSV (long format): ``study,value`` with one row per observation.

Simulation config: one ``key=value`` per line; ``#`` starts a comment that runs to
the end of the line. ``sizes`` is only valid with ``pattern=custom``.
"""

from __future__ import annotations

from dataclasses import fields
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConfigError, InputFormatError, ValidationError
from .model import MetaDataset, RawDataset, Statistic, validate_meta
from .simulation import SimulationConfig, SimulationResult, SizePattern


SUMMARY_COLUMNS = ("study", "y", "n", "var_y")
RAW_COLUMNS = ("study", "value")
SIMULATION_COLUMNS = (
    "tau2",
    "k",
    "pattern",
    "n",
    "statistic",
    "mean",
    "mc_se",
    "truth",
    "coverage",
    "nonconv_rate",
)
CURVE_COLUMNS = ("study", "x", "density")
CONFIG_KEYS = (
    "mu",
    "sigma2",
    "tau2_list",
    "k_list",
    "pattern",
    "n_start",
    "n_stop",
    "n_step",
    "replications",
    "alpha",
    "seed",
    "statistics",
    "coverage",
    "j2_balanced",
    "sizes",
)
MC_SE_UNDEFINED = "NA"


def _fmt(value: float) -> str:
    return repr(float(value))


def _read_table(path: str | Path, columns: tuple[str, ...]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise InputFormatError(path, "empty file (expected header " + ",".join(columns) + ")") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputFormatError(path, f"not a valid UTF-8 CSV file: {e}") from e

    header = [c.strip() for c in frame.columns]
    missing = [c for c in columns if c not in header]
    extra = [c for c in header if c not in columns]
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing column(s) " + ", ".join(missing))
        if extra:
            parts.append("unexpected column(s) " + ", ".join(extra))
        raise InputFormatError(path, "; ".join(parts))
    frame.columns = header
    if frame.empty:
        raise InputFormatError(path, "no data rows")
    return frame


def _number(path: str | Path, row: int, column: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputFormatError(path, f"column {column!r}: {text!r} is not a number", row=row) from None
    if not math.isfinite(value):
        raise InputFormatError(path, f"column {column!r}: {text!r} is not finite", row=row)
    return value


def _integer(path: str | Path, row: int, column: str, text: str) -> int:
    value = _number(path, row, column, text)
    if not value.is_integer():
        raise InputFormatError(path, f"column {column!r}: {text!r} is not an integer", row=row)
    return int(value)


def parse_summary_csv(path: str | Path) -> MetaDataset:
    frame = _read_table(path, SUMMARY_COLUMNS)
    labels: list[str] = []
    effects: list[float] = []
    sizes: list[int] = []
    variances: list[float] = []
    for row, record in enumerate(frame.itertuples(index=False), start=1):
        labels.append(record.study.strip() or f"study {row}")
        effects.append(_number(path, row, "y", record.y))
        sizes.append(_integer(path, row, "n", record.n))
        variances.append(_number(path, row, "var_y", record.var_y))

    dataset = MetaDataset.from_arrays(effects, sizes, variances, labels=labels)
    try:
        return validate_meta(dataset)
    except ValidationError as e:
        row = None if e.index is None else e.index + 1
        raise InputFormatError(path, str(e), row=row) from e


def write_summary_csv(dataset: MetaDataset, path: str | Path) -> None:
    frame = pd.DataFrame(
        {
            "study": [dataset.label(i) for i in range(dataset.k)],
            "y": [_fmt(s.effect) for s in dataset.studies],
            "n": [str(s.size) for s in dataset.studies],
            "var_y": [_fmt(s.var_effect) for s in dataset.studies],
        },
        columns=list(SUMMARY_COLUMNS),
    )
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def parse_raw_csv(path: str | Path) -> tuple[RawDataset, tuple[str, ...]]:
    frame = _read_table(path, RAW_COLUMNS)
    groups: dict[str, list[float]] = {}
    for row, record in enumerate(frame.itertuples(index=False), start=1):
        label = record.study.strip()
        if not label:
            raise InputFormatError(path, "empty study label", row=row)
        groups.setdefault(label, []).append(_number(path, row, "value", record.value))
    return RawDataset.from_groups(groups.values()), tuple(groups)


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"expected true/false, got {text!r}", key=key)


def _parse_list(key: str, text: str, kind: type) -> tuple[Any, ...]:
    try:
        values = tuple(kind(part.strip()) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected a comma list of {kind.__name__} values, got {text!r}", key=key) from None
    if not values:
        raise ConfigError("empty list", key=key)
    return values


def _parse_scalar(key: str, text: str, kind: type) -> Any:
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"expected {kind.__name__}, got {text!r}", key=key) from None


def read_config_pairs(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key (allowed: {', '.join(CONFIG_KEYS)})", key=key)
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicated key", key=key)
        pairs[key] = value
    return pairs


def parse_simulation_config(path: str | Path) -> SimulationConfig:
    pairs = read_config_pairs(path)
    defaults = {f.name: f.default for f in fields(SimulationConfig)}
    kwargs: dict[str, Any] = {}

    if "mu" in pairs:
        kwargs["mu"] = _parse_scalar("mu", pairs["mu"], float)
    if "sigma2" in pairs:
        kwargs["sigma2"] = _parse_scalar("sigma2", pairs["sigma2"], float)
    if "tau2_list" in pairs:
        kwargs["tau2_values"] = _parse_list("tau2_list", pairs["tau2_list"], float)
    if "k_list" in pairs:
        kwargs["k_values"] = _parse_list("k_list", pairs["k_list"], int)
    if "pattern" in pairs:
        try:
            kwargs["pattern"] = SizePattern(pairs["pattern"].strip().lower())
        except ValueError:
            raise ConfigError(f"unknown pattern {pairs['pattern']!r}", key="pattern") from None
    if "sizes" in pairs:
        if kwargs.get("pattern") is not SizePattern.CUSTOM:
            raise ConfigError("only allowed with pattern=custom", key="sizes")
        kwargs["multipliers"] = _parse_list("sizes", pairs["sizes"], int)
        kwargs.setdefault("k_values", (len(kwargs["multipliers"]),))

    grid = defaults["n_grid"]
    n_start = _parse_scalar("n_start", pairs["n_start"], int) if "n_start" in pairs else grid[0]
    n_stop = _parse_scalar("n_stop", pairs["n_stop"], int) if "n_stop" in pairs else grid[-1]
    n_step = _parse_scalar("n_step", pairs["n_step"], int) if "n_step" in pairs else 10
    if n_step < 1:
        raise ConfigError(f"must be >= 1, got {n_step}", key="n_step")
    if n_stop < n_start:
        raise ConfigError(f"n_stop={n_stop} is below n_start={n_start}", key="n_stop")
    kwargs["n_grid"] = tuple(range(n_start, n_stop + 1, n_step))

    if "replications" in pairs:
        kwargs["replications"] = _parse_scalar("replications", pairs["replications"], int)
    if "alpha" in pairs:
        kwargs["alpha"] = _parse_scalar("alpha", pairs["alpha"], float)
    if "seed" in pairs:
        kwargs["seed"] = _parse_scalar("seed", pairs["seed"], int)
    if "statistics" in pairs:
        try:
            kwargs["statistics"] = Statistic.parse_list(pairs["statistics"])
        except ValidationError as e:
            raise ConfigError(str(e), key="statistics") from e
    if "coverage" in pairs:
        kwargs["coverage"] = _parse_bool("coverage", pairs["coverage"])
    if "j2_balanced" in pairs:
        kwargs["j2_balanced"] = _parse_bool("j2_balanced", pairs["j2_balanced"])

    try:
        return SimulationConfig(**kwargs)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def simulation_rows(result: SimulationResult) -> list[dict[str, str]]:
    pattern = result.config.pattern.value
    rows: list[dict[str, str]] = []
    for cell_result in result.cells:
        cell = cell_result.cell
        base = {
            "tau2": _fmt(cell.tau2),
            "k": str(cell.k),
            "pattern": pattern,
            "n": str(cell.n),
            "truth": _fmt(cell_result.icc_ma_truth),
        }
        if not cell_result.summaries:
            rows.append({**base, "statistic": "", "mean": "", "mc_se": "", "coverage": "", "nonconv_rate": ""})
            continue
        for statistic, summary in cell_result.summaries.items():
            coverage = cell_result.coverage if statistic is Statistic.IQ else None
            nonconv = cell_result.j2_nonconvergence_rate if statistic is Statistic.J2 else None
            rows.append(
                {
                    **base,
                    "statistic": statistic.value,
                    "mean": _fmt(summary.mean),
                    "mc_se": MC_SE_UNDEFINED if summary.mc_se is None else _fmt(summary.mc_se),
                    "coverage": "" if coverage is None else _fmt(coverage),
                    "nonconv_rate": "" if nonconv is None else _fmt(nonconv),
                }
            )
    return rows


def write_simulation_csv(result: SimulationResult, path: str | Path) -> None:
    frame = pd.DataFrame(simulation_rows(result), columns=list(SIMULATION_COLUMNS))
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def density_curves(dataset: MetaDataset, *, points: int = 201, width: float = 4.0) -> pd.DataFrame:
    """Normal population curves N(y_i, n_i * var_y_i) over mean ± width standard deviations."""
    if points < 2:
        raise ValidationError(f"need at least 2 points per curve, got {points}")
    validate_meta(dataset)
    parts = []
    for i, study in enumerate(dataset.studies):
        sd = math.sqrt(study.size * study.var_effect)
        x = np.linspace(study.effect - width * sd, study.effect + width * sd, points)
        parts.append(
            pd.DataFrame(
                {
                    "study": dataset.label(i),
                    "x": x,
                    "density": stats.norm.pdf(x, loc=study.effect, scale=sd),
                }
            )
        )
    return pd.concat(parts, ignore_index=True)[list(CURVE_COLUMNS)]


def write_curves_csv(curves: pd.DataFrame, path: str | Path) -> None:
    frame = curves.assign(x=curves["x"].map(_fmt), density=curves["density"].map(_fmt))
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
