from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Callable, Sequence

import numpy as np

from .distributions import RandomStream, sample_normals
from .errors import ValidationError
from .estimators import (
    DEFAULT_J2_MAX_ITER,
    DEFAULT_J2_TOL,
    i_squared,
    iq_ci,
    iq_point,
    j2_estimate,
    summarize_raw,
)
from .model import ALL_STATISTICS, PopulationTruth, RawDataset, Statistic, validate_meta


logger = logging.getLogger(__name__)

CHUNK_SIZE = 500


class SizePattern(str, Enum):
    BALANCED = "balanced"
    UNBALANCED = "unbalanced"
    CUSTOM = "custom"


def study_sizes(pattern: SizePattern, k: int, n: int, multipliers: Sequence[int] | None = None) -> tuple[int, ...]:
    if pattern is SizePattern.BALANCED:
        return (n,) * k
    if pattern is SizePattern.UNBALANCED:
        return tuple(i * n for i in range(1, k + 1))
    if multipliers is None:
        raise ValidationError("custom size pattern needs per-study multipliers")
    return tuple(m * n for m in multipliers)


@dataclass(frozen=True)
class SimulationCell:
    index: int
    truth: PopulationTruth
    k: int
    n: int
    sizes: tuple[int, ...]

    @property
    def tau2(self) -> float:
        return self.truth.between_var


@dataclass(frozen=True)
class SimulationConfig:
    mu: float = 0.0
    sigma2: float = 100.0
    tau2_values: tuple[float, ...] = (6.0, 60.0)
    k_values: tuple[int, ...] = (3, 10)
    pattern: SizePattern = SizePattern.BALANCED
    n_grid: tuple[int, ...] = tuple(range(10, 101, 10))
    replications: int = 10_000
    alpha: float = 0.05
    seed: int = 20_211_001
    statistics: frozenset[Statistic] = ALL_STATISTICS
    coverage: bool = True
    j2_balanced: bool = False
    multipliers: tuple[int, ...] | None = None
    j2_tol: float = DEFAULT_J2_TOL
    j2_max_iter: int = DEFAULT_J2_MAX_ITER

    def __post_init__(self) -> None:
        if not self.tau2_values:
            raise ValidationError("at least one between-study variance is required")
        if not self.n_grid:
            raise ValidationError("the n grid is empty")
        if any(n < 2 for n in self.n_grid):
            raise ValidationError(f"every base size must be >= 2, got {self.n_grid}")
        if any(k < 2 for k in self.k_values) or not self.k_values:
            raise ValidationError(f"every k must be >= 2, got {self.k_values}")
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.pattern is SizePattern.CUSTOM:
            if not self.multipliers or any(m < 1 for m in self.multipliers):
                raise ValidationError("custom pattern needs positive integer multipliers")
            if self.k_values != (len(self.multipliers),):
                raise ValidationError(
                    f"custom pattern fixes k = {len(self.multipliers)}, got k values {self.k_values}"
                )
        # validates mu, sigma2 and every tau2
        for tau2 in self.tau2_values:
            PopulationTruth(self.mu, tau2, self.sigma2)

    @property
    def evaluates_j2(self) -> bool:
        return Statistic.J2 in self.statistics and (
            self.pattern is not SizePattern.BALANCED or self.j2_balanced
        )

    @property
    def reported_statistics(self) -> tuple[Statistic, ...]:
        return tuple(
            s for s in Statistic if s in self.statistics and (s is not Statistic.J2 or self.evaluates_j2)
        )

    def cells(self) -> list[SimulationCell]:
        cells: list[SimulationCell] = []
        for tau2 in self.tau2_values:
            truth = PopulationTruth(self.mu, tau2, self.sigma2)
            for k in self.k_values:
                for n in self.n_grid:
                    sizes = study_sizes(self.pattern, k, n, self.multipliers)
                    cells.append(SimulationCell(index=len(cells), truth=truth, k=k, n=n, sizes=sizes))
        return cells


@dataclass(frozen=True)
class StatisticSummary:
    mean: float
    # None when fewer than two replications were usable
    mc_se: float | None
    count: int


@dataclass(frozen=True)
class CellResult:
    cell: SimulationCell
    icc_ma_truth: float
    icc_ht_truth: float | None
    summaries: dict[Statistic, StatisticSummary] = field(default_factory=dict)
    coverage: float | None = None
    j2_nonconvergence_rate: float | None = None
    skipped: int = 0
    replications: int = 0


@dataclass(frozen=True)
class SimulationResult:
    config: SimulationConfig
    cells: tuple[CellResult, ...]


@dataclass(frozen=True)
class _Chunk:
    cell_index: int
    start: int
    values: dict[Statistic, np.ndarray]
    hits: np.ndarray
    nonconverged: np.ndarray
    skipped: np.ndarray


def generate_replication(truth: PopulationTruth, sizes: Sequence[int], stream: RandomStream) -> RawDataset:
    if any(n < 2 for n in sizes):
        raise ValidationError(f"every study size must be >= 2, got {tuple(sizes)}")
    deltas = sample_normals(0.0, truth.between_var, len(sizes), stream)
    errors = sample_normals(0.0, truth.error_var, int(sum(sizes)), stream)
    groups = np.split(errors, np.cumsum(sizes)[:-1])
    return RawDataset.from_groups(truth.grand_mean + d + e for d, e in zip(deltas, groups))


def _run_chunk(config: SimulationConfig, cell: SimulationCell, start: int, stop: int) -> _Chunk:
    size = stop - start
    wanted = config.reported_statistics
    values = {s: np.full(size, np.nan) for s in wanted}
    hits = np.full(size, np.nan)
    nonconverged = np.zeros(size, dtype=bool)
    skipped = np.zeros(size, dtype=bool)
    truth = cell.truth.icc_ma

    for offset in range(size):
        stream = RandomStream.for_replication(config.seed, cell.index, start + offset)
        raw = generate_replication(cell.truth, cell.sizes, stream)
        try:
            data = validate_meta(summarize_raw(raw))
        except ValidationError:
            skipped[offset] = True
            continue

        if Statistic.IQ in values:
            values[Statistic.IQ][offset] = iq_point(data)
            if config.coverage:
                lower, upper = iq_ci(data, config.alpha)
                hits[offset] = 1.0 if lower <= truth <= upper else 0.0
        if Statistic.I2 in values:
            values[Statistic.I2][offset] = i_squared(data)
        if Statistic.J2 in values:
            result = j2_estimate(data, config.j2_tol, config.j2_max_iter)
            values[Statistic.J2][offset] = result.j2
            nonconverged[offset] = not result.converged

    return _Chunk(cell.index, start, values, hits, nonconverged, skipped)


def _summarize(values: np.ndarray) -> StatisticSummary:
    used = values[~np.isnan(values)]
    if used.size == 0:
        return StatisticSummary(mean=math.nan, mc_se=None, count=0)
    mc_se = float(used.std(ddof=1) / math.sqrt(used.size)) if used.size > 1 else None
    return StatisticSummary(mean=float(used.mean()), mc_se=mc_se, count=int(used.size))


def _aggregate(config: SimulationConfig, cell: SimulationCell, chunks: Sequence[_Chunk]) -> CellResult:
    icc_ht = None
    if len(set(cell.sizes)) == 1:
        icc_ht = cell.tau2 / (cell.tau2 + config.sigma2 / cell.sizes[0])

    if not chunks:
        return CellResult(cell=cell, icc_ma_truth=cell.truth.icc_ma, icc_ht_truth=icc_ht)

    ordered = sorted(chunks, key=lambda c: c.start)
    skipped = np.concatenate([c.skipped for c in ordered])
    n_skipped = int(skipped.sum())
    if n_skipped:
        logger.warning(
            "cell %d (tau2=%g, k=%d, n=%d): skipped %d degenerate replication(s)",
            cell.index, cell.tau2, cell.k, cell.n, n_skipped,
        )

    summaries = {
        s: _summarize(np.concatenate([c.values[s] for c in ordered])) for s in config.reported_statistics
    }

    coverage = None
    if Statistic.IQ in summaries and config.coverage:
        hits = np.concatenate([c.hits for c in ordered])
        hits = hits[~np.isnan(hits)]
        coverage = float(hits.mean()) if hits.size else None

    nonconv_rate = None
    if Statistic.J2 in summaries:
        nonconverged = np.concatenate([c.nonconverged for c in ordered])[~skipped]
        nonconv_rate = float(nonconverged.mean()) if nonconverged.size else None

    return CellResult(
        cell=cell,
        icc_ma_truth=cell.truth.icc_ma,
        icc_ht_truth=icc_ht,
        summaries=summaries,
        coverage=coverage,
        j2_nonconvergence_rate=nonconv_rate,
        skipped=n_skipped,
        replications=config.replications,
    )


def run_cell(config: SimulationConfig, cell: SimulationCell) -> CellResult:
    if not config.reported_statistics:
        return _aggregate(config, cell, [])
    return _aggregate(config, cell, [_run_chunk(config, cell, 0, config.replications)])


def _tasks(config: SimulationConfig, cells: Sequence[SimulationCell]) -> list[tuple[SimulationCell, int, int]]:
    if not config.reported_statistics:
        return []
    m = config.replications
    return [(cell, start, min(start + CHUNK_SIZE, m)) for cell in cells for start in range(0, m, CHUNK_SIZE)]


def run_experiment(
    config: SimulationConfig,
    *,
    workers: int = 1,
    progress: Callable[[int], None] | None = None,
) -> SimulationResult:
    cells = config.cells()
    tasks = _tasks(config, cells)
    chunks: dict[int, list[_Chunk]] = {cell.index: [] for cell in cells}

    if workers <= 1 or len(tasks) <= 1:
        for cell, start, stop in tasks:
            chunks[cell.index].append(_run_chunk(config, cell, start, stop))
            if progress is not None:
                progress(stop - start)
    else:
        logger.info("running %d chunk(s) on %d worker process(es)", len(tasks), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_chunk, config, cell, start, stop): stop - start for cell, start, stop in tasks}
            for future in as_completed(futures):
                chunk = future.result()
                chunks[chunk.cell_index].append(chunk)
                if progress is not None:
                    progress(futures[future])

    results = tuple(_aggregate(config, cell, chunks[cell.index]) for cell in cells)
    return SimulationResult(config=config, cells=results)
