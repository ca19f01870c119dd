from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


class Statistic(str, Enum):
    IQ = "iq"
    I2 = "i2"
    J2 = "j2"

    @classmethod
    def parse_list(cls, text: str) -> frozenset[Statistic]:
        tokens = [t.strip().lower() for t in text.split(",") if t.strip()]
        try:
            return frozenset(cls(t) for t in tokens)
        except ValueError as e:
            raise ValidationError(f"unknown statistic in {text!r} (expected iq, i2, j2)") from e


ALL_STATISTICS = frozenset(Statistic)


def _readonly(values: Iterable[float] | np.ndarray, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StudySummary:
    """One study as reported: effect y_i, size n_i and squared standard error."""

    effect: float
    size: int
    var_effect: float


@dataclass(frozen=True)
class MetaDataset:
    studies: tuple[StudySummary, ...]
    labels: tuple[str, ...] | None = None

    @classmethod
    def from_arrays(
        cls,
        effects: Sequence[float] | np.ndarray,
        sizes: Sequence[int] | np.ndarray,
        variances: Sequence[float] | np.ndarray,
        *,
        labels: Sequence[str] | None = None,
    ) -> MetaDataset:
        if not (len(effects) == len(sizes) == len(variances)):
            raise ValidationError("effects, sizes and variances differ in length")
        studies = tuple(
            StudySummary(effect=float(y), size=int(n), var_effect=float(v))
            for y, n, v in zip(effects, sizes, variances)
        )
        return cls(studies=studies, labels=tuple(labels) if labels is not None else None)

    @property
    def k(self) -> int:
        return len(self.studies)

    @cached_property
    def effects(self) -> np.ndarray:
        return _readonly([s.effect for s in self.studies])

    @cached_property
    def sizes(self) -> np.ndarray:
        return _readonly([s.size for s in self.studies], dtype=np.int64)

    @cached_property
    def variances(self) -> np.ndarray:
        return _readonly([s.var_effect for s in self.studies])

    @property
    def is_balanced(self) -> bool:
        return bool(np.all(self.sizes == self.sizes[0]))

    def label(self, index: int) -> str:
        if self.labels is None:
            return f"study {index + 1}"
        return self.labels[index]

    def rescaled(self, shift: float, scale: float) -> MetaDataset:
        if not scale > 0:
            raise ValidationError(f"scale must be positive, got {scale}")
        return MetaDataset.from_arrays(
            shift + scale * self.effects,
            self.sizes,
            scale * scale * self.variances,
            labels=self.labels,
        )


@dataclass(frozen=True, eq=False)
class RawDataset:
    groups: tuple[np.ndarray, ...]

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[float]]) -> RawDataset:
        return cls(groups=tuple(_readonly(g if isinstance(g, np.ndarray) else list(g)) for g in groups))

    @property
    def k(self) -> int:
        return len(self.groups)

    @cached_property
    def sizes(self) -> np.ndarray:
        return _readonly([len(g) for g in self.groups], dtype=np.int64)


@dataclass(frozen=True)
class PopulationTruth:
    grand_mean: float
    between_var: float
    error_var: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.grand_mean):
            raise ValidationError(f"grand mean must be finite, got {self.grand_mean}")
        if not (math.isfinite(self.between_var) and self.between_var >= 0):
            raise ValidationError(f"between-study variance must be >= 0, got {self.between_var}")
        if not (math.isfinite(self.error_var) and self.error_var > 0):
            raise ValidationError(f"error variance must be > 0, got {self.error_var}")

    @property
    def icc_ma(self) -> float:
        return self.between_var / (self.between_var + self.error_var)


@dataclass(frozen=True)
class J2Result:
    mu_hat: float
    tau2_hat: float
    sigma2_hat: float
    # nan when tau2 + sigma2 == 0
    j2_raw: float
    j2: float
    iterations: int
    converged: bool
    aborted_nan: bool
    identifiability_warning: bool = False

    @property
    def defined(self) -> bool:
        return math.isfinite(self.j2_raw)


@dataclass(frozen=True)
class HeterogeneityReport:
    iq_point: float
    iq_ci: tuple[float, float] | None
    i2_point: float
    q_stat: float
    msb: float
    msw: float
    nbar: float
    f_ratio: float
    alpha: float
    j2: J2Result | None = None
    k: int = 0
    total_size: int = 0
    size_weighted_mean: float = math.nan
    weighted_mean: float = math.nan
    sum_w: float = math.nan
    sum_wy: float = math.nan
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.iq_ci is not None and self.iq_ci[0] > self.iq_ci[1]:
            raise ValidationError(f"interval limits out of order: {self.iq_ci}")


def validate_meta(dataset: MetaDataset) -> MetaDataset:
    if dataset.k < 2:
        raise ValidationError(f"k < 2: a meta-analysis needs at least 2 studies, got {dataset.k}")

    if dataset.labels is not None:
        if len(dataset.labels) != dataset.k:
            raise ValidationError(f"{len(dataset.labels)} labels for {dataset.k} studies")
        seen: set[str] = set()
        for idx, label in enumerate(dataset.labels):
            if label in seen:
                raise ValidationError(f"duplicate label {label!r}", index=idx)
            seen.add(label)

    for idx, study in enumerate(dataset.studies):
        if not math.isfinite(study.effect):
            raise ValidationError(f"effect must be finite, got {study.effect}", index=idx)
        if study.size < 2:
            raise ValidationError(f"size must be >= 2, got {study.size}", index=idx)
        if not (math.isfinite(study.var_effect) and study.var_effect > 0):
            raise ValidationError(f"var_effect must be > 0, got {study.var_effect}", index=idx)
    return dataset


def validate_raw(raw: RawDataset) -> RawDataset:
    if raw.k < 2:
        raise ValidationError(f"k < 2: raw data needs at least 2 groups, got {raw.k}")
    for idx, group in enumerate(raw.groups):
        if len(group) < 2:
            raise ValidationError(f"group needs >= 2 observations, got {len(group)}", index=idx)
        if not np.all(np.isfinite(group)):
            raise ValidationError("group contains non-finite observations", index=idx)
    return raw
