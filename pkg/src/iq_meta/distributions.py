from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import logging
import math

import numpy as np
from scipy import optimize, special

from .errors import NumericalError, ValidationError


logger = logging.getLogger(__name__)

CDF_TOLERANCE = 1e-12
MAX_BRACKET_STEPS = 200


@dataclass(frozen=True)
class FQuantileRequest:
    prob: float
    df1: float
    df2: float

    def __post_init__(self) -> None:
        if not 0.0 < self.prob < 1.0:
            raise ValidationError(f"probability must lie in (0, 1), got {self.prob}")
        if not (self.df1 > 0 and math.isfinite(self.df1)):
            raise ValidationError(f"numerator degrees of freedom must be > 0, got {self.df1}")
        if not (self.df2 > 0 and math.isfinite(self.df2)):
            raise ValidationError(f"denominator degrees of freedom must be > 0, got {self.df2}")


def f_cdf(x: float, df1: float, df2: float) -> float:
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return float(special.betainc(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2)))


def _from_beta(b: float, df1: float, df2: float) -> float:
    if b >= 1.0:
        return math.inf
    return (df2 / df1) * b / (1.0 - b)


def _bracket(req: FQuantileRequest, guess: float) -> tuple[float, float]:
    lo = hi = guess if math.isfinite(guess) and guess > 0 else 1.0
    for _ in range(MAX_BRACKET_STEPS):
        if f_cdf(lo, req.df1, req.df2) <= req.prob:
            break
        lo /= 2.0
    else:
        raise NumericalError(f"could not bracket F quantile from below for {req}")
    for _ in range(MAX_BRACKET_STEPS):
        if f_cdf(hi, req.df1, req.df2) >= req.prob:
            break
        hi *= 2.0
    else:
        raise NumericalError(f"could not bracket F quantile from above for {req}")
    return lo, hi


@lru_cache(maxsize=4096)
def f_quantile(req: FQuantileRequest) -> float:
    b = float(special.betaincinv(req.df1 / 2.0, req.df2 / 2.0, req.prob))
    x = _from_beta(b, req.df1, req.df2)
    if math.isfinite(x) and x > 0 and abs(f_cdf(x, req.df1, req.df2) - req.prob) <= CDF_TOLERANCE:
        return x

    logger.debug("refining F quantile for %s from %r", req, x)
    lo, hi = _bracket(req, x)
    if lo == hi:
        return lo
    try:
        x = optimize.brentq(
            lambda t: f_cdf(t, req.df1, req.df2) - req.prob,
            lo,
            hi,
            xtol=1e-300,
            rtol=4 * np.finfo(float).eps,
            maxiter=500,
        )
    except (RuntimeError, ValueError) as e:
        raise NumericalError(f"F quantile root search failed for {req}: {e}") from e

    if abs(f_cdf(x, req.df1, req.df2) - req.prob) > CDF_TOLERANCE:
        raise NumericalError(f"F quantile for {req} did not reach CDF tolerance {CDF_TOLERANCE}")
    return float(x)


class RandomStream:
    __slots__ = ("_generator", "key")

    def __init__(self, seed: int, *key: int) -> None:
        seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=tuple(key))
        self._generator = np.random.Generator(np.random.Philox(seq))
        self.key = (int(seed), *key)

    @classmethod
    def for_replication(cls, seed: int, cell: int, replication: int) -> RandomStream:
        return cls(seed, cell, replication)

    def standard_normal(self, size: int | None = None) -> np.ndarray | float:
        return self._generator.standard_normal(size)

    def __repr__(self) -> str:
        return f"RandomStream{self.key}"


def _check_variance(variance: float) -> float:
    if not (variance >= 0 and math.isfinite(variance)):
        raise ValidationError(f"variance must be >= 0, got {variance}")
    return math.sqrt(variance)


def sample_normal(mean: float, variance: float, stream: RandomStream) -> float:
    # the stream always advances, also for variance == 0
    sd = _check_variance(variance)
    z = float(stream.standard_normal())
    return mean if sd == 0.0 else mean + sd * z


def sample_normals(mean: float, variance: float, size: int, stream: RandomStream) -> np.ndarray:
    sd = _check_variance(variance)
    z = stream.standard_normal(size)
    if sd == 0.0:
        return np.full(size, float(mean))
    return mean + sd * z
