from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np

from .distributions import FQuantileRequest, f_quantile
from .errors import ValidationError
from .model import HeterogeneityReport, J2Result, MetaDataset, RawDataset, validate_meta, validate_raw


logger = logging.getLogger(__name__)

DEFAULT_J2_TOL = 1e-5
DEFAULT_J2_MAX_ITER = 10_000


@dataclass(frozen=True)
class MeasureInputs:
    between_var: float
    error_var: float

    def __post_init__(self) -> None:
        if not self.between_var >= 0:
            raise ValidationError(f"between-study variance must be >= 0, got {self.between_var}")
        if not self.error_var > 0:
            raise ValidationError(f"error variance must be > 0, got {self.error_var}")


@dataclass(frozen=True)
class QStatistic:
    q: float
    sum_w: float
    sum_wy: float

    @property
    def weighted_mean(self) -> float:
        return self.sum_wy / self.sum_w


@dataclass(frozen=True)
class AnovaTable:
    ssb: float
    ssw: float
    msb: float
    msw: float
    nbar: float
    grand_mean: float

    @property
    def sst(self) -> float:
        return self.ssb + self.ssw

    @property
    def degenerate(self) -> bool:
        return self.msw == 0.0


def icc_ma_true(inputs: MeasureInputs) -> float:
    return inputs.between_var / (inputs.between_var + inputs.error_var)


def icc_ht_true(inputs: MeasureInputs) -> float:
    return inputs.between_var / (inputs.between_var + inputs.error_var)


def cochran_q_details(dataset: MetaDataset) -> QStatistic:
    w = 1.0 / dataset.variances
    y = dataset.effects
    sum_w = float(w.sum())
    sum_wy = float((w * y).sum())
    q = float((w * (y - sum_wy / sum_w) ** 2).sum())
    return QStatistic(q=q, sum_w=sum_w, sum_wy=sum_wy)


def cochran_q(dataset: MetaDataset) -> float:
    return cochran_q_details(dataset).q


def _i_squared_from_q(q: float, k: int) -> float:
    # Q == 0 takes the truncation branch instead of dividing by zero
    if q <= 0.0:
        return 0.0
    return max((q - (k - 1)) / q, 0.0)


def i_squared(dataset: MetaDataset) -> float:
    return _i_squared_from_q(cochran_q(dataset), dataset.k)


def _nbar(sizes: np.ndarray) -> float:
    n = sizes.astype(float)
    total = n.sum()
    return float((total - (n * n).sum() / total) / (len(n) - 1))


def adjusted_sample_size(dataset: MetaDataset) -> float:
    return _nbar(dataset.sizes)


def mean_squares(dataset: MetaDataset) -> tuple[float, float]:
    n = dataset.sizes.astype(float)
    y = dataset.effects
    total = n.sum()
    ybar = (n * y).sum() / total
    msb = float((n * (y - ybar) ** 2).sum() / (dataset.k - 1))
    msw = float((n * (n - 1.0) * dataset.variances).sum() / (total - dataset.k))
    return msb, msw


def _iq(msb: float, msw: float, n: float) -> float:
    denom = msb + (n - 1.0) * msw
    if denom <= 0.0:
        return 0.0
    return max((msb - msw) / denom, 0.0)


def _ci_limit(f_ratio: float, f_crit: float, n: float) -> float:
    g = f_ratio / f_crit
    return max((g - 1.0) / (n + g - 1.0), 0.0)


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _interval(msb: float, msw: float, n: float, df1: float, df2: float, alpha: float) -> tuple[float, float]:
    f_ratio = msb / msw
    f_hi = f_quantile(FQuantileRequest(1.0 - alpha / 2.0, df1, df2))
    f_lo = f_quantile(FQuantileRequest(alpha / 2.0, df1, df2))
    return _ci_limit(f_ratio, f_hi, n), _ci_limit(f_ratio, f_lo, n)


def iq_point(dataset: MetaDataset) -> float:
    msb, msw = mean_squares(dataset)
    return _iq(msb, msw, adjusted_sample_size(dataset))


def iq_ci(dataset: MetaDataset, alpha: float = 0.05) -> tuple[float, float]:
    _check_alpha(alpha)
    msb, msw = mean_squares(dataset)
    df2 = float(dataset.sizes.sum() - dataset.k)
    return _interval(msb, msw, adjusted_sample_size(dataset), dataset.k - 1.0, df2, alpha)


def iq_balanced(dataset: MetaDataset, alpha: float = 0.05) -> tuple[float, tuple[float, float]]:
    _check_alpha(alpha)
    if not dataset.is_balanced:
        raise ValidationError("equal-size formulas need all study sizes equal")
    k = dataset.k
    n = float(dataset.sizes[0])
    y = dataset.effects
    msb = float(n * ((y - y.mean()) ** 2).sum() / (k - 1))
    msw = float(n * dataset.variances.sum() / k)
    ci = _interval(msb, msw, n, k - 1.0, k * n - k, alpha)
    return _iq(msb, msw, n), ci


def j2_estimate(
    dataset: MetaDataset,
    tol: float = DEFAULT_J2_TOL,
    max_iter: int = DEFAULT_J2_MAX_ITER,
) -> J2Result:
    """Fixed-point fit of (mu, tau², sigma²); only effects and sizes enter.

    Updates run in sequence (mu, sigma², tau²). Stops when every change is below
    `tol`, on a non-finite update (previous iterate kept) or after `max_iter`.
    """
    if not tol > 0:
        raise ValidationError(f"tolerance must be > 0, got {tol}")
    if max_iter < 1:
        raise ValidationError(f"max_iter must be >= 1, got {max_iter}")

    y = dataset.effects
    w = 1.0 / dataset.sizes.astype(float)

    mu = float((y / w).sum() / (1.0 / w).sum())
    sigma2 = float(((y - mu) ** 2 / w).mean())
    tau2 = 0.0

    converged = False
    aborted = False
    iterations = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while iterations < max_iter:
            mu_old, sigma2_old, tau2_old = mu, sigma2, tau2

            v = tau2 + sigma2 * w
            mu = float((y / v).sum() / (1.0 / v).sum())
            sigma2 = float((((y - mu) ** 2 * w - w * tau2) / v**2).sum() / (w**2 / v**2).sum())
            v = tau2 + sigma2 * w
            tau2 = float((((y - mu) ** 2 - sigma2 * w) / v**2).sum() / (1.0 / v**2).sum())
            iterations += 1

            if not (math.isfinite(mu) and math.isfinite(sigma2) and math.isfinite(tau2)):
                mu, sigma2, tau2 = mu_old, sigma2_old, tau2_old
                aborted = True
                break
            if abs(mu - mu_old) <= tol and abs(sigma2 - sigma2_old) <= tol and abs(tau2 - tau2_old) <= tol:
                converged = True
                break

    total = tau2 + sigma2
    j2_raw = tau2 / total if total != 0.0 else math.nan
    j2 = max(j2_raw, 0.0) if math.isfinite(j2_raw) else 0.0
    if not math.isfinite(j2_raw):
        converged = False

    balanced = dataset.is_balanced
    if aborted:
        logger.debug("J2 iteration aborted on a non-finite update after %d steps", iterations)
    elif not converged:
        logger.debug("J2 iteration stopped after %d steps without converging", iterations)
    if balanced:
        logger.info("J2 on equal study sizes: the variance estimates may not be unique")

    return J2Result(
        mu_hat=mu,
        tau2_hat=tau2,
        sigma2_hat=sigma2,
        j2_raw=j2_raw,
        j2=min(j2, 1.0),
        iterations=iterations,
        converged=converged,
        aborted_nan=aborted,
        identifiability_warning=balanced,
    )


def summarize_raw(raw: RawDataset) -> MetaDataset:
    validate_raw(raw)
    effects = np.empty(raw.k)
    variances = np.empty(raw.k)
    for i, group in enumerate(raw.groups):
        n = len(group)
        mean = group.mean()
        effects[i] = mean
        variances[i] = ((group - mean) ** 2).sum() / (n * (n - 1))
    return MetaDataset.from_arrays(effects, raw.sizes, variances)


def anova_table(raw: RawDataset) -> AnovaTable:
    validate_raw(raw)
    sizes = raw.sizes.astype(float)
    total = sizes.sum()
    means = np.array([g.mean() for g in raw.groups])
    grand = float(sum(g.sum() for g in raw.groups) / total)
    ssb = float((sizes * (means - grand) ** 2).sum())
    ssw = float(sum(((g - m) ** 2).sum() for g, m in zip(raw.groups, means)))
    return AnovaTable(
        ssb=ssb,
        ssw=ssw,
        msb=ssb / (raw.k - 1),
        msw=ssw / (total - raw.k),
        nbar=_nbar(raw.sizes),
        grand_mean=grand,
    )


def anova_icc_raw(raw: RawDataset) -> float:
    table = anova_table(raw)
    if table.degenerate:
        logger.warning("raw data have zero within-group variance; ICC set to its limiting value")
        return 1.0 if table.msb > 0.0 else 0.0
    return _iq(table.msb, table.msw, table.nbar)


def heterogeneity_report(
    dataset: MetaDataset,
    *,
    alpha: float = 0.05,
    with_j2: bool = True,
    j2_tol: float = DEFAULT_J2_TOL,
    j2_max_iter: int = DEFAULT_J2_MAX_ITER,
) -> HeterogeneityReport:
    validate_meta(dataset)
    _check_alpha(alpha)

    q = cochran_q_details(dataset)
    msb, msw = mean_squares(dataset)
    nbar = adjusted_sample_size(dataset)
    sizes = dataset.sizes.astype(float)

    warnings: list[str] = []
    if dataset.k == 2:
        warnings.append("only 2 studies: the interval for ICC_MA is very wide")

    j2 = j2_estimate(dataset, j2_tol, j2_max_iter) if with_j2 else None
    if j2 is not None:
        if j2.identifiability_warning:
            warnings.append("equal study sizes: J² variance estimates may not be unique")
        if j2.aborted_nan:
            warnings.append(f"J² iteration hit a non-finite update after {j2.iterations} steps")
        elif not j2.converged:
            warnings.append(f"J² iteration did not converge in {j2.iterations} steps")

    return HeterogeneityReport(
        iq_point=_iq(msb, msw, nbar),
        iq_ci=iq_ci(dataset, alpha),
        i2_point=_i_squared_from_q(q.q, dataset.k),
        q_stat=q.q,
        msb=msb,
        msw=msw,
        nbar=nbar,
        f_ratio=msb / msw,
        alpha=alpha,
        j2=j2,
        k=dataset.k,
        total_size=int(dataset.sizes.sum()),
        size_weighted_mean=float((sizes * dataset.effects).sum() / sizes.sum()),
        weighted_mean=q.weighted_mean,
        sum_w=q.sum_w,
        sum_wy=q.sum_wy,
        warnings=tuple(warnings),
    )
