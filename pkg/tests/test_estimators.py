import math

import numpy as np
import pytest
from scipy import stats

from iq_meta.errors import ValidationError
from iq_meta.estimators import (
    DEFAULT_J2_MAX_ITER,
    MeasureInputs,
    adjusted_sample_size,
    anova_icc_raw,
    anova_table,
    cochran_q,
    cochran_q_details,
    heterogeneity_report,
    i_squared,
    icc_ht_true,
    icc_ma_true,
    iq_balanced,
    iq_ci,
    iq_point,
    j2_estimate,
    mean_squares,
    summarize_raw,
)
from iq_meta.model import MetaDataset, RawDataset


@pytest.mark.parametrize(
    ("between", "error", "expected"),
    [(6.0, 25.0, 0.194), (6.0, 2.5, 0.706), (6.0, 0.25, 0.96)],
)
def test_icc_ht_grows_with_sample_size(between, error, expected):
    assert icc_ht_true(MeasureInputs(between, error)) == pytest.approx(expected, abs=5e-4)


@pytest.mark.parametrize(("between", "error", "expected"), [(6.0, 100.0, 0.0566), (60.0, 100.0, 0.375)])
def test_icc_ma(between, error, expected):
    assert icc_ma_true(MeasureInputs(between, error)) == pytest.approx(expected, abs=5e-5)


def test_icc_zero_between_variance():
    assert icc_ma_true(MeasureInputs(0.0, 1.0)) == 0.0
    with pytest.raises(ValidationError):
        MeasureInputs(1.0, 0.0)
    with pytest.raises(ValidationError):
        MeasureInputs(-1.0, 1.0)


def test_stroke_cochran_q(stroke):
    q = cochran_q_details(stroke)
    assert q.q == pytest.approx(106.26, abs=0.02)
    assert q.sum_w == pytest.approx(7.68, abs=0.01)
    assert q.sum_wy == pytest.approx(-43.39, abs=0.01)
    assert i_squared(stroke) == pytest.approx(0.92, abs=0.005)


def test_stroke_mean_squares(stroke):
    msb, msw = mean_squares(stroke)
    assert msb == pytest.approx(189.83, abs=0.05)
    assert msw == pytest.approx(25.81, abs=0.02)
    assert adjusted_sample_size(stroke) == pytest.approx(8.97, abs=0.005)
    ybar = float((stroke.sizes * stroke.effects).sum() / stroke.sizes.sum())
    assert ybar == pytest.approx(-7.55, abs=0.01)


def test_stroke_iq(stroke):
    point = iq_point(stroke)
    lower, upper = iq_ci(stroke)
    assert point == pytest.approx(0.41, abs=0.005)
    assert 0.0 <= lower <= point <= upper <= 1.0


def test_stroke_j2_at_default_cap(stroke):
    result = j2_estimate(stroke)
    # the iterates drift slowly: about 650k steps are needed to meet tol=1e-5
    assert result.converged is False
    assert result.iterations == DEFAULT_J2_MAX_ITER
    assert not result.aborted_nan
    assert not result.identifiability_warning
    assert result.j2_raw == pytest.approx(-0.25, abs=0.02)
    assert result.j2 == 0.0


@pytest.mark.slow
def test_stroke_j2_converges_with_a_larger_cap(stroke):
    result = j2_estimate(stroke, max_iter=1_000_000)
    assert result.converged
    assert not result.aborted_nan
    assert result.iterations < 1_000_000
    assert result.j2_raw == pytest.approx(-0.25, abs=0.02)
    assert result.j2 == 0.0


def test_q_two_studies():
    data = MetaDataset.from_arrays([0.0, 1.0], [5, 5], [1.0, 1.0])
    assert cochran_q(data) == pytest.approx(0.5)
    assert i_squared(data) == 0.0


def test_q_three_studies():
    third = 1.0 / 3.0
    data = MetaDataset.from_arrays([-1.0, 0.0, 1.0], [5, 5, 5], [third, third, third])
    assert cochran_q(data) == pytest.approx(6.0)
    assert i_squared(data) == pytest.approx(2.0 / 3.0)


def test_adjusted_sample_size():
    data = MetaDataset.from_arrays([0.0, 1.0, 2.0], [10, 20, 30], [1.0, 1.0, 1.0])
    assert adjusted_sample_size(data) == pytest.approx(18.3333, abs=1e-4)
    balanced = MetaDataset.from_arrays([0.0, 1.0, 2.0], [12, 12, 12], [1.0, 1.0, 1.0])
    assert adjusted_sample_size(balanced) == pytest.approx(12.0)


def test_balanced_mean_squares():
    data = MetaDataset.from_arrays([0.0, 2.0], [2, 2], [1.0, 1.0])
    assert mean_squares(data) == pytest.approx((4.0, 2.0))
    assert iq_point(data) == pytest.approx(1.0 / 3.0)


def test_equal_effects_truncate_to_zero():
    data = MetaDataset.from_arrays([3.0, 3.0, 3.0], [10, 20, 30], [1.0, 2.0, 0.5])
    assert iq_point(data) == 0.0
    assert i_squared(data) == 0.0
    assert iq_ci(data) == (0.0, 0.0)


def test_iq_ci_matches_scipy_quantiles(stroke):
    msb, msw = mean_squares(stroke)
    nbar = adjusted_sample_size(stroke)
    df1, df2 = stroke.k - 1, int(stroke.sizes.sum()) - stroke.k
    f_ratio = msb / msw

    def limit(q):
        g = f_ratio / stats.f.ppf(q, df1, df2)
        return max((g - 1) / (nbar + g - 1), 0.0)

    lower, upper = iq_ci(stroke, alpha=0.05)
    assert lower == pytest.approx(limit(0.975), rel=1e-9)
    assert upper == pytest.approx(limit(0.025), rel=1e-9)


def test_iq_ci_narrows_with_alpha(stroke):
    wide = iq_ci(stroke, alpha=0.01)
    narrow = iq_ci(stroke, alpha=0.2)
    assert wide[0] <= narrow[0] <= narrow[1] <= wide[1]


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_iq_ci_rejects_bad_alpha(stroke, alpha):
    with pytest.raises(ValidationError):
        iq_ci(stroke, alpha)


def test_balanced_formulas_agree_with_general_ones():
    data = MetaDataset.from_arrays([1.0, 4.0, -2.0, 0.5], [15, 15, 15, 15], [2.0, 1.5, 3.0, 2.5])
    point, (lower, upper) = iq_balanced(data, alpha=0.1)
    assert point == pytest.approx(iq_point(data), abs=1e-12)
    general = iq_ci(data, alpha=0.1)
    assert lower == pytest.approx(general[0], abs=1e-12)
    assert upper == pytest.approx(general[1], abs=1e-12)


def test_balanced_formulas_need_equal_sizes(stroke):
    with pytest.raises(ValidationError):
        iq_balanced(stroke)


def test_j2_equal_effects():
    data = MetaDataset.from_arrays([2.0, 2.0, 2.0], [5, 10, 20], [1.0, 1.0, 1.0])
    result = j2_estimate(data)
    assert result.j2 == 0.0
    assert not result.converged


def test_j2_balanced_sets_identifiability_warning():
    data = MetaDataset.from_arrays([1.0, 3.0, -2.0], [10, 10, 10], [1.0, 1.0, 1.0])
    result = j2_estimate(data)
    assert result.identifiability_warning
    assert 0.0 <= result.j2 <= 1.0


def test_j2_iteration_cap(stroke):
    result = j2_estimate(stroke, max_iter=1)
    assert result.iterations == 1
    assert not result.converged
    assert not result.aborted_nan


def test_j2_ignores_reported_variances(stroke):
    other = MetaDataset.from_arrays(stroke.effects, stroke.sizes, np.ones(stroke.k))
    assert j2_estimate(other) == j2_estimate(stroke)


def test_j2_rejects_bad_controls(stroke):
    with pytest.raises(ValidationError):
        j2_estimate(stroke, tol=0.0)
    with pytest.raises(ValidationError):
        j2_estimate(stroke, max_iter=0)


def test_summarize_raw():
    raw = RawDataset.from_groups([[1.0, 2.0, 3.0], [4.0, 6.0]])
    data = summarize_raw(raw)
    assert data.effects[0] == pytest.approx(2.0)
    assert data.variances[0] == pytest.approx(1.0 / 3.0)
    assert data.effects[1] == pytest.approx(5.0)
    assert data.variances[1] == pytest.approx(1.0)
    assert list(data.sizes) == [3, 2]


def test_summarize_raw_rejects_tiny_groups():
    with pytest.raises(ValidationError):
        summarize_raw(RawDataset.from_groups([[1.0, 2.0], [3.0]]))


def test_anova_table():
    raw = RawDataset.from_groups([[1.0, 2.0, 3.0], [4.0, 6.0]])
    table = anova_table(raw)
    assert table.grand_mean == pytest.approx(3.2)
    assert table.ssw == pytest.approx(2.0 + 2.0)
    assert table.sst == pytest.approx(sum((x - 3.2) ** 2 for x in (1, 2, 3, 4, 6)))
    assert table.msw == pytest.approx(4.0 / 3.0)
    assert not table.degenerate


def test_anova_icc_degenerate_groups():
    assert anova_icc_raw(RawDataset.from_groups([[1.0, 1.0], [2.0, 2.0]])) == 1.0
    assert anova_icc_raw(RawDataset.from_groups([[1.0, 1.0], [1.0, 1.0]])) == 0.0


def test_report_collects_everything(stroke):
    report = heterogeneity_report(stroke)
    assert report.k == 10
    assert report.total_size == 92
    assert report.q_stat == pytest.approx(106.26, abs=0.02)
    assert report.f_ratio == pytest.approx(report.msb / report.msw)
    assert report.weighted_mean == pytest.approx(-43.39 / 7.68, abs=0.01)
    assert report.j2 is not None and report.j2.j2 == 0.0
    assert report.warnings == (f"J² iteration did not converge in {DEFAULT_J2_MAX_ITER} steps",)


def test_report_warnings():
    pair = MetaDataset.from_arrays([0.0, 5.0], [10, 10], [1.0, 1.0])
    report = heterogeneity_report(pair)
    assert any("only 2 studies" in w for w in report.warnings)
    assert any("equal study sizes" in w for w in report.warnings)

    without_j2 = heterogeneity_report(pair, with_j2=False)
    assert without_j2.j2 is None
    assert not any("equal study sizes" in w for w in without_j2.warnings)


def test_report_validates_input():
    with pytest.raises(ValidationError):
        heterogeneity_report(MetaDataset.from_arrays([0.0, 1.0], [5, 5], [1.0, 0.0]))
    assert math.isfinite(heterogeneity_report(MetaDataset.from_arrays([0.0, 1.0], [5, 6], [1.0, 1.0])).iq_point)
