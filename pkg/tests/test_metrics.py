"""Selection rates, error metrics and coverage summaries."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsets.errors import MetricError
from sparsets.metrics import SelectionResult, coverage_and_length, fsr, msfe, mspe, nsr, selection_summary
from sparsets.uq import IntervalReport

TRUE = {1, 2, 3, 7}


def test_fsr_examples():
    assert fsr(SelectionResult(TRUE, [TRUE, TRUE])) == 0.0
    assert fsr(SelectionResult(TRUE, [{1, 2, 3, 7, 9}])) == pytest.approx(0.2)
    assert fsr(SelectionResult(TRUE, [{4, 5}, {6}])) == 1.0
    with pytest.raises(MetricError):
        fsr(SelectionResult(TRUE, [set(), set()]))


def test_nsr_examples():
    assert nsr(SelectionResult(TRUE, [TRUE | {9}])) == 0.0
    assert nsr(SelectionResult(TRUE, [set(), set()])) == 1.0
    assert nsr(SelectionResult({1, 2}, [{1}, {1, 2}])) == pytest.approx(0.25)
    with pytest.raises(MetricError):
        nsr(SelectionResult(set(), [{1}]))


def test_selection_outside_window_rejected():
    with pytest.raises(MetricError):
        SelectionResult(TRUE, [{16}], window=15)


def test_error_metrics():
    assert mspe([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mspe([1.0, -1.0], [0.0, 0.0]) == 1.0
    assert msfe([2.0, -2.0], [0.0, 0.0]) == 4.0 * msfe([1.0, -1.0], [0.0, 0.0])
    with pytest.raises(MetricError):
        mspe([], [])
    with pytest.raises(MetricError):
        mspe([1.0], [1.0, 2.0])


def _report(center, half, alpha=0.1):
    c = np.asarray(center, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    h = np.broadcast_to(np.asarray(half, dtype=float), c.shape)
    return IntervalReport(c, c - h, c + h, alpha, 1.0, np.zeros(c.shape))


def test_coverage_examples():
    c = np.linspace(-1, 1, 10)
    assert coverage_and_length(_report(c, 0.5), c)["coverage"] == 1.0
    assert coverage_and_length(_report(c, 0.0), c + 0.1)["coverage"] == 0.0
    # hand-built ten-point case: boundary counts as covered
    t = c + np.array([0.0, 0.5, 0.51, -0.5, -0.6, 0.2, 0.0, 1.0, -0.49, 0.3])
    s = coverage_and_length(_report(c, 0.5), t)
    assert s["coverage"] == pytest.approx(7 / 10)
    assert s["mean_width"] == pytest.approx(1.0)
    assert s["median_width"] == pytest.approx(1.0) and s["iqr_width"] == pytest.approx(0.0)


def test_joint_coverage_below_marginals():
    rng = np.random.default_rng(1)
    c = np.zeros((200, 3))
    t = rng.normal(size=(200, 3))
    s = coverage_and_length(_report(c, 1.5), t)
    assert s["coverage"] <= min(s["marginal_coverage"])
    inside = np.all(np.abs(t) <= 1.5, axis=1)
    assert s["coverage"] == inside.mean()


def test_summary_fields_and_ar_order():
    res = SelectionResult(TRUE, [{1, 2, 3, 7}, {1, 2, 3, 7, 8}], window=15, hidden_links=[0, 0])
    s = selection_summary(res, [1.0, 1.1], [0.9, 1.0])
    assert s["fsr"] == pytest.approx(fsr(res)) and s["nsr"] == nsr(res)
    assert s["ar_order_mean"] == 7.5 and s["hidden_links_mean"] == 0
    assert s["mspe_mean"] == pytest.approx(1.05)
    short = selection_summary(SelectionResult(TRUE, [{1}], window=1, hidden_links=[40]))
    assert short["ar_order_mean"] is None and short["hidden_links_mean"] == 40
    assert set(s) == {"fsr", "nsr", "ar_order_mean", "ar_order_sd", "hidden_links_mean", "hidden_links_sd",
                      "mspe_mean", "mspe_sd", "msfe_mean", "msfe_sd"}


lag_sets = st.lists(st.sets(st.integers(1, 15), max_size=8), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(sel=lag_sets, true=st.sets(st.integers(1, 15), min_size=1, max_size=6))
def test_rates_bounded_and_exact_iff_equal(sel, true):
    res = SelectionResult(true, sel, window=15)
    n = nsr(res)
    assert 0.0 <= n <= 1.0
    try:
        f = fsr(res)
    except MetricError:
        assert all(not s for s in sel)
        return
    assert 0.0 <= f <= 1.0
    assert (f == 0.0 and n == 0.0) == all(s == frozenset(true) for s in sel)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), half=st.floats(0.0, 3.0))
def test_coverage_bounded(seed, half):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(30, 2))
    s = coverage_and_length(_report(np.zeros((30, 2)), half), t)
    assert 0.0 <= s["coverage"] <= min(s["marginal_coverage"]) <= 1.0
