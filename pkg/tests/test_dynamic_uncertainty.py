"""Dynamic uncertainty scoring"""

import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import ValidationError
from src.models.records import Metric, du_upper_bound
from src.scoring.dynamic_uncertainty import (
    DuConfig, dynamic_uncertainty, prediction_uncertainty, score_traces_du, trace_matrix,
)

from .conftest import make_trace, random_traces

EXACT = dict(rel=1e-12, abs=1e-15)


def naive_du(values, window, short_denominator=False):
    """Scalar loop straight from the definition"""
    stds = [statistics.stdev(values[k - window:k]) for k in range(window, len(values) + 1)]
    denominator = len(values) - window if short_denominator else len(values) - window + 1
    return math.fsum(stds) / denominator


def test_prediction_uncertainty_constant_window():
    assert prediction_uncertainty(make_trace("a", [0.7] * 20), k=10, window=10) == 0.0


def test_prediction_uncertainty_alternating():
    assert prediction_uncertainty(make_trace("a", [0, 1, 0, 1]), k=2, window=2) == pytest.approx(
        0.7071067811865476, **EXACT
    )


def test_prediction_uncertainty_uses_trailing_window():
    trace = make_trace("a", [0.1, 0.2, 0.3, 0.4])
    assert prediction_uncertainty(trace, k=3, window=2) == pytest.approx(0.07071067811865478, **EXACT)


@pytest.mark.parametrize("k", [1, 5])
def test_prediction_uncertainty_rejects_out_of_range_epoch(k):
    with pytest.raises(ValidationError):
        prediction_uncertainty(make_trace("a", [0.1, 0.2, 0.3, 0.4]), k=k, window=2)


@pytest.mark.parametrize("window", [2, 5, 10])
def test_constant_trace_scores_zero(window):
    assert dynamic_uncertainty(make_trace("a", [0.42] * 30), DuConfig(window=window)) == 0.0


@pytest.mark.parametrize("value", [0.1, 0.3, 0.7, 0.9, 0.123456, 1.0 / 3.0])
@pytest.mark.parametrize("window", [2, 5, 10])
def test_constant_trace_is_exactly_zero_for_any_level(value, window):
    trace = make_trace("a", [value] * 20)
    assert dynamic_uncertainty(trace, DuConfig(window=window)) == 0.0
    assert prediction_uncertainty(trace, k=20, window=window) == 0.0
    assert score_traces_du([trace], DuConfig(window=window)).entries == {"a": 0.0}


def test_alternating_trace():
    assert dynamic_uncertainty(make_trace("a", [0, 1, 0, 1]), DuConfig(window=2)) == pytest.approx(
        0.7071067811865476, **EXACT
    )


def test_linear_trace():
    assert dynamic_uncertainty(make_trace("a", [0.1, 0.2, 0.3, 0.4]), DuConfig(window=2)) == pytest.approx(
        0.07071067811865478, **EXACT
    )


def test_short_denominator_divides_by_k_minus_j():
    trace = make_trace("a", [0, 1, 0, 1])
    assert dynamic_uncertainty(trace, DuConfig(window=2, short_denominator=True)) == pytest.approx(
        3 * 0.7071067811865476 / 2, **EXACT
    )
    with pytest.raises(ValidationError):
        dynamic_uncertainty(make_trace("a", [0.1, 0.2]), DuConfig(window=2, short_denominator=True))


def test_trace_shorter_than_window_is_an_error():
    with pytest.raises(ValidationError, match="fewer than window"):
        dynamic_uncertainty(make_trace("a", [0.1] * 5), DuConfig(window=10))


def test_window_below_two_is_rejected():
    with pytest.raises(ValueError):
        DuConfig(window=1)


def test_time_reversal_is_exact(rng):
    for trace in random_traces(rng, 1000, 150):
        reversed_trace = make_trace(trace.sample_id, trace.certainties[::-1])
        assert dynamic_uncertainty(trace) == dynamic_uncertainty(reversed_trace)


def test_affine_scaling(rng):
    for _ in range(1000):
        values = rng.uniform(0.2, 0.8, 150)
        a = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 1.0)
        b = 0.5 - a * 0.5
        base = dynamic_uncertainty(make_trace("a", values.tolist()))
        scaled = dynamic_uncertainty(make_trace("a", np.clip(a * values + b, 0.0, 1.0).tolist()))
        assert scaled == pytest.approx(abs(a) * base, rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    values=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=40),
    window=st.integers(min_value=2, max_value=10),
)
def test_du_within_bound(values, window):
    if len(values) < window:
        return
    score = dynamic_uncertainty(make_trace("a", values), DuConfig(window=window))
    assert 0.0 <= score <= du_upper_bound(window) * (1 + 1e-12)


def test_batch_scores_match_scalar_oracle(rng):
    traces = random_traces(rng, 200, 40)
    table = score_traces_du(traces, DuConfig(window=10))
    for trace in traces:
        assert table.entries[trace.sample_id] == pytest.approx(naive_du(trace.certainties, 10), **EXACT)


def test_batch_rows_equal_single_trace_scores(rng):
    traces = random_traces(rng, 50, 30)
    table = score_traces_du(traces, DuConfig(window=5))
    for trace in traces:
        assert table.entries[trace.sample_id] == dynamic_uncertainty(trace, DuConfig(window=5))


def test_input_order_does_not_matter(rng):
    traces = random_traces(rng, 60, 25)
    shuffled = [traces[i] for i in rng.permutation(len(traces))]
    first, second = score_traces_du(traces), score_traces_du(shuffled)
    assert first == second
    assert list(first.entries) == sorted(first.entries)


def test_score_table_metadata():
    table = score_traces_du([make_trace("b", [0.3] * 12), make_trace("a", [0.9] * 12)])
    assert table.metric == Metric.DU
    assert table.entries == {"a": 0.0, "b": 0.0}
    assert table.params["window"] == 10
    assert table.params["epochs"] == 12
    assert table.params["variants"] == ["clean"]


def test_mixed_epoch_counts_are_rejected():
    with pytest.raises(ValidationError, match="mixed epoch counts"):
        trace_matrix([make_trace("a", [0.1] * 12), make_trace("b", [0.1] * 13)])
