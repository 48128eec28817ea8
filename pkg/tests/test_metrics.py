import math

import numpy as np
import pytest

from reil.errors import InvalidWindowError, LengthMismatchError, TooShortError
from reil.metrics import (
    MetricRow,
    MetricsLog,
    action_error_metric,
    agent_angular_acceleration,
    angular_acceleration_metric,
    moving_average,
    summarize,
    welch_t_test,
)


def loop_angular_acc(series):
    total = 0.0
    for a, b in zip(series, series[1:]):
        total += abs(b - a)
    return total / (len(series) - 1)


def loop_action_error(agent, labels, a_max):
    total = 0.0
    for a, l in zip(agent, labels):
        total += sum(((ai - li) / (2 * mi)) ** 2 for ai, li, mi in zip(a, l, a_max))
    return math.sqrt(total / len(agent))


def loop_moving_average(series, n):
    out = []
    for i in range(len(series)):
        lo = max(0, i - n + 1)
        out.append(sum(series[lo:i + 1]) / (i - lo + 1))
    return out


# ---------------------------------------------------------------------------
# angular acceleration


def test_angular_acc_constant_zero():
    assert angular_acceleration_metric([0.3] * 10) == 0.0


def test_angular_acc_alternating():
    series = [0.4 if i % 2 == 0 else -0.4 for i in range(11)]
    assert abs(angular_acceleration_metric(series) - 0.8) < 1e-12


def test_angular_acc_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        series = rng.normal(size=rng.integers(2, 40))
        assert abs(angular_acceleration_metric(series) - loop_angular_acc(series)) < 1e-12


def test_angular_acc_too_short():
    with pytest.raises(TooShortError):
        angular_acceleration_metric([0.1])


def test_agent_angular_acc_filters_supervised_pairs():
    omega = [0.0, 1.0, 1.0, 5.0, 5.2]
    f = [0, 0, 1, 0, 0]
    # agent-adjacent pairs: (0,1) and (3,4) -> diffs 1.0 and 0.2
    assert abs(agent_angular_acceleration(omega, f) - 0.6) < 1e-12
    # all supervised: falls back to the plain metric
    assert abs(agent_angular_acceleration(omega, [1] * 5)
               - angular_acceleration_metric(omega)) < 1e-12


# ---------------------------------------------------------------------------
# action error


def test_action_error_zero_when_equal():
    a = np.array([[0.05, 0.2], [0.0, -0.1]])
    assert action_error_metric(a, a, (0.1, 0.4)) == 0.0


def test_action_error_extreme_case_sqrt2():
    agent = [[0.1, 0.4]] * 7
    labels = [[-0.1, -0.4]] * 7
    got = action_error_metric(agent, labels, (0.1, 0.4))
    assert abs(got - math.sqrt(2.0)) < 1e-12


def test_action_error_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 30))
        agent = rng.normal(size=(n, 2))
        labels = rng.normal(size=(n, 2))
        got = action_error_metric(agent, labels, (0.1, 0.4))
        assert abs(got - loop_action_error(agent, labels, (0.1, 0.4))) < 1e-12


def test_action_error_length_mismatch():
    with pytest.raises(LengthMismatchError):
        action_error_metric(np.zeros((2, 2)), np.zeros((3, 2)), (1, 1))


# ---------------------------------------------------------------------------
# moving average


def test_moving_average_window_one_identity():
    series = [3.0, 1.0, 4.0, 1.0]
    assert np.array_equal(moving_average(series, 1), series)


def test_moving_average_constant():
    assert np.allclose(moving_average([2.5] * 30, 10), 2.5)


def test_moving_average_matches_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        series = rng.normal(size=int(rng.integers(1, 60)))
        got = moving_average(series, 10)
        assert np.max(np.abs(got - loop_moving_average(list(series), 10))) < 1e-12


def test_moving_average_invalid_window():
    with pytest.raises(InvalidWindowError):
        moving_average([1.0], 0)


# ---------------------------------------------------------------------------
# Welch t-test


def test_welch_matches_textbook_example():
    # Welch's worked example: two groups with unequal variances.
    a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6,
         19.0, 21.7, 21.4]
    b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1,
         22.9, 30.5, 24.3, 23.8, 25.4]
    t, p = welch_t_test(a, b)
    # hand-computed: mean_a=20.82, mean_b=23.7589...; se^2 = va/na + vb/nb
    ma, mb = np.mean(a), np.mean(b)
    va, vb = np.var(a, ddof=1) / len(a), np.var(b, ddof=1) / len(b)
    t_hand = (ma - mb) / math.sqrt(va + vb)
    assert abs(t - t_hand) < 1e-6
    assert 0.0 < p < 0.05


def test_welch_degenerate_identical_groups():
    t, p = welch_t_test([5.0, 5.0, 5.0], [5.0, 5.0])
    assert p == 1.0
    t, p = welch_t_test([5.0, 5.0], [6.0, 6.0])
    assert p == 0.0


def test_summarize_single_run_flag_and_pvalues():
    def log_with(sup, success=True):
        log = MetricsLog()
        log.append(MetricRow(0, 100, sup, 1.0, 0.1, None, success))
        return log

    summary = summarize({
        "A": [log_with(10), log_with(14), log_with(12)],
        "B": [log_with(30)],
        "C": [log_with(50, success=False)],
    })
    assert summary["algorithms"]["A"].successes == 3
    assert abs(summary["algorithms"]["A"].mean_supervised - 12.0) < 1e-12
    assert summary["algorithms"]["B"].single_run
    assert summary["algorithms"]["B"].std_supervised == 0.0
    assert summary["algorithms"]["C"].successes == 0
    assert math.isnan(summary["welch_p"]["A|C"])
    assert 0.0 <= summary["welch_p"]["A|B"] <= 1.0


def test_metrics_csv_roundtrip(tmp_path):
    log = MetricsLog()
    rng = np.random.default_rng(3)
    for i in range(10):
        log.append(MetricRow(
            episode=i, steps=int(rng.integers(1, 100)),
            supervised_steps=int(rng.integers(0, 50)),
            episode_return=float(rng.normal()),
            avg_abs_angular_acc=float(rng.random()),
            action_error=None if i % 3 == 0 else float(rng.random()),
            success=bool(rng.random() < 0.5),
        ))
    path = tmp_path / "m.csv"
    log.to_csv(path)
    loaded = MetricsLog.from_csv(path)
    assert [vars(r) for r in loaded.rows] == [vars(r) for r in log.rows]
