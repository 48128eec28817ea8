"""Per-episode metrics, smoothing, and run-level summary statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as _scipy_stats

from .errors import InvalidWindowError, LengthMismatchError, TooShortError


@dataclass
class MetricRow:
    episode: int
    steps: int
    supervised_steps: int
    episode_return: float
    avg_abs_angular_acc: float
    action_error: Optional[float]
    success: bool


@dataclass
class MetricsLog:
    rows: list[MetricRow] = field(default_factory=list)

    def append(self, row: MetricRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    @property
    def total_supervised_steps(self) -> int:
        return int(sum(r.supervised_steps for r in self.rows))

    @property
    def any_success(self) -> bool:
        return any(r.success for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "steps", "supervised_steps", "episode_return",
                        "avg_abs_angular_acc", "action_error", "success"])
            for r in self.rows:
                w.writerow([
                    r.episode, r.steps, r.supervised_steps, repr(r.episode_return),
                    repr(r.avg_abs_angular_acc),
                    "" if r.action_error is None else repr(r.action_error),
                    int(r.success),
                ])

    @classmethod
    def from_csv(cls, path) -> "MetricsLog":
        log = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                log.append(MetricRow(
                    episode=int(rec["episode"]),
                    steps=int(rec["steps"]),
                    supervised_steps=int(rec["supervised_steps"]),
                    episode_return=float(rec["episode_return"]),
                    avg_abs_angular_acc=float(rec["avg_abs_angular_acc"]),
                    action_error=(float(rec["action_error"]) if rec["action_error"] else None),
                    success=bool(int(rec["success"])),
                ))
        return log


def angular_acceleration_metric(omega_series) -> float:
    """Mean absolute successive difference of a command series."""
    omega = np.asarray(omega_series, dtype=np.float64)
    if omega.size < 2:
        raise TooShortError("need at least two samples")
    return float(np.abs(np.diff(omega)).mean())


def agent_angular_acceleration(omega_series, f_demo_series) -> float:
    """Smoothness restricted to adjacent agent-controlled pairs, so the
    supervisor's own commands do not mask the agent's oscillation; falls
    back to the full series when the agent never holds control twice."""
    omega = np.asarray(omega_series, dtype=np.float64)
    f = np.asarray(f_demo_series)
    if omega.size < 2:
        raise TooShortError("need at least two samples")
    pair_ok = (f[1:] == 0) & (f[:-1] == 0)
    if not pair_ok.any():
        return angular_acceleration_metric(omega)
    return float(np.abs(np.diff(omega))[pair_ok].mean())


def action_error_metric(agent_actions, supervisor_labels, a_max) -> float:
    """Normalized RMSE between paired agent and supervisor actions."""
    agent = np.atleast_2d(np.asarray(agent_actions, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(supervisor_labels, dtype=np.float64))
    if agent.shape != labels.shape:
        raise LengthMismatchError(f"{agent.shape} vs {labels.shape}")
    a_max = np.asarray(a_max, dtype=np.float64)
    norm = (agent - labels) / (2.0 * a_max)
    return float(np.sqrt((norm ** 2).sum(axis=1).mean()))


def moving_average(series, n: int) -> np.ndarray:
    """Trailing mean with leading partial windows, so output[0] = series[0]."""
    if n < 1:
        raise InvalidWindowError(f"window must be >= 1, got {n}")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    csum = np.cumsum(x)
    for i in range(x.size):
        lo = max(0, i - n + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def welch_t_test(a, b) -> tuple[float, float]:
    """Welch two-tailed t statistic and p-value; degenerate variances fall
    back to p = 1.0 when the means agree and 0.0 otherwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va = a.var(ddof=1) / a.size if a.size > 1 else 0.0
    vb = b.var(ddof=1) / b.size if b.size > 1 else 0.0
    denom = va + vb
    if denom == 0.0:
        return 0.0, (1.0 if a.mean() == b.mean() else 0.0)
    t = (a.mean() - b.mean()) / math.sqrt(denom)
    df = denom ** 2 / (
        (va ** 2 / (a.size - 1) if a.size > 1 else 0.0)
        + (vb ** 2 / (b.size - 1) if b.size > 1 else 0.0)
    )
    p = 2.0 * _scipy_stats.t.sf(abs(t), df)
    return float(t), float(p)


@dataclass
class RunSummary:
    label: str
    runs: int
    successes: int
    mean_supervised: float
    std_supervised: float
    single_run: bool


def summarize(run_logs: dict[str, list[MetricsLog]]) -> dict:
    """Per-algorithm supervised-step statistics over successful runs, plus
    pairwise Welch two-tailed t-tests on the per-run supervised totals."""
    summary: dict = {"algorithms": {}, "welch_p": {}}
    per_label: dict[str, list[float]] = {}
    for label, logs in run_logs.items():
        totals = [log.total_supervised_steps for log in logs if log.any_success]
        per_label[label] = totals
        n = len(totals)
        summary["algorithms"][label] = RunSummary(
            label=label,
            runs=len(logs),
            successes=n,
            mean_supervised=float(np.mean(totals)) if n else math.nan,
            std_supervised=float(np.std(totals, ddof=1)) if n > 1 else 0.0,
            single_run=n <= 1,
        )
    labels = sorted(per_label)
    for i, la in enumerate(labels):
        for lb in labels[i + 1:]:
            if per_label[la] and per_label[lb]:
                _, p = welch_t_test(per_label[la], per_label[lb])
            else:
                p = math.nan
            summary["welch_p"][f"{la}|{lb}"] = p
    return summary
