"""Turn-wise conditional failure probability monitor and the drift-threshold
baseline it is compared against.

A conversation is monitored at every observed turn strictly before its
failure, or at every observed turn when it is censored. Alerts are never
imputed beyond the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ConversationRecord
from .errors import InvalidInput
from .nonparam import SurvivalCurve

DEFAULT_TAU = 2
DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))
GROUPS = ("all", "failing", "censored")


def conditional_failure_probability(curve: SurvivalCurve, t: int, tau: int = DEFAULT_TAU) -> float:
    """``1 - S(t + tau) / S(t)``, with ``t + tau`` clipped to the horizon."""
    if tau < 1:
        raise InvalidInput("tau must be a positive number of turns")
    if not 0 <= t <= curve.horizon:
        raise InvalidInput(f"turn {t} outside 0..{curve.horizon}")
    s_t = curve.survival[t]
    if s_t <= 0:
        raise InvalidInput(f"S({t}) = 0: failure is already certain under the model")
    return float(1.0 - curve.survival[min(t + tau, curve.horizon)] / s_t)


def _log_cfp(log_s: np.ndarray, t: int, tau: int) -> float:
    if not np.isfinite(log_s[t]):
        raise InvalidInput(f"S({t}) = 0: failure is already certain under the model")
    return float(-np.expm1(log_s[min(t + tau, log_s.size - 1)] - log_s[t]))


def model_cfp(fit, conv: ConversationRecord, t: int, tau: int = DEFAULT_TAU) -> float:
    """CFP from the turn-``t`` prefix of ``conv``.

    Uses the fit's log-survival when it has one so that curves far in the
    tail do not underflow to zero.
    """
    if tau < 1:
        raise InvalidInput("tau must be a positive number of turns")
    if hasattr(fit, "predict_log_survival"):
        return _log_cfp(np.asarray(fit.predict_log_survival(conv, t)), t, tau)
    return conditional_failure_probability(fit.predict_survival(conv, t), t, tau)


def monitored_turns(conv: ConversationRecord) -> np.ndarray:
    T = conv.outcome.event_time
    last = T - 1 if conv.outcome.event_observed else T
    return np.arange(1, last + 1)


@dataclass
class Trajectory:
    conversation_id: str
    turns: np.ndarray
    risks: np.ndarray
    event_time: int
    failed: bool


def risk_trajectories(dataset: Sequence[ConversationRecord], fit, tau: int = DEFAULT_TAU) -> list[Trajectory]:
    """CFP at every monitored turn, recomputed from the turn-``t`` prefix.

    ``fit`` is anything with ``predict_survival(conv, upto)``; a
    ``predict_log_survival`` method is preferred when present.
    """
    out = []
    for conv in dataset:
        turns = monitored_turns(conv)
        risks = np.array([model_cfp(fit, conv, int(t), tau) for t in turns])
        out.append(Trajectory(conv.conversation_id, turns, risks, conv.outcome.event_time, conv.outcome.event_observed))
    return out


def drift_trajectories(dataset: Sequence[ConversationRecord]) -> list[Trajectory]:
    """Prompt-to-prompt drift at every monitored turn."""
    out = []
    for conv in dataset:
        turns = monitored_turns(conv)
        out.append(
            Trajectory(conv.conversation_id, turns, conv.drift[turns - 1, 0], conv.outcome.event_time, conv.outcome.event_observed)
        )
    return out


def _first_alerts(trajs: Sequence[Trajectory], threshold: float) -> np.ndarray:
    """First alerted turn per conversation, 0 when never alerted."""
    first = np.zeros(len(trajs), dtype=int)
    for i, tr in enumerate(trajs):
        hit = np.nonzero(tr.risks > threshold)[0]
        if hit.size:
            first[i] = tr.turns[hit[0]]
    return first


def f1_at(trajs: Sequence[Trajectory], threshold: float) -> float:
    """Conversation-level F1: a failing conversation with an alert is a hit,
    an alerted censored conversation a false alarm."""
    alerted = _first_alerts(trajs, threshold) > 0
    failed = np.array([tr.failed for tr in trajs])
    tp = np.count_nonzero(alerted & failed)
    fp = np.count_nonzero(alerted & ~failed)
    fn = np.count_nonzero(~alerted & failed)
    return 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)


def tune_threshold_from(trajs: Sequence[Trajectory], grid: Sequence[float] = DEFAULT_GRID) -> float:
    """Grid value with the best F1; ties go to the larger threshold."""
    grid = list(grid)
    if not grid:
        raise InvalidInput("threshold grid is empty")
    if not any(tr.failed for tr in trajs):
        raise InvalidInput("threshold tuning needs at least one failing conversation")
    best, best_f1 = None, -1.0
    for lam in sorted(grid):
        f1 = f1_at(trajs, lam)
        if f1 >= best_f1:
            best, best_f1 = lam, f1
    return float(best)


def tune_threshold(
    train: Sequence[ConversationRecord], fit, tau: int = DEFAULT_TAU, grid: Sequence[float] = DEFAULT_GRID
) -> float:
    return tune_threshold_from(risk_trajectories(train, fit, tau), grid)


def tune_drift_threshold(train: Sequence[ConversationRecord], grid: Sequence[float] = DEFAULT_GRID) -> float:
    return tune_threshold_from(drift_trajectories(train), grid)


@dataclass
class GroupSummary:
    n: int
    n_monitored: int  # conversations with at least one monitored turn
    pct_alerted: float
    alerts_per_conversation: float
    mean_first_alert: float | None
    mean_failure_round: float | None
    median_lead_time: float | None
    mean_lead_time: float | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _mean(x) -> float | None:
    return float(np.mean(x)) if len(x) else None


def _summarize(trajs: Sequence[Trajectory], threshold: float) -> GroupSummary:
    first = _first_alerts(trajs, threshold)
    counts = np.array([np.count_nonzero(tr.risks > threshold) for tr in trajs], dtype=float)
    monitored = np.array([tr.turns.size > 0 for tr in trajs], dtype=bool)
    failed = np.array([tr.failed for tr in trajs], dtype=bool)
    T = np.array([tr.event_time for tr in trajs])
    alerted = first > 0
    lead = (T - first)[alerted & failed]
    n_mon = int(monitored.sum())
    return GroupSummary(
        n=len(trajs),
        n_monitored=n_mon,
        pct_alerted=100.0 * np.count_nonzero(alerted) / n_mon if n_mon else 0.0,
        alerts_per_conversation=_mean(counts[monitored]) or 0.0,
        mean_first_alert=_mean(first[alerted]),
        mean_failure_round=_mean(T[failed]),
        median_lead_time=float(np.median(lead)) if lead.size else None,
        mean_lead_time=_mean(lead),
    )


@dataclass
class MonitorReport:
    method: str
    threshold: float
    tau: int | None
    trajectories: list[Trajectory]
    groups: dict[str, GroupSummary] = field(default_factory=dict)

    @classmethod
    def build(cls, method: str, trajs: list[Trajectory], threshold: float, tau: int | None) -> "MonitorReport":
        failing = [t for t in trajs if t.failed]
        censored = [t for t in trajs if not t.failed]
        groups = {"all": _summarize(trajs, threshold)}
        groups["failing"] = _summarize(failing, threshold)
        groups["censored"] = _summarize(censored, threshold)
        return cls(method, float(threshold), tau, trajs, groups)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "threshold": self.threshold,
            "tau": self.tau,
            "groups": {g: s.to_json() for g, s in self.groups.items()},
        }

    def turn_csv(self) -> str:
        lines = ["conversation_id,turn,risk,alerted"]
        for tr in self.trajectories:
            for t, r in zip(tr.turns.tolist(), tr.risks.tolist()):
                lines.append(f"{tr.conversation_id},{t},{r!r},{int(r > self.threshold)}")
        return "\n".join(lines) + "\n"


def run_monitor(dataset: Sequence[ConversationRecord], fit, threshold: float, tau: int = DEFAULT_TAU) -> MonitorReport:
    """Alert at each monitored turn whose CFP exceeds ``threshold``."""
    return MonitorReport.build("model", risk_trajectories(dataset, fit, tau), threshold, tau)


def drift_baseline_monitor(dataset: Sequence[ConversationRecord], drift_threshold: float) -> MonitorReport:
    """Alert whenever prompt-to-prompt drift exceeds ``drift_threshold``."""
    if drift_threshold < 0:
        raise InvalidInput("drift threshold must be non-negative")
    return MonitorReport.build("drift baseline", drift_trajectories(dataset), drift_threshold, None)


def _cell(x, fmt: str) -> str:
    return "--" if x is None else format(x, fmt)


def format_table(reports: Sequence[MonitorReport]) -> str:
    """Aggregate rows, one block per group and one line per method."""
    header = f"{'Group':<16}{'Method':<18}{'% alerted':>10}{'Alerts/conv':>13}{'First alert':>13}{'Failure round':>15}{'Median lead':>13}"
    lines = [header, "-" * len(header)]
    for g in GROUPS:
        for i, rep in enumerate(reports):
            s = rep.groups[g]
            label = f"{g.capitalize()} ({s.n})" if i == 0 else ""
            lines.append(
                f"{label:<16}{rep.method:<18}{s.pct_alerted:>9.0f}%{s.alerts_per_conversation:>13.2f}"
                f"{_cell(s.mean_first_alert, '.2f'):>13}{_cell(s.mean_failure_round if g != 'all' else None, '.2f'):>15}"
                f"{_cell(s.median_lead_time, '.1f'):>13}"
            )
    return "\n".join(lines) + "\n"


def reports_json(reports: Sequence[MonitorReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n"
