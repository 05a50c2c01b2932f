"""Nonparametric survival estimators on the integer turn grid ``0..H``.

Tie convention: at a grid time, events are processed before censorings, so a
subject censored at ``t`` is still in the risk set at ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import EventOutcome
from .errors import InvalidInput

_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    times: np.ndarray
    survival: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.survival, dtype=float)
        object.__setattr__(self, "survival", s)
        object.__setattr__(self, "times", np.arange(s.size))
        if s.size < 1 or abs(s[0] - 1.0) > _TOL:
            raise InvalidInput("survival curve must start at S(0) = 1")
        if np.any(s < -_TOL) or np.any(s > 1 + _TOL) or np.any(np.diff(s) > _TOL):
            raise InvalidInput("survival curve must be non-increasing within [0, 1]")

    @property
    def horizon(self) -> int:
        return self.survival.size - 1

    def __call__(self, t: int) -> float:
        return float(self.survival[min(int(t), self.horizon)])

    def to_csv(self) -> str:
        return "t,value\n" + "".join(f"{t},{v!r}\n" for t, v in zip(self.times, self.survival.tolist()))


@dataclass(frozen=True, eq=False)
class CumulativeHazardCurve:
    times: np.ndarray
    chf: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.chf, dtype=float)
        object.__setattr__(self, "chf", h)
        object.__setattr__(self, "times", np.arange(h.size))
        if h.size < 1 or abs(h[0]) > _TOL or np.any(np.diff(h) < -_TOL):
            raise InvalidInput("cumulative hazard must start at 0 and be non-decreasing")

    @property
    def horizon(self) -> int:
        return self.chf.size - 1

    def survival(self) -> SurvivalCurve:
        return SurvivalCurve(self.times, np.exp(-self.chf))

    def to_csv(self) -> str:
        return "t,value\n" + "".join(f"{t},{v!r}\n" for t, v in zip(self.times, self.chf.tolist()))


def as_arrays(outcomes) -> tuple[np.ndarray, np.ndarray]:
    """Accept a sequence of :class:`EventOutcome` or a ``(times, events)`` pair."""
    if isinstance(outcomes, tuple) and len(outcomes) == 2 and not isinstance(outcomes[0], EventOutcome):
        times = np.asarray(outcomes[0], dtype=int)
        events = np.asarray(outcomes[1], dtype=bool)
    else:
        outcomes = list(outcomes)
        times = np.array([o.event_time for o in outcomes], dtype=int)
        events = np.array([o.event_observed for o in outcomes], dtype=bool)
    if times.shape != events.shape:
        raise InvalidInput("times and events must have the same length")
    if np.any(times < 1):
        raise InvalidInput("event times must be positive turn indices")
    return times, events


def risk_table(times: np.ndarray, events: np.ndarray, horizon: int, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """At-risk counts ``n_t`` and event counts ``d_t`` for ``t = 0..horizon``."""
    w = np.ones(times.shape) if weights is None else np.asarray(weights, dtype=float)
    ends = np.minimum(times, horizon + 1)
    # subjects with T >= t, via a reversed cumulative count of end times
    by_end = np.bincount(ends, weights=w, minlength=horizon + 2)
    at_risk = np.cumsum(by_end[::-1])[::-1][: horizon + 1]
    d = np.bincount(times[events & (times <= horizon)], weights=w[events & (times <= horizon)], minlength=horizon + 1)
    d = d[: horizon + 1]
    d[0] = 0.0
    return at_risk, d


def _horizon(times: np.ndarray, horizon: int | None) -> int:
    if times.size == 0:
        raise InvalidInput("empty outcome sequence")
    return int(times.max()) if horizon is None else int(horizon)


def kaplan_meier(outcomes, horizon: int | None = None) -> SurvivalCurve:
    times, events = as_arrays(outcomes)
    H = _horizon(times, horizon)
    n, d = risk_table(times, events, H)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(n > 0, 1.0 - d / np.where(n > 0, n, 1.0), 1.0)
    return SurvivalCurve(np.arange(H + 1), np.cumprod(factor))


def nelson_aalen(outcomes, horizon: int | None = None) -> CumulativeHazardCurve:
    times, events = as_arrays(outcomes)
    H = _horizon(times, horizon)
    n, d = risk_table(times, events, H)
    inc = np.where(n > 0, d / np.where(n > 0, n, 1.0), 0.0)
    return CumulativeHazardCurve(np.arange(H + 1), np.cumsum(inc))


def censoring_km(outcomes, horizon: int | None = None) -> SurvivalCurve:
    """Kaplan-Meier estimate of the censoring distribution ``G``."""
    times, events = as_arrays(outcomes)
    return kaplan_meier((times, ~events), horizon)


def log_rank_test(group_a, group_b) -> tuple[float, float]:
    """Two-sample log-rank chi-square statistic (1 df) and p-value."""
    ta, ea = as_arrays(group_a)
    tb, eb = as_arrays(group_b)
    if ta.size == 0 or tb.size == 0:
        raise InvalidInput("both groups must be non-empty")
    H = int(max(ta.max(), tb.max()))
    na, da = risk_table(ta, ea, H)
    nb, db = risk_table(tb, eb, H)
    stat = logrank_statistic(na, da, na + nb, da + db)
    return stat, float(stats.chi2.sf(stat, 1)) if stat > 0 else 1.0


def logrank_statistic(n1, d1, n, d) -> float:
    """Log-rank statistic from group-1 and pooled risk tables (any trailing shape)."""
    n1 = np.asarray(n1, dtype=float)
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    safe_n = np.where(n > 0, n, 1.0)
    expected = d * n1 / safe_n
    frac = n1 / safe_n
    var = np.where(n > 1, d * frac * (1.0 - frac) * (n - d) / np.where(n > 1, n - 1.0, 1.0), 0.0)
    o_minus_e = (np.asarray(d1, dtype=float) - expected).sum(axis=-1)
    v = var.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(v > 1e-12, o_minus_e**2 / np.where(v > 1e-12, v, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BeyondHorizon:
    """Median not reached within the horizon; prints as ``"H+"``."""

    horizon: int

    def __str__(self) -> str:
        return f"{self.horizon}+"


def median_survival_time(curve: SurvivalCurve) -> float | BeyondHorizon:
    s = curve.survival
    below = np.nonzero(s <= 0.5)[0]
    if below.size == 0:
        return BeyondHorizon(curve.horizon)
    t = int(below[0])
    prev = s[t - 1]
    if prev == s[t]:
        return float(t)
    return float(t - 1 + (prev - 0.5) / (prev - s[t]))


def curves_from_outcomes(outcomes: Sequence[EventOutcome], horizon: int) -> tuple[SurvivalCurve, CumulativeHazardCurve]:
    return kaplan_meier(outcomes, horizon), nelson_aalen(outcomes, horizon)
