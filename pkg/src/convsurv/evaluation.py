"""Discrimination and calibration metrics, risk stratification and the
cross-validation harness used for hyperparameter selection."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aft import FAMILIES, aft_survival, fit_aft
from .cox import fit_cox, fit_cox_model
from .data import ConversationRecord, kfold_conversations, outcome_arrays
from .errors import ConvergenceError, ConvSurvWarning, InvalidInput
from .features import CountingProcess
from .forest import default_mtry, fit_rsf
from .nonparam import (
    SurvivalCurve,
    as_arrays,
    censoring_km,
    kaplan_meier,
    log_rank_test,
    median_survival_time,
)


def c_index(risk_scores, outcomes) -> float:
    """Harrell's concordance. Higher score means earlier expected failure.

    A pair is comparable when the earlier time is an event, or when both times
    are equal and only the first is an event. Tied scores earn half credit.
    """
    times, events = as_arrays(outcomes)
    s = np.asarray(risk_scores, dtype=float)
    if s.shape != times.shape:
        raise InvalidInput("need one risk score per conversation")
    ti, tj = times[:, None], times[None, :]
    comparable = events[:, None] & ((ti < tj) | ((ti == tj) & ~events[None, :]))
    n_pairs = np.count_nonzero(comparable)
    if n_pairs == 0:
        raise InvalidInput("no comparable pairs for the C-index")
    diff = s[:, None] - s[None, :]
    credit = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float(credit[comparable].sum() / n_pairs)


def _curve_matrix(curves, horizon: int | None = None) -> np.ndarray:
    if isinstance(curves, np.ndarray):
        S = np.atleast_2d(curves.astype(float))
    else:
        S = np.vstack([c.survival if isinstance(c, SurvivalCurve) else np.asarray(c, float) for c in curves])
    if horizon is not None and S.shape[1] < horizon + 1:
        raise InvalidInput(f"survival curves cover {S.shape[1] - 1} turns, need {horizon}")
    return S


def _ipcw_weights(t: int, times, events, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Graf weights at ``t`` and a mask of subjects whose needed ``G`` is zero."""
    failed = events & (times <= t)
    alive = times > t
    g = np.where(failed, G[np.clip(times - 1, 0, None)], np.where(alive, G[t], 1.0))
    bad = (failed | alive) & (g <= 0)
    w = np.where(failed | alive, 1.0 / np.where(g > 0, g, 1.0), 0.0)
    w[bad] = 0.0
    return w, bad


def brier_at(t: int, predicted_curves, outcomes, censoring: SurvivalCurve | None = None) -> float:
    """IPCW Brier score at turn ``t``.

    Failures by ``t`` contribute ``S(t)^2 / G(T-)``, survivors past ``t``
    contribute ``(1 - S(t))^2 / G(t)``, subjects censored by ``t`` contribute 0.
    ``G`` is the Kaplan-Meier of the censoring times unless given.
    """
    times, events = as_arrays(outcomes)
    H = int(times.max())
    S = _curve_matrix(predicted_curves)
    if S.shape[0] != times.size:
        raise InvalidInput("need one predicted curve per conversation")
    H = max(H, S.shape[1] - 1)
    if not 1 <= t < S.shape[1]:
        raise InvalidInput(f"turn {t} outside the prediction grid 1..{S.shape[1] - 1}")
    G = (censoring or censoring_km((times, events), H)).survival
    G = np.concatenate([G, np.full(max(0, H + 1 - G.size), G[-1])])
    w, bad = _ipcw_weights(t, times, events, G)
    if bad.any():
        warnings.warn(
            f"censoring survival is 0 for {int(bad.sum())} subject(s) at t={t}; excluded",
            ConvSurvWarning,
            stacklevel=2,
        )
    target = (times > t).astype(float)
    keep = ~bad
    if not keep.any():
        raise InvalidInput(f"no subjects usable for the Brier score at t={t}")
    return float(np.sum((w * (target - S[:, t]) ** 2)[keep]) / keep.sum())


def brier_by_round(predicted_curves, outcomes, horizon: int | None = None) -> np.ndarray:
    times, events = as_arrays(outcomes)
    S = _curve_matrix(predicted_curves)
    H = S.shape[1] - 1 if horizon is None else horizon
    G = censoring_km((times, events), max(H, int(times.max())))
    return np.array([brier_at(t, S, (times, events), G) for t in range(1, H + 1)])


def integrated_brier(predicted_curves, outcomes, horizon: int | None = None) -> float:
    """Unweighted mean of the per-round Brier scores over ``1..H``."""
    return float(np.mean(brier_by_round(predicted_curves, outcomes, horizon)))


@dataclass
class EvaluationReport:
    c_index: float
    brier_by_round: list[float]
    ibs: float
    n_conversations: int
    n_events: int

    def to_json(self) -> dict:
        return {
            "c_index": self.c_index,
            "brier_by_round": list(self.brier_by_round),
            "ibs": self.ibs,
            "n_conversations": self.n_conversations,
            "n_events": self.n_events,
        }

    def brier_csv(self) -> str:
        return "round,brier\n" + "".join(f"{t},{b!r}\n" for t, b in enumerate(self.brier_by_round, 1))


def survival_matrix(fit, dataset: Sequence[ConversationRecord], upto: int | None = None) -> np.ndarray:
    """Predicted survival on ``0..H`` for each conversation, one row each.

    Each conversation's covariates are aggregated over its observed turns
    (or the first ``upto`` of them).
    """
    if not dataset:
        raise InvalidInput("empty dataset")
    if fit.kind == "aft" and upto is None:
        Z = fit.schema.summary_matrix(dataset)
        mu = fit.mu(Z)
        grid = np.arange(1, fit.schema.horizon + 1, dtype=float)
        S = aft_survival(fit.family, mu[:, None], fit.sigma, grid[None, :])
        return np.hstack([np.ones((len(dataset), 1)), np.atleast_2d(S)])
    if fit.kind == "rsf" and upto is None:
        return np.exp(-fit.predict_chf_matrix(fit.schema.summary_matrix(dataset)))
    return np.vstack([fit.predict_survival(c, upto).survival for c in dataset])


def risk_scores(fit, dataset: Sequence[ConversationRecord]) -> np.ndarray:
    if fit.kind == "aft":
        return -fit.mu(fit.schema.summary_matrix(dataset))
    if fit.kind == "rsf":
        return fit.predict_chf_matrix(fit.schema.summary_matrix(dataset)).sum(axis=1)
    return np.array([fit.risk_score(c) for c in dataset])


def evaluate(fit, dataset: Sequence[ConversationRecord]) -> EvaluationReport:
    times, events = outcome_arrays(dataset)
    S = survival_matrix(fit, dataset)
    briers = brier_by_round(S, (times, events))
    return EvaluationReport(
        c_index=c_index(risk_scores(fit, dataset), (times, events)),
        brier_by_round=briers.tolist(),
        ibs=float(briers.mean()),
        n_conversations=len(dataset),
        n_events=int(events.sum()),
    )


# --------------------------------------------------------------------------
# stratification


@dataclass
class StratificationResult:
    labels: list[str]
    groups: dict[str, list[str]]  # label -> conversation ids
    curves: dict[str, SurvivalCurve]
    medians: dict[str, object]  # float or BeyondHorizon
    logrank_statistic: float
    logrank_p: float
    hazard_ratio: float

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "sizes": {k: len(v) for k, v in self.groups.items()},
            "median_survival": {k: (m if isinstance(m, float) else str(m)) for k, m in self.medians.items()},
            "curves": {k: c.survival.tolist() for k, c in self.curves.items()},
            "logrank_statistic": self.logrank_statistic,
            "logrank_p": self.logrank_p,
            "hazard_ratio_high_vs_low": self.hazard_ratio,
        }


def _group_labels(k: int) -> list[str]:
    return ["low", "medium", "high"] if k == 3 else (["low", "high"] if k == 2 else [f"q{i + 1}" for i in range(k)])


def _indicator_hazard_ratio(times, events, indicator) -> float:
    """``exp(beta)`` of a one-covariate Cox fit on a conversation-level indicator."""
    reps = times.astype(int)
    stop = np.concatenate([np.arange(1, T + 1) for T in reps])
    ev = np.concatenate([np.r_[np.zeros(T - 1, bool), [e]] for T, e in zip(reps, events)])
    cp = CountingProcess(
        cluster=np.repeat(np.arange(times.size), reps),
        start=stop - 1,
        stop=stop,
        X=np.repeat(indicator.astype(float), reps)[:, None],
        event=ev,
        names=["high"],
        ids=[str(i) for i in range(times.size)],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvSurvWarning)
        fit = fit_cox(cp, ridge_strength=0.0)
    return float(np.exp(fit.coefficients[0]))


def stratify_by_risk(
    dataset: Sequence[ConversationRecord],
    stratifier: Callable[[ConversationRecord], float] | Sequence[float],
    quantiles: Sequence[float] = (1 / 3, 2 / 3),
) -> StratificationResult:
    """Cut conversations at stratifier quantiles; values equal to a cut go low."""
    values = np.array([stratifier(c) for c in dataset] if callable(stratifier) else stratifier, dtype=float)
    if values.size != len(dataset):
        raise InvalidInput("need one stratifier value per conversation")
    if np.ptp(values) == 0:
        raise InvalidInput("stratifier is constant; cannot form risk groups")
    cuts = np.quantile(values, quantiles)
    idx = np.searchsorted(cuts, values, side="left")
    labels = _group_labels(len(cuts) + 1)
    times, events = outcome_arrays(dataset)
    H = dataset[0].horizon
    groups, curves, medians = {}, {}, {}
    for g, label in enumerate(labels):
        members = np.nonzero(idx == g)[0]
        if members.size == 0:
            continue
        groups[label] = [dataset[i].conversation_id for i in members]
        curves[label] = kaplan_meier((times[members], events[members]), H)
        medians[label] = median_survival_time(curves[label])
    lo, hi = idx == idx.min(), idx == idx.max()
    stat, p = log_rank_test((times[hi], events[hi]), (times[lo], events[lo]))
    both = lo | hi
    hr = _indicator_hazard_ratio(times[both], events[both], hi[both])
    return StratificationResult(list(groups), groups, curves, medians, float(stat), float(p), hr)


# --------------------------------------------------------------------------
# model configurations and cross-validation


@dataclass(frozen=True)
class ModelConfig:
    model: str  # cox | aft | rsf
    params: tuple = ()  # sorted (key, value) pairs

    @classmethod
    def make(cls, model: str, **params) -> "ModelConfig":
        return cls(model, tuple(sorted(params.items())))

    @property
    def options(self) -> dict:
        return dict(self.params)

    def label(self) -> str:
        return self.model + "(" + ", ".join(f"{k}={v}" for k, v in self.params) + ")"

    def to_json(self) -> dict:
        return {"model": self.model, "params": self.options}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls.make(obj["model"], **obj["params"])


RIDGE_OFF = (0.0, 1e-4, 1e-3, 1e-2)
RIDGE_ON = (1e-4, 1e-3, 1e-2, 1e-1)


def default_grid(model: str) -> list[ModelConfig]:
    """Hyperparameter grids searched by :func:`cross_validate`."""
    if model == "cox":
        return [ModelConfig.make("cox", interactions=False, ridge=r) for r in RIDGE_OFF] + [
            ModelConfig.make("cox", interactions=True, ridge=r) for r in RIDGE_ON
        ]
    if model == "aft":
        return [
            ModelConfig.make("aft", family=f, interactions=inter, ridge=r)
            for f in FAMILIES
            for inter, ridges in ((False, RIDGE_OFF), (True, RIDGE_ON))
            for r in ridges
        ]
    if model == "rsf":
        return [
            ModelConfig.make("rsf", n_trees=b, max_depth=d, mtry=m)
            for b, d, m in itertools.product((200, 500, 1000), (4, 6, 8, None), ("sqrt", "third", "half"))
        ]
    raise InvalidInput(f"unknown model {model!r}; choose cox, aft or rsf")


def _mtry(choice, p: int) -> int:
    if isinstance(choice, int):
        return choice
    return {"sqrt": default_mtry(p), "third": max(1, p // 3), "half": max(1, p // 2)}[choice]


def fit_config(config: ModelConfig, train: Sequence[ConversationRecord], seed: int = 0):
    o = config.options
    if config.model == "cox":
        return fit_cox_model(train, ridge_strength=o.get("ridge", 0.0), interactions=o.get("interactions", False))
    if config.model == "aft":
        return fit_aft(
            train,
            family=o.get("family", "weibull"),
            ridge_strength=o.get("ridge", 0.0),
            use_interactions=o.get("interactions", False),
            fixed_log_scale=o.get("fixed_log_scale"),
        )
    if config.model == "rsf":
        from .features import FeatureSchema

        schema = FeatureSchema.fit(train, level="summary", interactions="nonref" if o.get("interactions") else None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvSurvWarning)
            return fit_rsf(
                train,
                n_trees=o.get("n_trees", 500),
                max_depth=o.get("max_depth", 8),
                mtry=_mtry(o.get("mtry", "sqrt"), schema.n_features),
                min_leaf_events=o.get("min_leaf_events", 5),
                seed=seed,
                schema=schema,
            )
    raise InvalidInput(f"unknown model {config.model!r}")


@dataclass
class CVResult:
    selected: ModelConfig
    table: list[dict] = field(default_factory=list)  # config label, mean IBS, mean C, folds used

    def to_csv(self) -> str:
        rows = ["config,cv_ibs,cv_c_index,folds"]
        for r in self.table:
            rows.append(f"\"{r['config']}\",{r['cv_ibs']!r},{r['cv_c_index']!r},{r['folds']}")
        return "\n".join(rows) + "\n"


def cross_validate(
    train: Sequence[ConversationRecord],
    model: str | None = None,
    grid: Sequence[ModelConfig] | None = None,
    k: int = 5,
    seed: int = 0,
) -> CVResult:
    """Mean validation IBS per configuration over ``k`` conversation-level folds.

    Selection: lowest IBS, then highest C-index, then grid order. Folds whose
    validation part has no events are skipped.
    """
    if grid is None:
        if model is None:
            raise InvalidInput("give a model family or an explicit grid")
        grid = default_grid(model)
    grid = list(grid)
    if not grid:
        raise InvalidInput("configuration grid is empty")
    folds = kfold_conversations(train, k=k, seed=seed)
    usable = []
    for i, fold in enumerate(folds):
        if not any(c.outcome.event_observed for c in fold):
            warnings.warn(f"fold {i} has no events; skipped", ConvSurvWarning, stacklevel=2)
            continue
        usable.append(i)
    if not usable:
        raise InvalidInput("every cross-validation fold lacks events")

    table = []
    for config in grid:
        ibs, cidx = [], []
        for i in usable:
            valid = folds[i]
            fit_part = [c for j, f in enumerate(folds) if j != i for c in f]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvSurvWarning)
                    fit = fit_config(config, fit_part, seed=seed + i)
                    report = evaluate(fit, valid)
            except (ConvergenceError, InvalidInput) as exc:
                warnings.warn(f"{config.label()} failed on fold {i}: {exc}", ConvSurvWarning, stacklevel=2)
                ibs.append(math.inf)
                cidx.append(0.0)
                continue
            ibs.append(report.ibs)
            cidx.append(report.c_index)
        table.append(
            {"config": config.label(), "cv_ibs": float(np.mean(ibs)), "cv_c_index": float(np.mean(cidx)), "folds": len(usable)}
        )
    best = min(range(len(grid)), key=lambda j: (table[j]["cv_ibs"], -table[j]["cv_c_index"], j))
    return CVResult(grid[best], table)
