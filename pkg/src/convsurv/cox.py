"""Cox proportional hazards regression on counting-process rows.

Partial likelihood uses the Breslow treatment of ties. An optional ridge
penalty ``(ridge / 2) * ||beta_P||^2`` acts on a chosen block ``P`` of
coefficients (the drift x model interaction block when present).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .data import ConversationRecord
from .errors import ConvergenceError, ConvSurvWarning, InvalidInput, SchemaMismatch
from .features import CountingProcess, FeatureSchema, SurvivalSample, counting_process, samples_to_counting_process
from .nonparam import CumulativeHazardCurve, SurvivalCurve

DIVERGENCE_BOUND = 20.0
DIVERGENCE_PROBE = 10.0


def _as_cp(data) -> CountingProcess:
    if isinstance(data, CountingProcess):
        return data
    return samples_to_counting_process(list(data))


class _RiskSets:
    """Rows grouped by event time; with unit intervals the risk set at ``t`` is
    exactly the rows whose interval ends at ``t``."""

    def __init__(self, cp: CountingProcess):
        self.cp = cp
        ev_times = np.unique(cp.stop[cp.event])
        self.times = ev_times
        self.members = []
        self.events = []
        for t in ev_times:
            self.members.append(np.nonzero((cp.start < t) & (cp.stop >= t))[0])
            self.events.append(np.nonzero(cp.event & (cp.stop == t))[0])


def _objective(beta, X, rs: _RiskSets, pen, ridge, order=2):
    """Penalized log partial likelihood with gradient and information matrix."""
    eta = X @ beta
    p = beta.size
    ll = 0.0
    grad = np.zeros(p) if order >= 1 else None
    info = np.zeros((p, p)) if order >= 2 else None
    for R, D in zip(rs.members, rs.events):
        e = eta[R]
        m = e.max()
        w = np.exp(e - m)
        s0 = w.sum()
        xr = X[R]
        s1 = w @ xr
        d = D.size
        ll += eta[D].sum() - d * (m + np.log(s0))
        if grad is None:
            continue
        xbar = s1 / s0
        grad += X[D].sum(axis=0) - d * xbar
        if info is not None:
            s2 = (xr * w[:, None]).T @ xr
            info += d * (s2 / s0 - np.outer(xbar, xbar))
    ll -= 0.5 * ridge * np.sum(pen * beta**2)
    if grad is not None:
        grad -= ridge * pen * beta
    if info is not None:
        info += np.diag(ridge * pen)
    return ll, grad, info


def partial_log_likelihood(beta, samples) -> float:
    """Unpenalized Breslow log partial likelihood."""
    cp = _as_cp(samples)
    if isinstance(beta, CoxFit):
        beta = beta.coefficients
    beta = np.asarray(beta, dtype=float)
    ll, _, _ = _objective(beta, cp.X, _RiskSets(cp), np.zeros(beta.size), 0.0, order=1)
    return float(ll)


def penalized_objective(beta, samples, ridge_strength=0.0, penalized=None):
    """Value and analytic gradient of the penalized log partial likelihood."""
    cp = _as_cp(samples)
    beta = np.asarray(beta, dtype=float)
    pen = np.ones(beta.size) if penalized is None else np.asarray(penalized, dtype=float)
    ll, grad, _ = _objective(beta, cp.X, _RiskSets(cp), pen, ridge_strength, order=1)
    return ll, grad


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: int
    gradient_norm: float
    message: str = ""
    objective_trace: list[float] = field(default_factory=list)


@dataclass(eq=False)
class CoxFit:
    names: list[str]
    coefficients: np.ndarray
    penalized: np.ndarray  # bool mask
    active: np.ndarray  # bool mask; inactive columns are fixed at 0
    ridge_strength: float
    baseline: CumulativeHazardCurve
    information: np.ndarray
    robust_covariance: np.ndarray
    log_likelihood: float
    convergence: ConvergenceReport
    schema: FeatureSchema | None = None
    kind = "cox"

    @property
    def interaction_coefficients(self) -> dict[str, dict[str, float]]:
        """Interaction coefficients grouped by model level."""
        out: dict[str, dict[str, float]] = {}
        for name, b in zip(self.names, self.coefficients):
            if ":" in name:
                drift, model = name.split(":", 1)
                out.setdefault(model.split("=", 1)[1], {})[drift] = float(b)
        return out

    @property
    def n_covariates(self) -> int:
        return int(self.active.sum())

    def coefficient(self, name: str) -> float:
        try:
            return float(self.coefficients[self.names.index(name)])
        except ValueError:
            raise InvalidInput(f"unknown covariate {name!r}") from None

    def survival_from_history(self, X_hist: np.ndarray) -> SurvivalCurve:
        return cox_survival_curve(self, X_hist)

    def _history(self, conv: ConversationRecord, upto: int | None) -> np.ndarray:
        if self.schema is None:
            raise SchemaMismatch("fit carries no feature schema")
        X = self.schema.turn_matrix(conv)
        return X[: (conv.n_turns if upto is None else upto)]

    def predict_survival(self, conv: ConversationRecord, upto: int | None = None) -> SurvivalCurve:
        return cox_survival_curve(self, self._history(conv, upto))

    def predict_log_survival(self, conv: ConversationRecord, upto: int | None = None) -> np.ndarray:
        return -cox_cumulative_hazard(self, self._history(conv, upto))

    def risk_score(self, conv: ConversationRecord) -> float:
        """Linear predictor at the final observed turn."""
        return float(self._history(conv, None)[-1] @ self.coefficients)

    def to_json(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "penalized": self.penalized.tolist(),
            "active": self.active.tolist(),
            "ridge_strength": self.ridge_strength,
            "baseline_chf": self.baseline.chf.tolist(),
            "information": self.information.tolist(),
            "robust_covariance": self.robust_covariance.tolist(),
            "log_likelihood": self.log_likelihood,
            "convergence": {
                "converged": self.convergence.converged,
                "iterations": self.convergence.iterations,
                "gradient_norm": self.convergence.gradient_norm,
                "message": self.convergence.message,
            },
            "schema": None if self.schema is None else self.schema.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CoxFit":
        conv = obj["convergence"]
        return cls(
            names=list(obj["names"]),
            coefficients=np.array(obj["coefficients"], dtype=float),
            penalized=np.array(obj["penalized"], dtype=bool),
            active=np.array(obj["active"], dtype=bool),
            ridge_strength=float(obj["ridge_strength"]),
            baseline=CumulativeHazardCurve(None, np.array(obj["baseline_chf"])),
            information=np.array(obj["information"], dtype=float),
            robust_covariance=np.array(obj["robust_covariance"], dtype=float),
            log_likelihood=float(obj["log_likelihood"]),
            convergence=ConvergenceReport(conv["converged"], conv["iterations"], conv["gradient_norm"], conv["message"]),
            schema=None if obj.get("schema") is None else FeatureSchema.from_json(obj["schema"]),
        )


def _penalty_mask(names, penalize, active) -> np.ndarray:
    inter = np.array([":" in n for n in names])
    if penalize == "auto":
        mask = inter & active if np.any(inter & active) else np.ones(len(names), dtype=bool)
    elif penalize == "all":
        mask = np.ones(len(names), dtype=bool)
    elif penalize == "interactions":
        mask = inter
    else:
        unknown = set(penalize) - set(names)
        if unknown:
            raise InvalidInput(f"unknown penalized covariates {sorted(unknown)}")
        mask = np.array([n in set(penalize) for n in names])
    return mask


def _diverging(beta, ll, X, rs, pen, ridge) -> int | None:
    """Index of an unpenalized coefficient along which the likelihood keeps rising.

    Pushing a finite maximizer several units further always costs likelihood;
    under monotone likelihood (complete separation) it does not.
    """
    for j in np.argsort(-np.abs(beta)):
        if ridge > 0 and pen[j] > 0:
            continue
        if abs(beta[j]) > DIVERGENCE_BOUND:
            return int(j)
        probe = beta.copy()
        probe[j] += DIVERGENCE_PROBE * (1.0 if beta[j] >= 0 else -1.0)
        ll_probe = _objective(probe, X, rs, pen, ridge, order=0)[0]
        if ll_probe >= ll - 1e-6:
            return int(j)
    return None


def fit_cox(
    samples,
    schema: FeatureSchema | None = None,
    ridge_strength: float = 0.0,
    use_interactions: bool = True,
    penalize="auto",
    max_iter: int = 100,
    tol: float = 1e-8,
    horizon: int | None = None,
) -> CoxFit:
    """Maximize the penalized Breslow partial likelihood by Newton-Raphson.

    Parameters
    ----------
    samples : sequence of SurvivalSample or CountingProcess
    schema : FeatureSchema, optional
        Stored on the fit so it can featurize conversations at prediction.
    ridge_strength : float
        Ridge weight on the penalized block.
    use_interactions : bool
        When False, interaction columns are held at zero.
    penalize : "auto", "all", "interactions" or a list of names
        ``"auto"`` penalizes the interaction block if present, otherwise all
        coefficients.
    """
    cp = _as_cp(samples)
    if ridge_strength < 0:
        raise InvalidInput("ridge_strength must be non-negative")
    if not cp.event.any():
        raise InvalidInput("Cox fit needs at least one event")
    names = list(cp.names)
    p = len(names)
    active = np.ones(p, dtype=bool)
    if not use_interactions:
        active &= np.array([":" not in n for n in names])
    spread = cp.X.max(axis=0) - cp.X.min(axis=0) if cp.n_rows else np.zeros(p)
    constant = (spread < 1e-12) & active
    if constant.any():
        warnings.warn(
            f"dropping constant covariate(s): {[n for n, c in zip(names, constant) if c]}",
            ConvSurvWarning,
            stacklevel=2,
        )
        active &= ~constant
    pen_full = _penalty_mask(names, penalize, active).astype(float)

    X = cp.X[:, active]
    pen = pen_full[active]
    rs = _RiskSets(cp)
    beta = np.zeros(X.shape[1])
    ll, grad, info = _objective(beta, X, rs, pen, ridge_strength)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) < tol:
            converged = True
            it -= 1
            break
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(info, grad, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            raise ConvergenceError(
                "singular information matrix in Cox fit; add ridge_strength > 0 "
                "or remove collinear covariates"
            ) from None
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_c, grad_c, info_c = _objective(cand, X, rs, pen, ridge_strength)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            scale *= 0.5
        else:
            break
        beta, ll, grad, info = cand, ll_c, grad_c, info_c
        trace.append(ll)
    else:
        converged = np.max(np.abs(grad), initial=0.0) < tol

    message = ""
    full = np.zeros(p)
    full[active] = beta
    diverging = _diverging(beta, ll, X, rs, pen, ridge_strength)
    if diverging is not None:
        worst = names[int(np.nonzero(active)[0][diverging])]
        converged = False
        message = f"monotone likelihood: coefficient of {worst!r} diverges"
    elif not converged:
        message = f"no convergence after {max_iter} iterations"
    if message:
        warnings.warn(message, ConvSurvWarning, stacklevel=2)

    H = horizon or (schema.horizon if schema is not None else int(cp.stop.max()))
    info_full = np.zeros((p, p))
    info_full[np.ix_(active, active)] = info
    fit = CoxFit(
        names=names,
        coefficients=full,
        penalized=pen_full.astype(bool),
        active=active,
        ridge_strength=float(ridge_strength),
        baseline=breslow_baseline_from(full, cp, H),
        information=info_full,
        robust_covariance=np.zeros((p, p)),
        log_likelihood=float(ll),
        convergence=ConvergenceReport(converged, it, float(np.max(np.abs(grad), initial=0.0)), message, trace),
        schema=schema,
    )
    if len(cp.ids) > 1:
        fit.robust_covariance = _robust_covariance(fit, cp, cp.cluster)
    return fit


def breslow_baseline_from(beta: np.ndarray, cp: CountingProcess, horizon: int) -> CumulativeHazardCurve:
    eta = cp.X @ beta
    inc = np.zeros(horizon + 1)
    for t in range(1, horizon + 1):
        d = np.count_nonzero(cp.event & (cp.stop == t))
        if d == 0:
            continue
        at_risk = (cp.start < t) & (cp.stop >= t)
        inc[t] = d / np.exp(eta[at_risk]).sum()
    return CumulativeHazardCurve(np.arange(horizon + 1), np.cumsum(inc))


def breslow_baseline(fit: CoxFit, samples) -> CumulativeHazardCurve:
    """Breslow estimate ``dH0(t) = d_t / sum_{risk set} exp(eta)``."""
    cp = _as_cp(samples)
    return breslow_baseline_from(fit.coefficients, cp, fit.baseline.horizon)


def cox_cumulative_hazard(fit: CoxFit, covariate_history) -> np.ndarray:
    """``sum_{u<=t} dH0(u) exp(eta_u)`` on ``0..H``.

    Turns beyond the supplied history reuse the last observed covariates.
    """
    X = np.atleast_2d(np.asarray(covariate_history, dtype=float))
    if X.shape[1] != len(fit.names):
        raise SchemaMismatch(f"history has {X.shape[1]} covariates, fit expects {len(fit.names)}")
    H = fit.baseline.horizon
    if X.shape[0] < H:
        X = np.vstack([X, np.repeat(X[-1:], H - X.shape[0], axis=0)])
    eta = X[:H] @ fit.coefficients
    dH = np.diff(fit.baseline.chf)
    return np.concatenate([[0.0], np.cumsum(dH * np.exp(eta))])


def cox_survival_curve(fit: CoxFit, covariate_history) -> SurvivalCurve:
    """``S(t) = prod_{u<=t} exp(-dH0(u) exp(eta_u))`` with carry-forward covariates."""
    return SurvivalCurve(None, np.exp(-cox_cumulative_hazard(fit, covariate_history)))


def hazard_ratio(fit: CoxFit, covariate_name: str) -> float:
    """``exp(beta)`` per standardized unit of the named covariate."""
    return float(np.exp(fit.coefficient(covariate_name)))


def score_residuals(fit: CoxFit, cp: CountingProcess) -> np.ndarray:
    """Per-row score residuals ``(delta_i - exp(eta_i) dH0(t_i)) (x_i - xbar(t_i))``.

    Each row belongs only to the risk set of its own interval end, which
    collapses the usual sum over event times to a single term.
    """
    beta = fit.coefficients
    eta = cp.X @ beta
    w = np.exp(eta)
    resid = np.zeros_like(cp.X)
    for t in np.unique(cp.stop):
        rows = np.nonzero(cp.stop == t)[0]
        ww = w[rows]
        xbar = ww @ cp.X[rows] / ww.sum()
        dh = np.count_nonzero(cp.event[rows]) / ww.sum()
        mart = cp.event[rows].astype(float) - ww * dh
        resid[rows] = mart[:, None] * (cp.X[rows] - xbar)
    resid[:, ~fit.active] = 0.0
    return resid


def _robust_covariance(fit: CoxFit, cp: CountingProcess, clusters) -> np.ndarray:
    clusters = np.asarray(clusters)
    _, inverse = np.unique(clusters, return_inverse=True)
    if inverse.max(initial=0) < 1:
        raise InvalidInput("cluster-robust variance needs at least two clusters")
    resid = score_residuals(fit, cp)
    summed = np.zeros((inverse.max() + 1, resid.shape[1]))
    np.add.at(summed, inverse, resid)
    meat = summed.T @ summed
    act = fit.active
    bread = np.zeros_like(meat)
    bread[np.ix_(act, act)] = linalg.inv(fit.information[np.ix_(act, act)])
    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def cluster_robust_se(fit: CoxFit, samples, clusters=None) -> dict[str, float]:
    """Sandwich standard errors with scores summed per conversation.

    ``clusters`` overrides the grouping (one label per row).
    """
    cp = _as_cp(samples)
    labels = cp.cluster if clusters is None else clusters
    if len(np.unique(labels)) < 2:
        raise InvalidInput("cluster-robust standard errors need more than one conversation")
    cov = _robust_covariance(fit, cp, labels)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return dict(zip(fit.names, se.tolist()))


def _feature_group(name: str) -> str:
    if ":" in name:
        return "interactions"
    return name.split("=", 1)[0]


@dataclass
class SchoenfeldResult:
    covariates: dict[str, tuple[float, float]]  # name -> (correlation, p-value)
    groups: dict[str, float]  # group -> Bonferroni-min p-value


def schoenfeld_residuals(fit: CoxFit, cp: CountingProcess) -> tuple[np.ndarray, np.ndarray]:
    """Event times and residuals ``x_k - xbar(t_k)`` for every event row."""
    eta = cp.X @ fit.coefficients
    w = np.exp(eta - eta.max())
    times, resid = [], []
    for t in np.unique(cp.stop[cp.event]):
        R = (cp.start < t) & (cp.stop >= t)
        xbar = w[R] @ cp.X[R] / w[R].sum()
        for k in np.nonzero(cp.event & (cp.stop == t))[0]:
            times.append(t)
            resid.append(cp.X[k] - xbar)
    r = np.array(resid)
    r[:, ~fit.active] = 0.0
    return np.array(times, dtype=float), r


def schoenfeld_test(fit: CoxFit, samples) -> SchoenfeldResult:
    """Grambsch-Therneau score test of each coefficient against identity time.

    Scaled residuals ``d * r V`` (``V`` the inverse information) are
    regressed on centred event time; the per-covariate statistic is
    ``(g' r*_j)^2 / (d V_jj sum g^2)`` on one degree of freedom.
    """
    cp = _as_cp(samples)
    times, r = schoenfeld_residuals(fit, cp)
    if np.unique(times).size < 3:
        raise InvalidInput("Schoenfeld test needs at least three distinct event times")
    act = fit.active
    V = np.zeros_like(fit.information)
    V[np.ix_(act, act)] = linalg.inv(fit.information[np.ix_(act, act)])
    d = times.size
    g = times - times.mean()
    scaled = d * (r @ V)
    num = (g @ scaled) ** 2
    denom = np.diag(V) * d * np.sum(g**2)
    out = {}
    for j, name in enumerate(fit.names):
        if not act[j] or denom[j] <= 0 or np.allclose(r[:, j], 0.0, atol=1e-12):
            out[name] = (0.0, 1.0)
            continue
        stat = num[j] / denom[j]
        sc = scaled[:, j] + fit.coefficients[j]
        corr = float(np.corrcoef(g, sc)[0, 1]) if np.std(sc) > 0 else 0.0
        out[name] = (corr, float(stats.chi2.sf(stat, 1)))
    groups: dict[str, list[float]] = {}
    for name, (_, pval) in out.items():
        groups.setdefault(_feature_group(name), []).append(pval)
    agg = {g_: min(1.0, len(ps) * min(ps)) for g_, ps in groups.items()}
    return SchoenfeldResult(out, agg)


def fit_cox_model(
    train: Sequence[ConversationRecord],
    ridge_strength: float = 1e-3,
    interactions: bool = False,
    schema: FeatureSchema | None = None,
) -> CoxFit:
    """Build a turn-level schema on ``train`` and fit the Cox model."""
    if schema is None:
        schema = FeatureSchema.fit(train, level="turn", interactions="nonref" if interactions else None)
    cp = counting_process(train, schema)
    return fit_cox(cp, schema, ridge_strength=ridge_strength, use_interactions=interactions)
