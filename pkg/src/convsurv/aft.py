"""Accelerated failure time regression: ``log T = mu + sigma * eps``.

``eps`` is standard minimum extreme value (Weibull), standard normal
(log-normal) or standard logistic (log-logistic). For Weibull and
log-logistic the shape is ``k = 1/sigma`` and the scale ``lambda = exp(mu)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .data import ConversationRecord, outcome_arrays
from .errors import ConvSurvWarning, InvalidInput, SchemaMismatch
from .features import FeatureSchema
from .nonparam import SurvivalCurve

FAMILIES = ("weibull", "lognormal", "loglogistic")
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise InvalidInput(f"unknown AFT family {family!r}; expected one of {FAMILIES}")


def _log_terms(family: str, w: np.ndarray):
    """log density and log survival of ``eps`` at ``w`` plus their w-derivatives."""
    if family == "weibull":
        ew = np.exp(np.minimum(w, 700.0))
        return w - ew, -ew, 1.0 - ew, -ew
    if family == "lognormal":
        logS = special.log_ndtr(-w)
        mills = np.exp(-0.5 * w**2 - _LOG_SQRT_2PI - logS)
        return -0.5 * w**2 - _LOG_SQRT_2PI, logS, -w, -mills
    sig = special.expit(w)
    soft = np.logaddexp(0.0, w)
    return w - 2.0 * soft, -soft, 1.0 - 2.0 * sig, -sig


def aft_survival(family: str, mu, sigma, t):
    _check_family(family)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise InvalidInput("AFT survival needs t > 0")
    if np.any(np.asarray(sigma) <= 0):
        raise InvalidInput("sigma must be positive")
    w = (np.log(t) - mu) / sigma
    out = np.exp(_log_terms(family, w)[1])
    return float(out) if np.ndim(out) == 0 else out


def aft_log_density(family: str, mu, sigma, t):
    _check_family(family)
    t = np.asarray(t, dtype=float)
    w = (np.log(t) - mu) / sigma
    out = _log_terms(family, w)[0] - np.log(sigma) - np.log(t)
    return float(out) if np.ndim(out) == 0 else out


def aft_hazard(family: str, mu, sigma, t):
    """Hazard ``f(t) / S(t)``; Weibull and log-logistic use their closed forms."""
    _check_family(family)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise InvalidInput("AFT hazard needs t > 0")
    if np.any(np.asarray(sigma) <= 0):
        raise InvalidInput("sigma must be positive")
    k = 1.0 / sigma
    lam = np.exp(mu)
    if family == "weibull":
        out = (k / lam) * (t / lam) ** (k - 1.0)
    elif family == "loglogistic":
        r = (t / lam) ** k
        out = (k / lam) * (t / lam) ** (k - 1.0) / (1.0 + r)
    else:
        w = (np.log(t) - mu) / sigma
        logS = special.log_ndtr(-w)
        if np.any(np.isneginf(logS)):
            bad = np.atleast_1d(t)[np.atleast_1d(np.isneginf(logS))]
            raise InvalidInput(f"survival underflows at t={bad.tolist()}")
        out = np.exp(-0.5 * w**2 - _LOG_SQRT_2PI - np.log(sigma) - np.log(t) - logS)
    return float(out) if np.ndim(out) == 0 else out


def aft_median_from(family: str, mu, sigma):
    _check_family(family)
    if family == "weibull":
        return np.exp(mu) * np.log(2.0) ** sigma
    return np.exp(mu)


# --------------------------------------------------------------------------
# likelihood


def censored_log_likelihood(
    family: str,
    params,
    X: np.ndarray,
    times,
    events,
    ridge_strength: float = 0.0,
    penalized=None,
    gradient: bool = False,
):
    """Right-censored log-likelihood minus the ridge term.

    ``params`` is ``(theta..., log sigma)`` and ``X`` must already contain the
    intercept column. ``penalized`` is a 0/1 weight per ``theta`` entry.
    """
    _check_family(family)
    params = np.asarray(params, dtype=float)
    theta, log_sigma = params[:-1], params[-1]
    sigma = np.exp(log_sigma)
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInput("sigma must be positive")
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if np.any(times <= 0):
        raise InvalidInput("event times must be positive")
    pen = np.zeros(theta.size) if penalized is None else np.asarray(penalized, dtype=float)
    logt = np.log(times)
    mu = X @ theta
    w = (logt - mu) / sigma
    logf, logS, dlogf, dlogS = _log_terms(family, w)
    ll = np.sum(np.where(events, logf - log_sigma - logt, logS))
    ll -= 0.5 * ridge_strength * np.sum(pen * theta**2)
    if not gradient:
        return float(ll)
    psi = np.where(events, dlogf, dlogS)
    g_theta = -(X.T @ psi) / sigma - ridge_strength * pen * theta
    g_ls = np.sum(-psi * w - events)
    return float(ll), np.concatenate([g_theta, [g_ls]])


@dataclass
class AFTConvergence:
    converged: bool
    iterations: int
    gradient_norm: float
    message: str = ""
    trace: list[float] = field(default_factory=list)


@dataclass(eq=False)
class AFTFit:
    family: str
    names: list[str]  # "intercept" first
    coefficients: np.ndarray
    log_scale: float
    ridge_strength: float
    penalized: np.ndarray
    log_likelihood: float
    convergence: AFTConvergence
    schema: FeatureSchema | None = None
    kind = "aft"

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_scale))

    @property
    def n_covariates(self) -> int:
        return len(self.names) - 1

    @property
    def interaction_coefficients(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for name, b in zip(self.names, self.coefficients):
            if ":" in name:
                drift, model = name.split(":", 1)
                out.setdefault(model.split("=", 1)[1], {})[drift] = float(b)
        return out

    def coefficient(self, name: str) -> float:
        try:
            return float(self.coefficients[self.names.index(name)])
        except ValueError:
            raise InvalidInput(f"unknown covariate {name!r}") from None

    def mu(self, z) -> float | np.ndarray:
        """Location for a covariate vector (or matrix) without intercept."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != len(self.names) - 1:
            raise SchemaMismatch(f"expected {len(self.names) - 1} covariates, got {z.shape[-1]}")
        return self.coefficients[0] + z @ self.coefficients[1:]

    def survival_from_summary(self, z, horizon: int | None = None) -> SurvivalCurve:
        return aft_survival_curve(self, z, horizon)

    def _z(self, conv: ConversationRecord, upto: int | None) -> np.ndarray:
        if self.schema is None:
            raise SchemaMismatch("fit carries no feature schema")
        return self.schema.summary_vector(conv, upto)

    def predict_survival(self, conv: ConversationRecord, upto: int | None = None) -> SurvivalCurve:
        return aft_survival_curve(self, self._z(conv, upto))

    def predict_log_survival(self, conv: ConversationRecord, upto: int | None = None) -> np.ndarray:
        """``log S(t)`` on ``0..H``, finite where the curve itself underflows."""
        H = self.schema.horizon
        w = (np.log(np.arange(1, H + 1)) - float(self.mu(self._z(conv, upto)))) / self.sigma
        return np.concatenate([[0.0], _log_terms(self.family, w)[1]])

    def risk_score(self, conv: ConversationRecord) -> float:
        """Negated location: larger means earlier expected failure."""
        return -float(self.mu(self._z(conv, None)))

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "log_scale": self.log_scale,
            "ridge_strength": self.ridge_strength,
            "penalized": self.penalized.tolist(),
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
    def from_json(cls, obj: dict) -> "AFTFit":
        c = obj["convergence"]
        return cls(
            family=obj["family"],
            names=list(obj["names"]),
            coefficients=np.array(obj["coefficients"], dtype=float),
            log_scale=float(obj["log_scale"]),
            ridge_strength=float(obj["ridge_strength"]),
            penalized=np.array(obj["penalized"], dtype=bool),
            log_likelihood=float(obj["log_likelihood"]),
            convergence=AFTConvergence(c["converged"], c["iterations"], c["gradient_norm"], c["message"]),
            schema=None if obj.get("schema") is None else FeatureSchema.from_json(obj["schema"]),
        )


def _newton_polish(f_and_g, x, tol, max_steps=20):
    """Finish a quasi-Newton run with Newton steps on a finite-difference Hessian."""
    val, g = f_and_g(x)
    for _ in range(max_steps):
        if np.max(np.abs(g)) < tol:
            break
        n = x.size
        Hm = np.empty((n, n))
        for j in range(n):
            h = 1e-5 * max(1.0, abs(x[j]))
            e = np.zeros(n)
            e[j] = h
            Hm[:, j] = (f_and_g(x + e)[1] - f_and_g(x - e)[1]) / (2 * h)
        Hm = 0.5 * (Hm + Hm.T)
        try:
            step = np.linalg.solve(Hm, -g)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(30):
            cand = x + scale * step
            v_c, g_c = f_and_g(cand)
            if np.isfinite(v_c) and v_c <= val + 1e-12 * max(1.0, abs(val)):
                break
            scale *= 0.5
        else:
            break
        x, val, g = cand, v_c, g_c
    return x, val, g


def fit_aft_matrix(
    X: np.ndarray,
    times,
    events,
    family: str = "weibull",
    ridge_strength: float = 0.0,
    penalized=None,
    names: Sequence[str] | None = None,
    fixed_log_scale: float | None = None,
    max_iter: int = 200,
    tol: float = 1e-8,
    schema: FeatureSchema | None = None,
) -> AFTFit:
    """Maximum-likelihood AFT fit on a covariate matrix (no intercept column).

    BFGS with line search, followed by Newton polishing so that the gradient
    max-norm reaches ``tol`` where the problem allows it.
    """
    _check_family(family)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not events.any():
        raise InvalidInput("all observations censored: scale is not identified")
    n, p = X.shape
    names = ["intercept"] + (list(names) if names is not None else [f"x{j}" for j in range(p)])
    Xi = np.column_stack([np.ones(n), X])
    pen = np.zeros(p + 1)
    if penalized is not None:
        pen[1:] = np.asarray(penalized, dtype=float)

    x0 = np.zeros(p + 2)
    x0[0] = np.log(times.mean())
    trace: list[float] = []

    if fixed_log_scale is None:
        def f_and_g(x):
            ll, g = censored_log_likelihood(family, x, Xi, times, events, ridge_strength, pen, gradient=True)
            return -ll, -g
    else:
        x0 = x0[:-1]

        def f_and_g(x):
            full = np.concatenate([x, [fixed_log_scale]])
            ll, g = censored_log_likelihood(family, full, Xi, times, events, ridge_strength, pen, gradient=True)
            return -ll, -g[:-1]

    def record(xk):
        trace.append(-f_and_g(xk)[0])

    res = optimize.minimize(
        f_and_g, x0, jac=True, method="BFGS", callback=record,
        options={"gtol": tol, "maxiter": max_iter, "norm": np.inf},
    )
    x, val, g = _newton_polish(f_and_g, res.x, tol)
    gnorm = float(np.max(np.abs(g)))
    # 1e-6 floor: summed gradients over thousands of rows stall near 1e-8 in float64
    converged = gnorm < max(tol, 1e-6)
    message = "" if converged else f"gradient max-norm {gnorm:.3g} after {res.nit} iterations: {res.message}"
    if not converged:
        warnings.warn(f"AFT fit did not converge: {message}", ConvSurvWarning, stacklevel=2)
    if fixed_log_scale is not None:
        x = np.concatenate([x, [fixed_log_scale]])
    return AFTFit(
        family=family,
        names=names,
        coefficients=x[:-1],
        log_scale=float(x[-1]),
        ridge_strength=float(ridge_strength),
        penalized=pen[1:].astype(bool),
        log_likelihood=-float(val),
        convergence=AFTConvergence(converged, int(res.nit), gnorm, message, trace),
        schema=schema,
    )


def fit_aft(
    dataset: Sequence[ConversationRecord],
    family: str = "weibull",
    ridge_strength: float = 1e-3,
    use_interactions: bool = False,
    schema: FeatureSchema | None = None,
    fixed_log_scale: float | None = None,
) -> AFTFit:
    """Fit an AFT model on conversation-level summaries over turns ``1..T``.

    The ridge acts on the interaction block when interactions are used and on
    all non-intercept coefficients otherwise.
    """
    if schema is None:
        schema = FeatureSchema.fit(dataset, level="summary", interactions="nonref" if use_interactions else None)
    Z = schema.summary_matrix(dataset)
    times, events = outcome_arrays(dataset)
    inter = schema.is_interaction()
    pen = inter if inter.any() else np.ones(len(schema.names), dtype=bool)
    return fit_aft_matrix(
        Z, times, events, family, ridge_strength, pen, schema.names,
        fixed_log_scale=fixed_log_scale, schema=schema,
    )


def acceleration_factor(fit: AFTFit, covariate_name: str) -> float:
    """``exp(theta)`` per standardized unit; > 1 stretches survival time."""
    return float(np.exp(fit.coefficient(covariate_name)))


def aft_survival_curve(fit: AFTFit, z, horizon: int | None = None) -> SurvivalCurve:
    if horizon is None:
        horizon = fit.schema.horizon if fit.schema is not None else 8
    mu = float(fit.mu(z))
    grid = np.arange(1, horizon + 1, dtype=float)
    s = aft_survival(fit.family, mu, fit.sigma, grid)
    return SurvivalCurve(None, np.concatenate([[1.0], np.atleast_1d(s)]))


def aft_median(fit: AFTFit, z) -> float:
    """Median survival: Weibull ``lambda (ln 2)^(1/k)``, otherwise ``exp(mu)``."""
    return float(aft_median_from(fit.family, float(fit.mu(z)), fit.sigma))
