"""Synthetic conversations with known survival mechanics.

Each conversation gets a latent drift level ``u ~ N(0, 1)``. Its per-turn
prompt-to-prompt drift is ``drift_mean + drift_spread * u`` plus turn noise,
and embeddings are synthesized so that consecutive prompts sit exactly at the
prescribed cosine distance. Event times come from either an AFT process
(``mu = intercept + sum(coef * latent)``) or a discrete-time hazard driven
by the current turn's drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .aft import FAMILIES
from .data import ConversationRecord, TurnRecord
from .errors import InvalidInput

MODELS = (
    "claude-3.5-sonnet", "deepseek-r1", "gemini-2.5", "gpt-4o", "gpt-oss-120b",
    "llama-3.3-70b", "llama-4-maverick", "mistral-large", "qwen-3",
)
SUBJECTS = (
    "Business_Economics", "General_Knowledge", "Humanities", "Law_Legal",
    "Medical_Health", "STEM", "Social_Sciences",
)
DIFFICULTIES = ("College", "Elementary", "High School", "Professional")
MAX_DRIFT = 1.9


@dataclass(frozen=True)
class GeneratorSpec:
    family: str = "weibull"  # weibull | lognormal | loglogistic | cox-discrete
    n: int = 500
    horizon: int = 8
    intercept: float = 1.5
    coefficients: dict = field(default_factory=lambda: {"drift": -0.5})
    sigma: float = 0.5
    censoring_rate: float = 0.0
    dim: int = 8
    drift_mean: float = 0.3
    drift_spread: float = 0.12
    drift_noise: float = 0.05
    spike: bool = False
    spike_size: float = 0.6
    spike_lead: int = 2
    spike_false_rate: float = 0.0
    flip: float = 0.0
    models: tuple = MODELS
    subjects: tuple = SUBJECTS
    difficulties: tuple = DIFFICULTIES
    seed: int = 0

    def validate(self) -> None:
        if self.family not in FAMILIES + ("cox-discrete",):
            raise InvalidInput(f"unknown generator family {self.family!r}")
        if self.dim < 2:
            raise InvalidInput("embedding dimension must be at least 2")
        for name in ("censoring_rate", "spike_false_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInput(f"{name} must lie in [0, 1]")
        if self.n < 1 or self.horizon < 1:
            raise InvalidInput("n and horizon must be positive")
        if self.sigma <= 0:
            raise InvalidInput("sigma must be positive")
        if not 0.0 <= self.drift_mean <= 2.0:
            raise InvalidInput(f"drift_mean {self.drift_mean} outside the cosine-distance range [0, 2]")
        if self.spike and self.drift_mean + self.spike_size > 2.0:
            raise InvalidInput("spike drift exceeds the cosine-distance maximum of 2")
        if min(len(self.models), len(self.subjects), len(self.difficulties)) < 1:
            raise InvalidInput("need at least one level per categorical covariate")


@dataclass
class SyntheticData:
    conversations: list[ConversationRecord]
    prescribed_p2p: list[np.ndarray]  # per conversation, turns 1..T (turn 1 is 0)
    latent: np.ndarray  # drift level u per conversation
    mu: np.ndarray  # AFT location (nan for the discrete family)


def sample_aft_times(family: str, mu, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Continuous event times ``exp(mu + sigma * eps)``."""
    mu = np.asarray(mu, dtype=float)
    if family == "weibull":
        eps = np.log(rng.exponential(size=mu.shape))
    elif family == "lognormal":
        eps = rng.normal(size=mu.shape)
    elif family == "loglogistic":
        eps = rng.logistic(size=mu.shape)
    else:
        raise InvalidInput(f"unknown AFT family {family!r}")
    return np.exp(mu + sigma * eps)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def embed_path(p2p: np.ndarray, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Unit prompt embeddings realizing ``p2p`` exactly, plus context embeddings.

    Each step rotates the previous prompt by ``arccos(1 - d)`` toward a random
    direction orthogonal to it. The context at turn ``t`` is the normalized
    sum of prompts ``1..t``.
    """
    n = p2p.size
    E = np.empty((n, dim))
    E[0] = _unit(rng.normal(size=dim))
    for t in range(1, n):
        u = E[t - 1]
        g = rng.normal(size=dim)
        v = _unit(g - (g @ u) * u)
        c = 1.0 - p2p[t]
        s = np.sqrt(max(0.0, 1.0 - c * c))
        E[t] = _unit(c * u + s * v)
    C = np.cumsum(E, axis=0)
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    C = np.where(norms > 1e-9, C / np.where(norms > 1e-9, norms, 1.0), E)
    return E, C


def _latent_mu(spec: GeneratorSpec, u: float, model: str) -> float:
    mu = spec.intercept
    for name, coef in spec.coefficients.items():
        if name == "drift":
            mu += coef * u
        elif name == f"model={model}":
            mu += coef
    return mu


def _drift_path(spec: GeneratorSpec, z: float, rng: np.random.Generator) -> np.ndarray:
    path = np.zeros(spec.horizon)
    if spec.horizon > 1:
        path[1:] = np.clip(z + spec.drift_noise * rng.normal(size=spec.horizon - 1), 0.0, MAX_DRIFT)
    return path


def _discrete_time(spec: GeneratorSpec, path: np.ndarray, rng: np.random.Generator) -> int:
    """First turn with an event under a cloglog discrete hazard, or horizon + 1."""
    scale = np.hypot(spec.drift_spread, spec.drift_noise) or 1.0
    base = spec.coefficients.get("drift", 0.0)
    for t in range(1, spec.horizon + 1):
        x = (path[t - 1] - spec.drift_mean) / scale
        b = base + (spec.flip if t <= spec.horizon / 2 else -spec.flip)
        h = 1.0 - np.exp(-np.exp(spec.intercept + b * x))
        if rng.random() < h:
            return t
    return spec.horizon + 1


def generate_with_truth(spec: GeneratorSpec) -> SyntheticData:
    spec.validate()
    H = spec.horizon
    convs, prescribed, latent, mus = [], [], [], []
    # one child seed per conversation so the seed space partitions cleanly
    for i, child in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.n)):
        rng = np.random.default_rng(child)
        model = spec.models[rng.integers(len(spec.models))]
        subject = spec.subjects[rng.integers(len(spec.subjects))]
        difficulty = spec.difficulties[rng.integers(len(spec.difficulties))]
        u = float(rng.normal())
        z = float(np.clip(spec.drift_mean + spec.drift_spread * u, 0.0, MAX_DRIFT))
        path = _drift_path(spec, z, rng)
        if spec.family == "cox-discrete":
            mu = np.nan
            T = _discrete_time(spec, path, rng)
        else:
            mu = _latent_mu(spec, u, model)
            T = int(np.ceil(sample_aft_times(spec.family, mu, spec.sigma, rng)))
            T = max(T, 1)
        event = T <= H
        T = min(T, H)
        if spec.censoring_rate > 0 and H > 1 and rng.random() < spec.censoring_rate:
            C = int(rng.integers(1, H))
            if C < T or (C == T and not event):
                T, event = C, False
        if spec.spike:
            if event and T - spec.spike_lead >= 2:
                path[T - spec.spike_lead - 1] = min(z + spec.spike_size, MAX_DRIFT)
            elif not event and T >= 2 and rng.random() < spec.spike_false_rate:
                s = int(rng.integers(2, T + 1))
                path[s - 1] = min(z + spec.spike_size, MAX_DRIFT)
        p2p = path[:T].copy()
        E, C = embed_path(p2p, spec.dim, rng)
        lengths = 5 + rng.poisson(20, size=T)
        turns = tuple(
            TurnRecord(
                turn_index=t + 1,
                prompt_embedding=E[t],
                context_embedding=C[t],
                prompt_length=int(lengths[t]),
                consistent=not (event and t + 1 == T),
            )
            for t in range(T)
        )
        convs.append(ConversationRecord(f"conv-{spec.seed}-{i:05d}", model, subject, difficulty, turns, H))
        prescribed.append(p2p)
        latent.append(u)
        mus.append(mu)
    return SyntheticData(convs, prescribed, np.array(latent), np.array(mus))


def generate(spec: GeneratorSpec) -> list[ConversationRecord]:
    return generate_with_truth(spec).conversations


def generate_ph_violation(spec: GeneratorSpec) -> list[ConversationRecord]:
    """Discrete-hazard data whose drift coefficient flips sign at mid-horizon."""
    return generate(replace(spec, family="cox-discrete"))


def ph_violation_spec(n: int = 500, flip: float = 1.0, seed: int = 0, **overrides) -> GeneratorSpec:
    """Defaults for Schoenfeld power checks: one model/subject/difficulty and
    near-independent per-turn drift so the drift effect is identified."""
    params = dict(
        family="cox-discrete", n=n, flip=flip, seed=seed, intercept=-2.0,
        coefficients={"drift": 0.0}, drift_mean=0.3, drift_spread=0.02, drift_noise=0.12,
        models=("m0",), subjects=("STEM",), difficulties=("College",),
    )
    params.update(overrides)
    return GeneratorSpec(**params)
