"""Semantic drift covariates, feature schemas and counting-process expansion.

Three drift channels are derived from the prompt and context embeddings:

* prompt-to-prompt (``p2p``): cosine distance between consecutive prompts;
* context-to-prompt (``c2p``): cosine distance between the context seen up
  to the previous turn and the new prompt;
* cumulative (``cum``): running sum of ``p2p``.

All three are zero at turn 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ConversationRecord
from .errors import InvalidInput, SchemaMismatch

DRIFT_NAMES = ("p2p", "c2p", "cum")
TURN_CONTINUOUS = ("p2p", "c2p", "cum", "length")
SUMMARY_CONTINUOUS = ("p2p_mean", "c2p_mean", "cum_final", "length_mean")
SUMMARY_DRIFT = ("p2p_mean", "c2p_mean", "cum_final")
GROUPS = (
    ("subject", "subject_cluster"),
    ("difficulty", "difficulty"),
    ("model", "model_id"),
)


@dataclass(frozen=True)
class DriftTriple:
    p2p: float
    c2p: float
    cumulative: float


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)`` clamped to ``[0, 2]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInput(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidInput("cosine distance undefined for a zero-norm vector")
    return float(min(2.0, max(0.0, 1.0 - np.dot(a, b) / (na * nb))))


def drift_table(prompts: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    n = prompts.shape[0]
    out = np.zeros((n, 3))
    if n > 1:
        pn = prompts / np.linalg.norm(prompts, axis=1, keepdims=True)
        cn = contexts / np.linalg.norm(contexts, axis=1, keepdims=True)
        out[1:, 0] = np.clip(1.0 - np.einsum("ij,ij->i", pn[:-1], pn[1:]), 0.0, 2.0)
        out[1:, 1] = np.clip(1.0 - np.einsum("ij,ij->i", cn[:-1], pn[1:]), 0.0, 2.0)
        out[:, 2] = np.cumsum(out[:, 0])
    return out


def _check_turn(conv: ConversationRecord, t: int) -> None:
    if not 1 <= t <= conv.n_turns:
        raise InvalidInput(
            f"turn {t} out of range 1..{conv.n_turns} for {conv.conversation_id!r}"
        )


def p2p_drift(conv: ConversationRecord, t: int) -> float:
    _check_turn(conv, t)
    if t == 1:
        return 0.0
    return cosine_distance(conv.turns[t - 2].prompt_embedding, conv.turns[t - 1].prompt_embedding)


def c2p_drift(conv: ConversationRecord, t: int) -> float:
    # no earlier context exists at turn 1
    _check_turn(conv, t)
    if t == 1:
        return 0.0
    return cosine_distance(conv.turns[t - 2].context_embedding, conv.turns[t - 1].prompt_embedding)


def cumulative_drift(conv: ConversationRecord, t: int) -> float:
    _check_turn(conv, t)
    return float(sum(p2p_drift(conv, s) for s in range(2, t + 1)))


def drift_triple(conv: ConversationRecord, t: int) -> DriftTriple:
    _check_turn(conv, t)
    row = conv.drift[t - 1]
    return DriftTriple(float(row[0]), float(row[1]), float(row[2]))


def conversation_summaries(conv: ConversationRecord, upto_t: int | None = None) -> dict[str, float]:
    """Conversation-level aggregates over turns ``1..upto_t``.

    Drift means skip turn 1, whose drift values are zero by convention,
    unless turn 1 is the only turn. ``cum_final`` is the cumulative drift
    at ``upto_t``.
    """
    if upto_t is None:
        upto_t = conv.n_turns
    if upto_t < 1:
        raise InvalidInput("upto_t must be at least 1")
    _check_turn(conv, upto_t)
    drift = conv.drift[:upto_t]
    body = drift[1:] if upto_t > 1 else drift
    return {
        "p2p_mean": float(body[:, 0].mean()),
        "c2p_mean": float(body[:, 1].mean()),
        "cum_final": float(drift[-1, 2]),
        "length_mean": float(conv.lengths[:upto_t].mean()),
    }


def _summary_raw(conv: ConversationRecord, upto_t: int) -> np.ndarray:
    s = conversation_summaries(conv, upto_t)
    return np.array([s[name] for name in SUMMARY_CONTINUOUS])


def _turn_raw(conv: ConversationRecord) -> np.ndarray:
    return np.column_stack([conv.drift, conv.lengths])


@dataclass
class FeatureSchema:
    """Column layout and standardization for one covariate design.

    ``level`` is ``"turn"`` for per-turn covariate vectors (counting-process
    rows) and ``"summary"`` for conversation-level aggregates. Each one-hot
    group lists its levels with the reference level first. ``interactions``
    is ``None``, ``"nonref"`` (drift x each non-reference model) or ``"all"``
    (drift x every model).
    """

    level: str
    continuous: list[str]
    means: list[float]
    sds: list[float]
    groups: dict[str, list[str]]
    interactions: str | None = None
    dim: int | None = None
    horizon: int = 8
    names: list[str] = field(init=False)

    def __post_init__(self):
        if self.level not in ("turn", "summary"):
            raise InvalidInput(f"unknown schema level {self.level!r}")
        if self.interactions not in (None, "nonref", "all"):
            raise InvalidInput(f"unknown interaction scheme {self.interactions!r}")
        names = list(self.continuous)
        for group, levels in self.groups.items():
            names += [f"{group}={lvl}" for lvl in levels[1:]]
        for d in self.drift_names:
            names += [f"{d}:model={m}" for m in self.interaction_models]
        self.names = names
        self._index = {g: {lvl: i for i, lvl in enumerate(levels)} for g, levels in self.groups.items()}

    @property
    def drift_names(self) -> tuple[str, ...]:
        if self.interactions is None:
            return ()
        return DRIFT_NAMES if self.level == "turn" else SUMMARY_DRIFT

    @property
    def interaction_models(self) -> list[str]:
        if self.interactions is None:
            return []
        models = self.groups.get("model", [])
        return list(models) if self.interactions == "all" else list(models[1:])

    @property
    def n_features(self) -> int:
        return len(self.names)

    def is_interaction(self) -> np.ndarray:
        return np.array([":" in n for n in self.names])

    @classmethod
    def fit(
        cls,
        train: Sequence[ConversationRecord],
        level: str = "turn",
        interactions: str | None = None,
    ) -> "FeatureSchema":
        """Fit levels and standardization statistics on a training pool."""
        if not train:
            raise InvalidInput("cannot fit a schema on an empty training pool")
        if level == "turn":
            raw = np.vstack([_turn_raw(c) for c in train])
            continuous = list(TURN_CONTINUOUS)
        else:
            raw = np.vstack([_summary_raw(c, c.n_turns) for c in train])
            continuous = list(SUMMARY_CONTINUOUS)
        means = raw.mean(axis=0)
        sds = raw.std(axis=0)
        # constant columns: leave scale alone
        sds = np.where(sds > 1e-12, sds, 1.0)
        groups = {
            g: sorted({getattr(c, attr) for c in train}) for g, attr in GROUPS
        }
        horizons = {c.horizon for c in train}
        if len(horizons) != 1:
            raise InvalidInput(f"mixed horizons in one dataset: {sorted(horizons)}")
        return cls(
            level=level,
            continuous=continuous,
            means=[float(x) for x in means],
            sds=[float(x) for x in sds],
            groups=groups,
            interactions=interactions,
            dim=train[0].dim,
            horizon=horizons.pop(),
        )

    def _check(self, conv: ConversationRecord) -> None:
        if self.dim is not None and conv.dim != self.dim:
            raise SchemaMismatch(
                f"{conv.conversation_id}: embedding dimension {conv.dim} does not match "
                f"schema dimension {self.dim}"
            )
        if conv.horizon != self.horizon:
            raise SchemaMismatch(
                f"{conv.conversation_id}: horizon {conv.horizon} does not match schema horizon {self.horizon}"
            )

    def _categorical(self, conv: ConversationRecord) -> tuple[np.ndarray, int | None]:
        parts = []
        model_pos = None
        for group, attr in GROUPS:
            if group not in self.groups:
                continue
            value = getattr(conv, attr)
            try:
                pos = self._index[group][value]
            except KeyError:
                raise SchemaMismatch(
                    f"{conv.conversation_id}: unknown {group} level {value!r}"
                ) from None
            onehot = np.zeros(len(self.groups[group]) - 1)
            if pos > 0:
                onehot[pos - 1] = 1.0
            parts.append(onehot)
            if group == "model":
                model_pos = pos
        return (np.concatenate(parts) if parts else np.zeros(0)), model_pos

    def _design(self, raw: np.ndarray, conv: ConversationRecord) -> np.ndarray:
        """Rows of raw continuous values -> full standardized design rows."""
        std = (raw - np.asarray(self.means)) / np.asarray(self.sds)
        cat, model_pos = self._categorical(conv)
        blocks = [std, np.broadcast_to(cat, (raw.shape[0], cat.size))]
        if self.interactions is not None:
            models = self.interaction_models
            offset = 0 if self.interactions == "all" else 1
            ind = np.zeros(len(models))
            k = model_pos - offset
            if 0 <= k < len(models):
                ind[k] = 1.0
            drift = std[:, : len(self.drift_names)]
            # drift-major ordering matches ``names``
            blocks.append((drift[:, :, None] * ind[None, None, :]).reshape(raw.shape[0], -1))
        return np.hstack(blocks)

    def turn_matrix(self, conv: ConversationRecord) -> np.ndarray:
        """Standardized covariate rows for every observed turn."""
        if self.level != "turn":
            raise SchemaMismatch("turn_matrix needs a turn-level schema")
        self._check(conv)
        return self._design(_turn_raw(conv), conv)

    def summary_vector(self, conv: ConversationRecord, upto_t: int | None = None) -> np.ndarray:
        if self.level != "summary":
            raise SchemaMismatch("summary_vector needs a summary-level schema")
        self._check(conv)
        if upto_t is None:
            upto_t = conv.n_turns
        return self._design(_summary_raw(conv, upto_t)[None, :], conv)[0]

    def summary_matrix(self, dataset: Sequence[ConversationRecord]) -> np.ndarray:
        return np.vstack([self.summary_vector(c) for c in dataset])

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "continuous": list(self.continuous),
            "means": list(self.means),
            "sds": list(self.sds),
            # ordered pairs: group order defines the column layout
            "groups": [[k, list(v)] for k, v in self.groups.items()],
            "interactions": self.interactions,
            "dim": self.dim,
            "horizon": self.horizon,
            "names": list(self.names),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        schema = cls(
            level=obj["level"],
            continuous=list(obj["continuous"]),
            means=list(obj["means"]),
            sds=list(obj["sds"]),
            groups={k: list(v) for k, v in obj["groups"]},
            interactions=obj.get("interactions"),
            dim=obj.get("dim"),
            horizon=int(obj.get("horizon", 8)),
        )
        if "names" in obj and list(obj["names"]) != schema.names:
            raise SchemaMismatch("schema descriptor names do not match its layout")
        return schema


def assemble_covariates(conv: ConversationRecord, t: int, schema: FeatureSchema) -> dict[str, float]:
    """Named covariate vector at turn ``t``."""
    _check_turn(conv, t)
    row = schema.turn_matrix(conv)[t - 1]
    return dict(zip(schema.names, (float(x) for x in row)))


# --------------------------------------------------------------------------
# counting process


@dataclass(frozen=True)
class SurvivalSample:
    conversation_id: str
    interval_start: int
    interval_stop: int
    covariates: dict[str, float]
    event_in_interval: bool


def expand_counting_process(conv: ConversationRecord, schema: FeatureSchema) -> list[SurvivalSample]:
    """One row per observed turn ``t = 1..T``; only the event turn is flagged."""
    X = schema.turn_matrix(conv)
    outcome = conv.outcome
    rows = []
    for t in range(1, outcome.event_time + 1):
        rows.append(
            SurvivalSample(
                conversation_id=conv.conversation_id,
                interval_start=t - 1,
                interval_stop=t,
                covariates=dict(zip(schema.names, (float(x) for x in X[t - 1]))),
                event_in_interval=outcome.event_observed and t == outcome.event_time,
            )
        )
    return rows


@dataclass
class CountingProcess:
    """Column-oriented counting-process rows, the form the Cox fitter uses."""

    cluster: np.ndarray  # integer conversation index per row
    start: np.ndarray
    stop: np.ndarray
    X: np.ndarray
    event: np.ndarray
    names: list[str]
    ids: list[str]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def counting_process(dataset: Sequence[ConversationRecord], schema: FeatureSchema) -> CountingProcess:
    blocks, clusters, stops, events = [], [], [], []
    for i, conv in enumerate(dataset):
        T = conv.outcome.event_time
        X = schema.turn_matrix(conv)[:T]
        blocks.append(X)
        clusters.append(np.full(T, i))
        stops.append(np.arange(1, T + 1))
        ev = np.zeros(T, dtype=bool)
        ev[-1] = conv.outcome.event_observed
        events.append(ev)
    stop = np.concatenate(stops)
    return CountingProcess(
        cluster=np.concatenate(clusters),
        start=stop - 1,
        stop=stop,
        X=np.vstack(blocks) if blocks else np.zeros((0, schema.n_features)),
        event=np.concatenate(events),
        names=list(schema.names),
        ids=[c.conversation_id for c in dataset],
    )


def samples_to_counting_process(samples: Sequence[SurvivalSample]) -> CountingProcess:
    if not samples:
        raise InvalidInput("no survival samples")
    names = list(samples[0].covariates)
    ids: list[str] = []
    index: dict[str, int] = {}
    cluster = []
    for s in samples:
        if list(s.covariates) != names:
            raise SchemaMismatch("samples do not share one covariate layout")
        if s.interval_stop != s.interval_start + 1:
            raise InvalidInput("counting-process intervals must have unit length")
        if s.conversation_id not in index:
            index[s.conversation_id] = len(ids)
            ids.append(s.conversation_id)
        cluster.append(index[s.conversation_id])
    return CountingProcess(
        cluster=np.array(cluster),
        start=np.array([s.interval_start for s in samples]),
        stop=np.array([s.interval_stop for s in samples]),
        X=np.array([[s.covariates[n] for n in names] for s in samples], dtype=float).reshape(len(samples), len(names)),
        event=np.array([s.event_in_interval for s in samples], dtype=bool),
        names=names,
        ids=ids,
    )
