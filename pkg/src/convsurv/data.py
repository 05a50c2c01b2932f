"""Conversation records, event outcomes, ingestion and conversation-level splits.

A conversation is observed turn by turn; the event of interest is the first
turn whose answer is no longer consistent with the initially correct answer.
Conversations that reach the horizon without such a turn are right-censored.
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidInput, ConvSurvWarning

DEFAULT_HORIZON = 8


@dataclass(frozen=True, eq=False)
class TurnRecord:
    turn_index: int
    prompt_embedding: np.ndarray
    context_embedding: np.ndarray
    prompt_length: int
    consistent: bool


@dataclass(frozen=True, eq=False)
class ConversationRecord:
    conversation_id: str
    model_id: str
    subject_cluster: str
    difficulty: str
    turns: tuple[TurnRecord, ...]
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        if not self.turns:
            raise InvalidInput(f"conversation {self.conversation_id!r} has no turns")
        if len(self.turns) > self.horizon:
            raise InvalidInput(
                f"conversation {self.conversation_id!r} has {len(self.turns)} turns, "
                f"more than the horizon {self.horizon}"
            )
        for expected, turn in enumerate(self.turns, start=1):
            if turn.turn_index != expected:
                raise InvalidInput(
                    f"conversation {self.conversation_id!r}: turn indices must be "
                    f"contiguous from 1, got {turn.turn_index} at position {expected}"
                )

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    @property
    def dim(self) -> int:
        return self.turns[0].prompt_embedding.shape[0]

    @cached_property
    def prompt_matrix(self) -> np.ndarray:
        return np.stack([t.prompt_embedding for t in self.turns])

    @cached_property
    def context_matrix(self) -> np.ndarray:
        return np.stack([t.context_embedding for t in self.turns])

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([t.prompt_length for t in self.turns], dtype=float)

    @cached_property
    def outcome(self) -> "EventOutcome":
        return derive_event_outcome(self)

    @cached_property
    def drift(self) -> np.ndarray:
        """Per-turn (p2p, c2p, cumulative) drift, shape ``(n_turns, 3)``."""
        from .features import drift_table

        return drift_table(self.prompt_matrix, self.context_matrix)


@dataclass(frozen=True)
class EventOutcome:
    """Event time ``T`` and indicator ``delta``.

    A censored conversation carries its last observed turn as ``event_time``;
    for complete logs that is the horizon.
    """

    event_time: int
    event_observed: bool


def derive_event_outcome(conv: ConversationRecord) -> EventOutcome:
    if not conv.turns:
        raise InvalidInput("empty turn sequence")
    for turn in conv.turns:
        if not turn.consistent:
            return EventOutcome(turn.turn_index, True)
    return EventOutcome(conv.turns[-1].turn_index, False)


def outcome_arrays(dataset: Sequence[ConversationRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Event times (int) and event indicators (bool) as aligned arrays."""
    times = np.array([c.outcome.event_time for c in dataset], dtype=int)
    events = np.array([c.outcome.event_observed for c in dataset], dtype=bool)
    return times, events


# --------------------------------------------------------------------------
# ingestion


def default_subject_map() -> dict[str, str]:
    """Raw subject name -> cluster, from the packaged default table."""
    text = resources.files("convsurv").joinpath("data/subject_clusters.json").read_text()
    return invert_cluster_table(json.loads(text))


def invert_cluster_table(table: dict[str, list[str]]) -> dict[str, str]:
    mapping = {}
    for cluster, subjects in table.items():
        mapping[cluster] = cluster
        for subject in subjects:
            mapping[subject] = cluster
    return mapping


def load_subject_map(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return default_subject_map()
    with open(path, encoding="utf-8") as fh:
        return invert_cluster_table(json.load(fh))


def _vector(values, what: str, conv_id: str) -> np.ndarray:
    vec = np.asarray(values, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise InvalidInput(f"{conv_id}: {what} must be a non-empty array of numbers")
    if not np.all(np.isfinite(vec)):
        raise InvalidInput(f"{conv_id}: {what} contains non-finite values")
    if not np.any(vec):
        raise InvalidInput(f"{conv_id}: {what} has zero norm")
    return vec


@dataclass
class IngestReport:
    conversations: list[ConversationRecord]
    warnings: Counter = field(default_factory=Counter)


def parse_conversation(
    obj: dict,
    horizon: int = DEFAULT_HORIZON,
    subject_map: dict[str, str] | None = None,
) -> ConversationRecord | None:
    """Build a record from one decoded JSON object.

    Returns ``None`` when the conversation must be discarded because its
    initial answer was already wrong (``initial_correct: false``).
    Turns recorded after the first inconsistent one are dropped.
    """
    try:
        conv_id = str(obj["conversation_id"])
        raw_turns = obj["turns"]
        model_id = str(obj["model_id"])
        subject = str(obj["subject_cluster"])
        difficulty = str(obj["difficulty"])
    except KeyError as exc:
        raise InvalidInput(f"missing required field {exc.args[0]!r}") from None
    if "horizon" in obj and int(obj["horizon"]) != horizon:
        raise InvalidInput(
            f"{conv_id}: horizon {obj['horizon']} differs from dataset horizon {horizon}"
        )
    if obj.get("initial_correct", True) is False:
        return None
    if subject_map is not None:
        subject = subject_map.get(subject, subject)
    if not raw_turns:
        raise InvalidInput(f"{conv_id}: empty turn sequence")

    turns = []
    for raw in sorted(raw_turns, key=lambda r: int(r["turn_index"])):
        idx = int(raw["turn_index"])
        length = int(raw["prompt_length"])
        if length < 0:
            raise InvalidInput(f"{conv_id}: negative prompt_length at turn {idx}")
        turns.append(
            TurnRecord(
                turn_index=idx,
                prompt_embedding=_vector(raw["prompt_embedding"], f"prompt_embedding[{idx}]", conv_id),
                context_embedding=_vector(raw["context_embedding"], f"context_embedding[{idx}]", conv_id),
                prompt_length=length,
                consistent=bool(raw["consistent"]),
            )
        )
        if not turns[-1].consistent:
            break
    indices = [t.turn_index for t in turns]
    if len(set(indices)) != len(indices):
        raise InvalidInput(f"{conv_id}: duplicate turn_index")
    dims = {t.prompt_embedding.shape[0] for t in turns} | {t.context_embedding.shape[0] for t in turns}
    if len(dims) != 1:
        raise InvalidInput(f"{conv_id}: embedding dimensions differ ({sorted(dims)})")
    return ConversationRecord(conv_id, model_id, subject, difficulty, tuple(turns), horizon)


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInput(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def ingest(
    objects: Iterable[dict],
    horizon: int = DEFAULT_HORIZON,
    subject_map: dict[str, str] | None = None,
) -> IngestReport:
    report = IngestReport([])
    dim = None
    seen = set()
    for obj in objects:
        conv = parse_conversation(obj, horizon, subject_map)
        if conv is None:
            report.warnings["initial_answer_incorrect"] += 1
            continue
        if conv.conversation_id in seen:
            raise InvalidInput(f"duplicate conversation_id {conv.conversation_id!r}")
        seen.add(conv.conversation_id)
        if dim is None:
            dim = conv.dim
        elif conv.dim != dim:
            raise InvalidInput(
                f"{conv.conversation_id}: embedding dimension {conv.dim} differs from {dim}"
            )
        report.conversations.append(conv)
    if report.warnings["initial_answer_incorrect"]:
        warnings.warn(
            f"rejected {report.warnings['initial_answer_incorrect']} conversation(s) "
            "whose initial answer was incorrect",
            ConvSurvWarning,
            stacklevel=2,
        )
    return report


def load_conversations(
    path: str | Path,
    horizon: int = DEFAULT_HORIZON,
    subject_map: dict[str, str] | None = None,
) -> list[ConversationRecord]:
    return ingest(iter_jsonl(path), horizon, subject_map).conversations


def conversation_to_json(conv: ConversationRecord) -> dict:
    return {
        "conversation_id": conv.conversation_id,
        "model_id": conv.model_id,
        "subject_cluster": conv.subject_cluster,
        "difficulty": conv.difficulty,
        "turns": [
            {
                "turn_index": t.turn_index,
                "prompt_embedding": [float(x) for x in t.prompt_embedding],
                "context_embedding": [float(x) for x in t.context_embedding],
                "prompt_length": int(t.prompt_length),
                "consistent": bool(t.consistent),
            }
            for t in conv.turns
        ],
    }


def write_conversations(path: str | Path, dataset: Iterable[ConversationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in dataset:
            fh.write(json.dumps(conversation_to_json(conv)))
            fh.write("\n")


# --------------------------------------------------------------------------
# splitting


def _cells(dataset: Sequence[ConversationRecord]) -> dict[tuple[str, str], list[ConversationRecord]]:
    cells = defaultdict(list)
    for conv in dataset:
        cells[(conv.model_id, conv.subject_cluster)].append(conv)
    for members in cells.values():
        members.sort(key=lambda c: c.conversation_id)
    return dict(sorted(cells.items()))


def _cell_rng(seed: int, key: tuple[str, str]) -> np.random.Generator:
    tag = zlib.crc32("\x1f".join(key).encode("utf-8"))
    return np.random.default_rng([seed, tag])


def stratified_split(
    dataset: Sequence[ConversationRecord],
    test_fraction: float = 0.2,
    seed: int = 0,
) -> tuple[list[ConversationRecord], list[ConversationRecord]]:
    """Conversation-level train/test split stratified by (model, subject cluster).

    Each cell sends ``round(test_fraction * size)`` conversations to the test
    side, keeping at least one in train. Cells with fewer than two
    conversations go wholly to train.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInput(f"test_fraction must lie in (0, 1), got {test_fraction}")
    train, test = [], []
    small = []
    for key, members in _cells(dataset).items():
        if len(members) < 2:
            small.append(key)
            train.extend(members)
            continue
        n_test = min(int(math.floor(test_fraction * len(members) + 0.5)), len(members) - 1)
        order = _cell_rng(seed, key).permutation(len(members))
        test.extend(members[i] for i in order[:n_test])
        train.extend(members[i] for i in order[n_test:])
    if small:
        warnings.warn(
            f"{len(small)} stratification cell(s) with fewer than 2 conversations "
            f"assigned to train: {small}",
            ConvSurvWarning,
            stacklevel=2,
        )
    return train, test


def kfold_conversations(
    train: Sequence[ConversationRecord], k: int = 5, seed: int = 0
) -> list[list[ConversationRecord]]:
    """Partition into ``k`` folds of near-equal size, stratified by cell.

    Conversations are shuffled within each cell and dealt round-robin, the
    dealing position carrying over between cells so that fold sizes differ
    by at most one.
    """
    if k < 2:
        raise InvalidInput(f"k must be at least 2, got {k}")
    if k > len(train):
        raise InvalidInput(f"k={k} exceeds the number of conversations ({len(train)})")
    folds: list[list[ConversationRecord]] = [[] for _ in range(k)]
    pos = 0
    for key, members in _cells(train).items():
        order = _cell_rng(seed, key).permutation(len(members))
        for i in order:
            folds[pos % k].append(members[i])
            pos += 1
    return folds
