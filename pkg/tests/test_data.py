import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convsurv.data import (
    ConversationRecord,
    EventOutcome,
    derive_event_outcome,
    ingest,
    kfold_conversations,
    load_conversations,
    parse_conversation,
    stratified_split,
    write_conversations,
)
from convsurv.errors import ConvSurvWarning, InvalidInput
from convsurv.features import FeatureSchema, expand_counting_process

from conftest import make_conv, outcome_conv, raw_json


@pytest.mark.parametrize(
    "labels, expected",
    [
        ([True, True, False], EventOutcome(3, True)),
        ([True] * 8, EventOutcome(8, False)),
        ([False], EventOutcome(1, True)),
    ],
)
def test_event_outcome(labels, expected):
    conv = make_conv(np.eye(8)[: len(labels)], consistent=labels)
    assert derive_event_outcome(conv) == expected


def test_short_log_without_failure_is_censored_at_last_turn():
    conv = make_conv(np.eye(4), consistent=[True] * 4)
    assert conv.outcome == EventOutcome(4, False)


def test_record_validation():
    with pytest.raises(InvalidInput):
        ConversationRecord("x", "m", "s", "d", ())
    conv = make_conv(np.eye(3))
    with pytest.raises(InvalidInput, match="contiguous"):
        ConversationRecord("x", "m", "s", "d", (conv.turns[0], conv.turns[2]))
    with pytest.raises(InvalidInput, match="horizon"):
        make_conv(np.ones((9, 2)), horizon=8)


def test_parse_drops_post_event_turns_and_rejects_bad_initial():
    conv = parse_conversation(raw_json(labels=(True, False, True, True)))
    assert conv.n_turns == 2 and conv.outcome == EventOutcome(2, True)
    assert parse_conversation(raw_json(initial_correct=False)) is None


def test_parse_errors():
    bad = raw_json()
    bad["turns"][1]["prompt_embedding"] = [0.0, 0.0, 0.0]
    with pytest.raises(InvalidInput, match="zero norm"):
        parse_conversation(bad)
    with pytest.raises(InvalidInput, match="missing required field"):
        parse_conversation({"conversation_id": "x"})
    with pytest.raises(InvalidInput, match="horizon"):
        parse_conversation(raw_json(horizon=10))


def test_ingest_counts_rejections_and_checks_ids():
    objs = [raw_json("a"), raw_json("b", initial_correct=False), raw_json("c")]
    with pytest.warns(ConvSurvWarning):
        report = ingest(objs)
    assert [c.conversation_id for c in report.conversations] == ["a", "c"]
    assert report.warnings["initial_answer_incorrect"] == 1
    with pytest.raises(InvalidInput, match="duplicate"):
        ingest([raw_json("a"), raw_json("a")])
    with pytest.raises(InvalidInput, match="dimension"):
        ingest([raw_json("a"), raw_json("b", dim=4)])


def test_subject_map_folds_raw_subjects():
    conv = parse_conversation(raw_json(subject_cluster="anatomy"), subject_map={"anatomy": "Medical_Health"})
    assert conv.subject_cluster == "Medical_Health"


def test_jsonl_round_trip(tmp_path, small_data):
    path = tmp_path / "d.jsonl"
    write_conversations(path, small_data[:20])
    back = load_conversations(path)
    assert [c.conversation_id for c in back] == [c.conversation_id for c in small_data[:20]]
    for a, b in zip(back, small_data[:20]):
        assert np.array_equal(a.prompt_matrix, b.prompt_matrix)
        assert a.outcome == b.outcome


def test_bad_json_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(raw_json()) + "\n{not json\n")
    with pytest.raises(InvalidInput, match=":2:"):
        load_conversations(path)


def _cell_dataset(per_cell, models=("a", "b"), subjects=("S", "T")):
    out = []
    for m in models:
        for s in subjects:
            for i in range(per_cell):
                out.append(outcome_conv(3, True, cid=f"{m}-{s}-{i}", model=m, subject=s))
    return out


def test_split_is_cell_exact():
    data = _cell_dataset(25)
    train, test = stratified_split(data, 0.2, seed=3)
    assert len(train) == 80 and len(test) == 20
    for m in "ab":
        for s in "ST":
            assert sum(c.model_id == m and c.subject_cluster == s for c in test) == 5
    assert {c.conversation_id for c in train}.isdisjoint(c.conversation_id for c in test)


def test_split_determinism_and_singleton_cell():
    data = _cell_dataset(10)
    a = stratified_split(data, 0.2, seed=1)
    b = stratified_split(list(reversed(data)), 0.2, seed=1)
    assert [c.conversation_id for c in sorted(a[1], key=lambda c: c.conversation_id)] == [
        c.conversation_id for c in sorted(b[1], key=lambda c: c.conversation_id)
    ]
    lone = outcome_conv(2, False, cid="lone", model="z", subject="Q")
    with pytest.warns(ConvSurvWarning, match="fewer than 2"):
        train, _ = stratified_split(data + [lone], 0.2, seed=1)
    assert lone in train


def test_kfold():
    data = [outcome_conv(2, True, cid=f"c{i}") for i in range(10)]
    folds = kfold_conversations(data, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5
    ids = [c.conversation_id for f in folds for c in f]
    assert sorted(ids) == sorted(c.conversation_id for c in data)
    again = kfold_conversations(data, 5, seed=0)
    assert [[c.conversation_id for c in f] for f in folds] == [[c.conversation_id for c in f] for f in again]
    with pytest.raises(InvalidInput):
        kfold_conversations(data, 11)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 8), event=st.booleans(), seed=st.integers(0, 10_000))
def test_counting_rows_match_outcome(T, event, seed):
    conv = outcome_conv(T, event, seed=seed)
    schema = FeatureSchema.fit([conv, outcome_conv(3, True, cid="other", seed=seed + 1)])
    rows = expand_counting_process(conv, schema)
    assert len(rows) == min(T, 8)
    assert sum(r.event_in_interval for r in rows) == int(event)
    assert all(r.interval_stop - r.interval_start == 1 for r in rows)
