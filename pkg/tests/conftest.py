import numpy as np
import pytest

from convsurv.data import ConversationRecord, TurnRecord
from convsurv.synthetic import GeneratorSpec, generate


def make_conv(
    prompts,
    contexts=None,
    consistent=None,
    cid="c0",
    model="m0",
    subject="STEM",
    difficulty="College",
    lengths=None,
    horizon=8,
):
    prompts = np.asarray(prompts, dtype=float)
    contexts = prompts if contexts is None else np.asarray(contexts, dtype=float)
    n = prompts.shape[0]
    consistent = [True] * n if consistent is None else list(consistent)
    lengths = [10] * n if lengths is None else list(lengths)
    turns = tuple(
        TurnRecord(i + 1, prompts[i], contexts[i], int(lengths[i]), bool(consistent[i])) for i in range(n)
    )
    return ConversationRecord(cid, model, subject, difficulty, turns, horizon)


def outcome_conv(T, event, cid="c0", dim=3, seed=0, **kw):
    """Conversation with random embeddings and the given outcome."""
    rng = np.random.default_rng(seed)
    labels = [True] * T
    if event:
        labels[-1] = False
    return make_conv(rng.normal(size=(T, dim)), rng.normal(size=(T, dim)), labels, cid=cid, **kw)


def raw_json(cid="c0", labels=(True, True, False), dim=3, initial_correct=True, seed=0, **extra):
    rng = np.random.default_rng(seed)
    obj = {
        "conversation_id": cid,
        "model_id": "m0",
        "subject_cluster": "STEM",
        "difficulty": "College",
        "initial_correct": initial_correct,
        "turns": [
            {
                "turn_index": i + 1,
                "prompt_embedding": rng.normal(size=dim).tolist(),
                "context_embedding": rng.normal(size=dim).tolist(),
                "prompt_length": 12,
                "consistent": lab,
            }
            for i, lab in enumerate(labels)
        ],
    }
    obj.update(extra)
    return obj


@pytest.fixture(scope="session")
def weibull_data():
    return generate(GeneratorSpec(n=400, seed=11))


@pytest.fixture(scope="session")
def small_data():
    return generate(GeneratorSpec(n=150, seed=5))
