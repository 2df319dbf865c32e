"""Builders for synthetic corpora and scripted backends shared by the tests."""

import random

from dualrag.llm import ScriptedBackend
from dualrag.raq import COMPLETED_MARKER, RETRIEVAL_MARKER
from dualrag.types import Document, Question

# Small vocabulary so that queries hit many documents and scores tie often.
WORDS = (
    "river castle harbor film director novel painter bridge valley mountain "
    "garden empire treaty village museum opera island market temple forest"
).split()


def synthetic_corpus(n=200, seed=0, words=WORDS, max_len=25):
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        title = " ".join(rng.choice(words) for _ in range(rng.randint(1, 3)))
        text = " ".join(rng.choice(words) for _ in range(rng.randint(3, max_len)))
        docs.append(Document(f"doc{i:04d}", title, text))
    return docs


def synthetic_script(qid, entities, completes_at=None, max_iter=5, answer="forty two"):
    """Script for one question.

    ``entities`` maps each iteration to a list of (name, queries). The
    reasoner asks for retrieval until ``completes_at`` (never, if None). Tags
    for every iteration up to ``max_iter`` are present, including the
    knowledge-summarizer tags of the ``query`` pseudo-entity, so ablation
    runs find what they ask for.
    """
    script = {}
    for t in range(1, max_iter + 1):
        done = completes_at is not None and t >= completes_at
        marker = COMPLETED_MARKER if done else RETRIEVAL_MARKER
        script[f"reasoner/{qid}/{t}"] = f"Step {t} of {qid}: look up {entities[t][0][0]}.\n{marker}"
        lines = [f"({i}) {name}: [{', '.join(qs)}]" for i, (name, qs) in enumerate(entities[t], start=1)]
        script[f"entity_identifier/{qid}/{t}"] = "\n".join(lines)
        for name, _ in entities[t]:
            script[f"knowledge_summarizer/{qid}/{t}/{name}"] = f"{name} noted at step {t}.\nSOURCES: none"
        script[f"knowledge_summarizer/{qid}/{t}/query"] = f"Raw notes at step {t}.\nSOURCES: none"
        script[f"answerer/{qid}/{t}"] = answer
    return script


def random_entities(rng, max_iter=5, words=WORDS):
    out = {}
    for t in range(1, max_iter + 1):
        names = rng.sample(words, rng.randint(1, 3))
        out[t] = [(n, [f"{n} {rng.choice(words)}", f"{rng.choice(words)} {n}"]) for n in names]
    return out


def synthetic_batch(n_questions=20, seed=0, max_iter=5):
    """Questions and one merged scripted backend; completion step varies."""
    rng = random.Random(seed)
    script = {}
    questions = []
    for i in range(n_questions):
        qid = f"s{i:02d}"
        completes_at = rng.choice([1, 2, 3, 4, 5, None])
        script.update(synthetic_script(qid, random_entities(rng, max_iter), completes_at, max_iter, f"answer {i}"))
        questions.append(Question(qid, f"Synthetic question number {i}?", (f"answer {i}",)))
    return questions, ScriptedBackend(script)
