import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualrag.exceptions import DuplicateIteration, OutlineError, UnknownEntity
from dualrag.types import (
    EMPTY_OUTLINE_TEXT,
    Document,
    EntityKey,
    KnowledgeFragment,
    KnowledgeOutline,
    Question,
    ReasoningHistory,
    ReasoningStep,
    RunConfig,
    link_synonym,
    merge_fragment,
    render_outline,
)


def frag(name, t, text=None, sources=()):
    return KnowledgeFragment(EntityKey(name), text or f"{name} at {t}", t, sources)


def test_merge_into_empty():
    out = merge_fragment(KnowledgeOutline(), frag("A", 1))
    assert [f.iteration for f in out.lookup("A")] == [1]


def test_merge_appends_in_order():
    out = KnowledgeOutline().merge(frag("A", 1)).merge(frag("A", 2))
    assert [f.iteration for f in out.lookup("A")] == [1, 2]


def test_merge_is_copy_on_write():
    base = KnowledgeOutline().merge(frag("A", 1))
    base.merge(frag("B", 1))
    assert list(base) == ["A"]


def test_case_outline_order():
    out = KnowledgeOutline()
    for name, t in [("El extraño viaje", 1), ("Love In Pawn", 1), ("Fernando Fernán Gómez", 2), ("Charles Saunders", 2)]:
        out = out.merge(frag(name, t))
    assert list(out) == ["El extraño viaje", "Love In Pawn", "Fernando Fernán Gómez", "Charles Saunders"]


def test_duplicate_iteration():
    out = KnowledgeOutline().merge(frag("A", 2))
    with pytest.raises(DuplicateIteration):
        out.merge(frag("a", 2))
    with pytest.raises(OutlineError):
        out.merge(frag("A", 1))


def test_render():
    assert render_outline(KnowledgeOutline()) == EMPTY_OUTLINE_TEXT == "No knowledge collected yet."
    assert render_outline(KnowledgeOutline().merge(frag("A", 1, "f1"))) == "## A\n- f1"
    two = KnowledgeOutline().merge(frag("A", 1, "x")).merge(frag("B", 1, "y")).merge(frag("A", 2, "z"))
    assert two.render() == "## A\n- x\n- z\n\n## B\n- y"


def test_case_step2_render():
    out = (
        KnowledgeOutline()
        .merge(frag("El Extraño Viaje", 1, "El extraño viaje is a 1964 Spanish black drama film directed by Fernando Fernán Gómez."))
        .merge(frag("Love In Pawn", 1, "Love in Pawn is a 1953 British comedy film directed by Charles Saunders."))
    )
    text = out.render()
    assert text.startswith("## El Extraño Viaje\n- El extraño viaje is a 1964")
    assert "\n\n## Love In Pawn\n- Love in Pawn is a 1953" in text


def test_link_synonym():
    out = KnowledgeOutline().merge(frag("Fernando Fernán Gómez", 2))
    linked = link_synonym(out, EntityKey("Fernando Fernández Gómez"), "Fernando Fernán Gómez")
    assert len(linked) == 1
    assert len(linked.key("Fernando Fernán Gómez").aliases) == 2
    assert linked.lookup("fernando fernández  gómez") == linked.lookup("Fernando Fernán Gómez")
    # Later fragments addressed to the alias land under the canonical entry.
    later = linked.merge(frag("Fernando Fernández Gómez", 3))
    assert list(later) == ["Fernando Fernán Gómez"]
    assert len(later.lookup("Fernando Fernán Gómez")) == 2


def test_link_synonym_identity_and_error():
    out = KnowledgeOutline().merge(frag("A", 1))
    assert out.link_synonym(EntityKey("A"), "A") is out
    with pytest.raises(UnknownEntity):
        out.link_synonym(EntityKey("B"), "Z")
    with pytest.raises(UnknownEntity):
        out.lookup("Z")


def test_outline_json_roundtrip():
    out = KnowledgeOutline().merge(frag("A", 1, sources=("d1",))).link_synonym(EntityKey("a prime"), "A")
    data = json.loads(json.dumps(out.to_dict()))
    assert set(data) == {"entities"}
    assert set(data["entities"][0]) == {"canonical", "aliases", "fragments"}
    assert set(data["entities"][0]["fragments"][0]) == {"text", "iteration", "source_doc_ids"}
    assert KnowledgeOutline.from_dict(data) == out


# -- property tests ---------------------------------------------------------------

NAMES = ["Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta"]


@st.composite
def merge_sequences(draw):
    """Per iteration: a subset of entities to merge and optional synonym links."""
    steps = []
    for t in range(1, draw(st.integers(1, 5)) + 1):
        entities = draw(st.lists(st.sampled_from(NAMES), unique=True, max_size=6))
        aliases = draw(st.lists(st.tuples(st.sampled_from(NAMES), st.integers(0, 3)), max_size=3))
        steps.append((t, entities, aliases))
    return steps


def apply_sequence(steps):
    out = KnowledgeOutline()
    snapshots = []
    for t, entities, aliases in steps:
        for name, n in aliases:
            if name in out:
                out = out.link_synonym(EntityKey(f"{name.lower()} alias {n}"), name)
        for name in entities:
            out = out.merge(frag(name, t))
        snapshots.append(out)
    return out, snapshots


@settings(max_examples=200, deadline=None)
@given(merge_sequences())
def test_outline_invariants(steps):
    out, snapshots = apply_sequence(steps)
    for (t, _, _), snap in zip(steps, snapshots):
        for name in snap:
            iterations = [f.iteration for f in snap.lookup(name)]
            assert len(iterations) <= t
            assert iterations == sorted(set(iterations))
    for before, after in zip(snapshots, snapshots[1:]):
        assert list(after)[: len(before)] == list(before)
    for key in out.entities:
        for alias in key.aliases:
            assert out.lookup(alias) == out.lookup(key.canonical)
    assert out.render() == apply_sequence(steps)[0].render()


def test_question_and_document_validation():
    with pytest.raises(ValueError):
        Question("q", "  ")
    with pytest.raises(ValueError):
        Document("d", "t", "")
    q = Question("q", "Who?", ["A"], {"d1"})
    assert Question.from_dict(q.to_dict()) == q


def test_history_contiguity():
    h = ReasoningHistory().append(ReasoningStep(1, "first", True))
    assert h.render() == "Reasoning history:\nStep 1: first"
    assert ReasoningHistory().render() == "Reasoning history: none yet."
    with pytest.raises(ValueError):
        ReasoningHistory((ReasoningStep(2, "x", True),))


def test_run_config_defaults_and_validation():
    cfg = RunConfig()
    assert (cfg.max_iterations, cfg.recall_k, cfg.rerank_k, cfg.temperature) == (5, 50, 10, 0.0)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"max_iterations": 0}, {"rerank_k": 60}, {"recall_k": True}, {"temperature": -1}):
        with pytest.raises(ValueError):
            RunConfig(**bad)
