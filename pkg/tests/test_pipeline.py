import json
import random

import pytest
from sklearn.base import clone

from dualrag.llm import ScriptedBackend
from dualrag.pipeline import (
    DualRAG,
    TrajectoryRecord,
    iteration_stats,
    read_trajectories,
    run_batch,
    run_question,
    write_trajectories,
)
from dualrag.retrieval import BM25Index
from dualrag.types import Question, RunConfig

from helpers import random_entities, synthetic_batch, synthetic_corpus, synthetic_script


@pytest.fixture(scope="module")
def synth_index():
    return BM25Index().fit(synthetic_corpus(200, seed=11))


def test_case_run(case_question, case_backend, case_index, case_docs):
    rec = run_question(case_question, RunConfig(), case_backend, case_index)
    assert rec.status == "ok", rec.error
    assert len(rec.steps) == 3 and rec.retrieval_rounds == 2
    assert rec.answer.answer_text == "El extraño viaje" and not rec.answer.forced
    assert list(rec.outline) == ["El Extraño Viaje", "Love In Pawn", "Fernando Fernán Gómez", "Charles Saunders"]
    support = case_question.gold_support_doc_ids
    for step in rec.steps[:2]:
        for frag in step.fragments:
            reranked = {d.id for d in step.bundle.per_entity[frag.entity.canonical].reranked}
            assert set(frag.source_doc_ids) <= reranked
            assert support & set(frag.source_doc_ids)
    assert rec.steps[2].plan is None and rec.steps[2].bundle is None


def test_request_log_is_prefix_closed(case_question, case_backend, case_index):
    rec = run_question(case_question, RunConfig(), case_backend, case_index)
    iterations = [int(tag.split("/")[2]) for tag in rec.request_log]
    assert iterations == sorted(iterations)
    assert rec.request_log[0] == "reasoner/case/1" and rec.request_log[-1] == "answerer/case/3"


def test_no_retrieval_path(synth_index):
    backend = ScriptedBackend({"reasoner/q/1": "Easy.\nReasoning completed", "answerer/q/1": "yes"})
    rec = run_question(Question("q", "Is it?"), RunConfig(), backend, synth_index)
    assert rec.retrieval_rounds == 0 and rec.request_log == ["reasoner/q/1", "answerer/q/1"]
    assert rec.answer_text == "yes"


def test_cap_forces_answer(synth_index):
    rng = random.Random(0)
    backend = ScriptedBackend(synthetic_script("q", random_entities(rng), completes_at=None))
    rec = run_question(Question("q", "Loop?"), RunConfig(), backend, synth_index)
    assert len(rec.steps) == 5 and rec.retrieval_rounds == 5 and rec.answer.forced
    # Cap respected for smaller limits too.
    rec3 = run_question(Question("q", "Loop?"), RunConfig(max_iterations=3), backend, synth_index)
    assert len(rec3.steps) == 3 and rec3.answer.forced


def test_pka_invocations_equal_rounds_and_outline_monotone(synth_index):
    questions, backend = synthetic_batch(10, seed=5)
    for rec in run_batch(questions, RunConfig(), backend, synth_index):
        assert rec.status == "ok", rec.error
        flags = [s.reasoning.needs_retrieval for s in rec.steps]
        assert rec.retrieval_rounds == sum(flags)
        assert sum(1 for s in rec.steps if s.fragments is not None) == sum(flags)
        snapshots = [list(s.outline) for s in rec.steps]
        for a, b in zip(snapshots, snapshots[1:]):
            assert b[: len(a)] == a


def test_failure_marks_record_and_keeps_steps(case_question, case_index):
    script = {
        "reasoner/case/1": "Need data.\nReason interrupt for retrieval",
        "entity_identifier/case/1": "(1) Love In Pawn: [Love In Pawn director]",
    }
    rec = run_question(case_question, RunConfig(), ScriptedBackend(script), case_index)
    assert rec.failed and "UnscriptedRequest" in rec.error
    assert rec.answer is None
    assert rec.request_log[-1] == "knowledge_summarizer/case/1/Love In Pawn"


def test_batch_order_and_isolation(synth_index):
    questions, backend = synthetic_batch(10, seed=2)
    broken = list(questions)
    broken[4] = Question("missing", "Not in the script?")
    records = run_batch(broken, RunConfig(), backend, synth_index, parallelism=4)
    assert [r.question.id for r in records] == [q.id for q in broken]
    assert [r.failed for r in records].count(True) == 1 and records[4].failed


def test_cross_iteration_dedup(case_docs):
    index = BM25Index().fit(case_docs)
    script = {}
    for t in (1, 2):
        script[f"reasoner/q/{t}"] = f"Look again {t}.\nReason interrupt for retrieval"
        script[f"entity_identifier/q/{t}"] = "(1) Love In Pawn: [Love in Pawn]"
        script[f"knowledge_summarizer/q/{t}/Love In Pawn"] = "Film.\nSOURCES: Love in Pawn"
    script["reasoner/q/3"] = "Done.\nReasoning completed"
    script["answerer/q/3"] = "x"
    rec = run_question(Question("q", "Who directed Love in Pawn?"), RunConfig(rerank_k=2, recall_k=2), ScriptedBackend(script), index)
    assert rec.status == "ok", rec.error
    first = {d.id for d in rec.steps[0].bundle.per_entity["Love In Pawn"].reranked}
    second = {d.id for d in rec.steps[1].bundle.per_entity["Love In Pawn"].recalled}
    assert first and not first & second
    assert len(rec.outline.lookup("Love In Pawn")) == 2


def test_trajectory_roundtrip(tmp_path, case_question, case_backend, case_index):
    rec = run_question(case_question, RunConfig(), case_backend, case_index)
    write_trajectories([rec], tmp_path / "t.jsonl")
    (again,) = read_trajectories(tmp_path / "t.jsonl")
    assert again.to_dict() == rec.to_dict()
    line = json.loads((tmp_path / "t.jsonl").read_text(encoding="utf-8"))
    assert line["schema_version"] == 1
    assert {"reasoning_step", "outline_snapshot"} <= set(line["steps"][0])
    assert TrajectoryRecord.from_dict(line).outline == rec.outline


def test_iteration_stats():
    def fake(rounds):
        rec = TrajectoryRecord(question=Question("x", "x?"), config=RunConfig())
        rec.steps = [type("S", (), {"reasoning": type("R", (), {"needs_retrieval": True})()})()] * rounds
        return rec

    stats = iteration_stats([fake(2), fake(2), fake(3)])
    assert stats.histogram == {2: 2, 3: 1}
    assert round(stats.mean, 2) == 2.33
    assert stats.to_csv() == "rounds,count\n2,2\n3,1\n"
    empty = iteration_stats([])
    assert empty.histogram == {} and empty.mean is None and "n/a" in empty.to_table()


def test_case_stats(case_question, case_backend, case_index):
    rec = run_question(case_question, RunConfig(), case_backend, case_index)
    assert iteration_stats([rec]).histogram == {2: 1}


# -- estimator API ---------------------------------------------------------------


def test_estimator_predict_and_score(case_question, case_backend, case_docs):
    model = DualRAG(backend=case_backend).fit(case_docs)
    assert model.predict([case_question]) == ["El extraño viaje"]
    assert model.score([case_question]) == 1.0
    assert model.score([case_question], [["Something else"]]) == 0.0


def test_estimator_params_and_clone(case_backend):
    model = DualRAG(backend=case_backend, max_iterations=3, ablation_no_ko=True)
    params = model.get_params()
    assert params["max_iterations"] == 3 and params["recall_k"] == 50 and params["ablation_no_ko"]
    twin = clone(model)
    assert twin.get_params()["max_iterations"] == 3


def test_estimator_validation(case_backend, case_docs):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        DualRAG(backend=case_backend).predict(["Who?"])
    with pytest.raises(ValueError):
        DualRAG().fit(case_docs)
    with pytest.raises(ValueError):
        DualRAG(backend=case_backend, rerank_k=100).fit(case_docs)
    with pytest.raises(ValueError):
        DualRAG(backend=case_backend, parallelism=0).fit(case_docs)
