"""The dual-process loop, trajectory records and the DualRAG estimator."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .llm import ChatBackend, RecordingBackend
from .pka import aggregate, no_evidence_text, summarize_entity
from .raq import (
    AnswerResult,
    EntityQueryPlan,
    Exchange,
    PlanItem,
    generate_answer,
    identify_entities,
    reason_step,
)
from .retrieval import (
    BM25Index,
    EntityRetrieval,
    JaccardReranker,
    Reranker,
    RetrievalBundle,
    Searcher,
    recall_for_entity,
    rerank_entity,
)
from .types import (
    EMPTY_OUTLINE_TEXT,
    Document,
    EntityKey,
    KnowledgeFragment,
    KnowledgeOutline,
    Question,
    ReasoningHistory,
    ReasoningStep,
    RunConfig,
)
from .validation import check_documents, check_positive_int, check_questions

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NO_EI_ENTITY = "query"


def _fragment_to_dict(f: KnowledgeFragment) -> dict:
    return {
        "entity": f.entity.canonical,
        "aliases": sorted(f.entity.aliases),
        "text": f.text,
        "iteration": f.iteration,
        "source_doc_ids": list(f.source_doc_ids),
    }


def _fragment_from_dict(d: dict) -> KnowledgeFragment:
    key = EntityKey(d["entity"], frozenset(d.get("aliases", ())))
    return KnowledgeFragment(key, d["text"], d["iteration"], tuple(d.get("source_doc_ids", ())))


@dataclass
class StepRecord:
    reasoning: ReasoningStep
    reasoner: Exchange
    outline: KnowledgeOutline = field(default_factory=KnowledgeOutline)
    plan: EntityQueryPlan | None = None
    entity_identifier: Exchange | None = None
    bundle: RetrievalBundle | None = None
    fragments: list[KnowledgeFragment] | None = None
    summaries: list[Exchange] | None = None

    def to_dict(self) -> dict:
        return {
            "reasoning_step": self.reasoning.to_dict(),
            "reasoner": self.reasoner.to_dict(),
            "plan": self.plan.to_dict() if self.plan else None,
            "entity_identifier": self.entity_identifier.to_dict() if self.entity_identifier else None,
            "bundle": self.bundle.to_dict() if self.bundle else None,
            "fragments": None if self.fragments is None else [_fragment_to_dict(f) for f in self.fragments],
            "summaries": None if self.summaries is None else [s.to_dict() for s in self.summaries],
            "outline_snapshot": self.outline.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            reasoning=ReasoningStep(**d["reasoning_step"]),
            reasoner=Exchange.from_dict(d["reasoner"]),
            outline=KnowledgeOutline.from_dict(d["outline_snapshot"]),
            plan=EntityQueryPlan.from_dict(d["plan"]) if d.get("plan") else None,
            entity_identifier=Exchange.from_dict(d["entity_identifier"]) if d.get("entity_identifier") else None,
            bundle=RetrievalBundle.from_dict(d["bundle"]) if d.get("bundle") else None,
            fragments=None if d.get("fragments") is None else [_fragment_from_dict(f) for f in d["fragments"]],
            summaries=None if d.get("summaries") is None else [Exchange.from_dict(s) for s in d["summaries"]],
        )


@dataclass
class TrajectoryRecord:
    """Everything that happened while answering one question."""

    question: Question
    config: RunConfig
    steps: list[StepRecord] = field(default_factory=list)
    answer: AnswerResult | None = None
    answerer: Exchange | None = None
    request_log: list[str] = field(default_factory=list)
    wall_time_ms: int = 0
    status: str = "ok"
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    @property
    def retrieval_rounds(self) -> int:
        return sum(1 for s in self.steps if s.reasoning.needs_retrieval)

    @property
    def outline(self) -> KnowledgeOutline:
        return self.steps[-1].outline if self.steps else KnowledgeOutline()

    @property
    def answer_text(self) -> str:
        return self.answer.answer_text if self.answer else ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "question": self.question.to_dict(),
            "config": self.config.to_dict(),
            "status": self.status,
            "error": self.error,
            "steps": [s.to_dict() for s in self.steps],
            "answer": self.answer.to_dict() if self.answer else None,
            "answerer": self.answerer.to_dict() if self.answerer else None,
            "request_log": list(self.request_log),
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema_version {version!r}")
        return cls(
            question=Question.from_dict(d["question"]),
            config=RunConfig.from_dict(d["config"]),
            steps=[StepRecord.from_dict(s) for s in d["steps"]],
            answer=AnswerResult(**d["answer"]) if d.get("answer") else None,
            answerer=Exchange.from_dict(d["answerer"]) if d.get("answerer") else None,
            request_log=list(d.get("request_log", [])),
            wall_time_ms=int(d.get("wall_time_ms", 0)),
            status=d.get("status", "ok"),
            error=d.get("error"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def write_trajectories(records: Iterable[TrajectoryRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


def read_trajectories(path: str | Path) -> list[TrajectoryRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TrajectoryRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def _raw_knowledge(docs: dict[str, Document]) -> str:
    if not docs:
        return EMPTY_OUTLINE_TEXT
    return "\n\n".join(f"{d.title}: {d.text}" for d in docs.values())


def run_question(
    question: Question,
    config: RunConfig,
    backend: ChatBackend,
    index: Searcher,
    reranker: Reranker | None = None,
) -> TrajectoryRecord:
    """Answer one question with the reason / retrieve / summarise loop.

    Never raises for model or retrieval failures: the returned record is
    marked ``failed`` and holds the steps completed before the error.
    """
    reranker = reranker or JaccardReranker()
    log = RecordingBackend(backend)
    record = TrajectoryRecord(question=question, config=config)
    start = time.perf_counter()

    outline = KnowledgeOutline()
    history = ReasoningHistory()
    raw_docs: dict[str, Document] = {}
    seen: dict[str, set[str]] = {}

    def knowledge():
        return _raw_knowledge(raw_docs) if config.ablation_no_ko else outline

    try:
        for t in range(1, config.max_iterations + 1):
            transcript: list[Exchange] = []
            step = reason_step(log, knowledge(), question, history, config, transcript=transcript)
            if config.ablation_no_r and not step.needs_retrieval:
                step = replace(step, needs_retrieval=True)
            history = history.append(step)
            rec = StepRecord(reasoning=step, reasoner=transcript[0], outline=outline)
            if not step.needs_retrieval:
                record.steps.append(rec)
                break

            if config.ablation_no_ei:
                plan = EntityQueryPlan(t, [PlanItem(EntityKey(NO_EI_ENTITY), [step.rationale])])
            else:
                plan = identify_entities(log, knowledge(), question, step, history, config, transcript=transcript)
                rec.entity_identifier = transcript[-1]
            rec.plan = plan

            links = {new.casefold(): prior for new, prior in plan.synonym_links}
            bundle = RetrievalBundle(t)
            resolved: dict[str, str] = {}
            for item in plan.items:
                name = item.entity.canonical
                target = outline.resolve(name) or links.get(name.casefold()) or name
                resolved[name] = target
                per_query: dict[str, list[str]] = {}
                recalled = recall_for_entity(
                    index, item.entity, item.queries, config.recall_k,
                    exclude=seen.get(target.casefold(), ()), per_query=per_query,
                )
                rerank_query = step.rationale if config.ablation_no_ei else name
                reranked = rerank_entity(reranker, rerank_query, recalled, config.rerank_k)
                bundle.per_entity[name] = EntityRetrieval(
                    list(item.queries), per_query, recalled, reranked, rerank_query
                )
            rec.bundle = bundle

            if config.ablation_no_ko:
                for result in bundle.per_entity.values():
                    for doc in result.reranked:
                        raw_docs.setdefault(doc.id, doc)
            else:
                fragments, summaries = [], []
                for item in plan.items:
                    docs = bundle.per_entity[item.entity.canonical].reranked
                    if docs:
                        ks: list[Exchange] = []
                        frag = summarize_entity(
                            log, question, history, item.entity, item.queries, docs, config, transcript=ks
                        )
                        summaries.extend(ks)
                    else:
                        frag = KnowledgeFragment(item.entity, no_evidence_text(item.entity), t, ())
                    fragments.append(frag)
                    seen.setdefault(resolved[item.entity.canonical].casefold(), set()).update(d.id for d in docs)
                outline = aggregate(outline, bundle, fragments, plan)
                rec.fragments = fragments
                rec.summaries = summaries
            rec.outline = outline
            record.steps.append(rec)

        last = record.steps[-1].reasoning
        forced = last.needs_retrieval
        transcript = []
        record.answer = generate_answer(log, knowledge(), question, history, forced, config, transcript=transcript)
        record.answerer = transcript[0]
    except Exception as exc:  # noqa: BLE001 - any failure marks the record, see docstring
        logger.warning("question %s failed: %s", question.id, exc)
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
    record.request_log = list(log.log)
    record.wall_time_ms = int((time.perf_counter() - start) * 1000)
    return record


def run_batch(
    questions: Sequence[Question],
    config: RunConfig,
    backend: ChatBackend,
    index: Searcher,
    reranker: Reranker | None = None,
    parallelism: int = 1,
) -> list[TrajectoryRecord]:
    """Run every question; results come back in input order."""
    check_positive_int(parallelism, "parallelism")
    if parallelism == 1:
        return [run_question(q, config, backend, index, reranker) for q in questions]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda q: run_question(q, config, backend, index, reranker), questions))


@dataclass
class IterationStats:
    histogram: dict[int, int]
    mean: float | None
    n: int

    def to_table(self) -> str:
        lines = ["rounds  count"]
        lines.extend(f"{r:>6}  {c:>5}" for r, c in self.histogram.items())
        mean = "n/a" if self.mean is None else f"{self.mean:.2f}"
        lines.append(f"mean rounds: {mean} (n={self.n})")
        return "\n".join(lines)

    def to_csv(self) -> str:
        rows = ["rounds,count"] + [f"{r},{c}" for r, c in self.histogram.items()]
        return "\n".join(rows) + "\n"


def iteration_stats(records: Iterable[TrajectoryRecord]) -> IterationStats:
    """Histogram of retrieval rounds over successful trajectories."""
    rounds = [r.retrieval_rounds for r in records if not r.failed]
    hist: dict[int, int] = {}
    for n in sorted(rounds):
        hist[n] = hist.get(n, 0) + 1
    mean = sum(rounds) / len(rounds) if rounds else None
    return IterationStats(hist, mean, len(rounds))


class DualRAG(BaseEstimator):
    """Iterative retrieval-augmented QA with an entity-keyed knowledge outline.

    ``fit`` indexes a corpus (or adopts a prebuilt ``retriever``); ``predict``
    answers questions. Hyperparameters mirror :class:`RunConfig`, so
    ``get_params``/``set_params``/``clone`` work as usual.

    Parameters
    ----------
    backend : ChatBackend
        Serves every model role (reasoner, entity identifier, summarizer,
        answerer).
    reranker : Reranker, optional
        Defaults to :class:`JaccardReranker`.
    retriever : Searcher, optional
        Used instead of building a BM25 index in ``fit``.
    max_iterations, recall_k, rerank_k : int
        Loop cap and retrieval depths (5, 50, 10).
    ablation_no_r, ablation_no_ei, ablation_no_ko : bool
        Disable retrieval triggering, entity identification or the
        knowledge outline respectively.
    parallelism : int
        Concurrent questions in ``run_batch``/``predict``.

    Examples
    --------
    >>> model = DualRAG(backend=ScriptedBackend.from_jsonl("case_script.jsonl"))
    >>> model.fit(read_corpus("case_corpus.jsonl")).predict([question])  # doctest: +SKIP
    ['El extraño viaje']
    """

    def __init__(
        self,
        backend: ChatBackend | None = None,
        reranker: Reranker | None = None,
        retriever: Searcher | None = None,
        max_iterations: int = 5,
        recall_k: int = 50,
        rerank_k: int = 10,
        ablation_no_r: bool = False,
        ablation_no_ei: bool = False,
        ablation_no_ko: bool = False,
        temperature: float = 0.0,
        max_tokens: int = 1024,
        k1: float = 1.2,
        b: float = 0.75,
        parallelism: int = 1,
    ):
        self.backend = backend
        self.reranker = reranker
        self.retriever = retriever
        self.max_iterations = max_iterations
        self.recall_k = recall_k
        self.rerank_k = rerank_k
        self.ablation_no_r = ablation_no_r
        self.ablation_no_ei = ablation_no_ei
        self.ablation_no_ko = ablation_no_ko
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.k1 = k1
        self.b = b
        self.parallelism = parallelism

    def _run_config(self) -> RunConfig:
        return RunConfig(
            max_iterations=self.max_iterations,
            recall_k=self.recall_k,
            rerank_k=self.rerank_k,
            ablation_no_r=self.ablation_no_r,
            ablation_no_ei=self.ablation_no_ei,
            ablation_no_ko=self.ablation_no_ko,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )

    def fit(self, X=None, y=None) -> "DualRAG":
        if self.backend is None:
            raise ValueError("DualRAG needs a chat backend")
        self.config_ = self._run_config()
        check_positive_int(self.parallelism, "parallelism")
        if self.retriever is not None:
            self.index_ = self.retriever
        elif isinstance(X, BM25Index):
            self.index_ = X
        else:
            if X is None:
                raise ValueError("fit needs a corpus when no retriever is configured")
            self.index_ = BM25Index(k1=self.k1, b=self.b).fit(check_documents(X))
        self.reranker_ = self.reranker or JaccardReranker()
        return self

    def run(self, question) -> TrajectoryRecord:
        check_is_fitted(self, "index_")
        (q,) = check_questions([question])
        return run_question(q, self.config_, self.backend, self.index_, self.reranker_)

    def run_batch(self, X) -> list[TrajectoryRecord]:
        check_is_fitted(self, "index_")
        questions = check_questions(X)
        return run_batch(questions, self.config_, self.backend, self.index_, self.reranker_, self.parallelism)

    def predict(self, X) -> list[str]:
        """Answers in input order; failed questions yield an empty string."""
        return [r.answer_text for r in self.run_batch(X)]

    def score(self, X, y=None) -> float:
        """Mean exact match. ``y`` overrides the questions' gold answers."""
        from .metrics import exact_match

        questions = check_questions(X)
        preds = self.predict(questions)
        golds = list(y) if y is not None else [list(q.gold_answers) for q in questions]
        if not preds:
            return 0.0
        return sum(exact_match(p, g) for p, g in zip(preds, golds)) / len(preds)
