"""Turn trajectories into supervised fine-tuning records for the three roles."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .pipeline import TrajectoryRecord
from .pka import IRRELEVANT
from .raq import EntityQueryPlan, PlanItem, parse_reasoner_output
from .retrieval import tokenize
from .types import Question

logger = logging.getLogger(__name__)

CAPABILITIES = ("reasoner", "entity_identifier", "knowledge_summarizer")


@dataclass
class SftRecord:
    capability: str
    prompt: str
    target: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability {self.capability!r}")
        if not self.prompt.strip() or not self.target.strip():
            raise ValueError("SFT prompt and target must be non-empty")

    def to_dict(self) -> dict:
        return {"capability": self.capability, "prompt": self.prompt, "target": self.target, "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, d: dict) -> "SftRecord":
        return cls(d["capability"], d["prompt"], d["target"], dict(d.get("meta", {})))


class SimilarityScorer(Protocol):
    def score(self, a: str, b: str) -> float: ...


class JaccardScorer:
    """Token-set Jaccard similarity; identical strings score 1."""

    def score(self, a: str, b: str) -> float:
        ta, tb = set(tokenize(a)), set(tokenize(b))
        if not ta and not tb:
            return 1.0
        return len(ta & tb) / len(ta | tb)


def _meta(traj: TrajectoryRecord, iteration: int, **extra) -> dict:
    return {"question_id": traj.question.id, "iteration": iteration, **extra}


def derive_reasoner_records(traj: TrajectoryRecord) -> list[SftRecord]:
    """One record per reasoning step, target = the teacher's raw reply."""
    if traj.failed:
        return []
    out = []
    for step in traj.steps:
        raw = step.reasoner.response.strip()
        parse_reasoner_output(raw)
        out.append(SftRecord("reasoner", step.reasoner.prompt, raw, _meta(traj, step.reasoning.iteration)))
    return out


def dedup_plan(plan: EntityQueryPlan, scorer: SimilarityScorer, threshold: float = 0.8) -> EntityQueryPlan:
    """Merge near-duplicate entities, then drop near-duplicate queries.

    Both passes are greedy and keep the first occurrence, so every surviving
    pair scores below ``threshold`` and a second application is a no-op.
    """
    kept: list[PlanItem] = []
    for item in plan.items:
        for target in kept:
            if scorer.score(item.entity.canonical, target.entity.canonical) >= threshold:
                target.entity = target.entity.with_aliases(item.entity.aliases)
                target.queries = target.queries + list(item.queries)
                break
        else:
            kept.append(PlanItem(item.entity, list(item.queries)))
    for item in kept:
        queries: list[str] = []
        for q in item.queries:
            if all(scorer.score(q, k) < threshold for k in queries):
                queries.append(q)
        item.queries = queries
    return EntityQueryPlan(plan.iteration, kept, list(plan.synonym_links))


def derive_ei_records(
    traj: TrajectoryRecord, scorer: SimilarityScorer | None = None, threshold: float = 0.8
) -> list[SftRecord]:
    """One record per retrieval round that went through the entity identifier."""
    if traj.failed:
        return []
    scorer = scorer or JaccardScorer()
    out = []
    for step in traj.steps:
        if step.plan is None or step.entity_identifier is None:
            continue
        target = dedup_plan(step.plan, scorer, threshold).serialize()
        out.append(
            SftRecord("entity_identifier", step.entity_identifier.prompt, target, _meta(traj, step.reasoning.iteration))
        )
    return out


def derive_ks_records(traj: TrajectoryRecord, question: Question | None = None) -> list[SftRecord]:
    """One record per summarised (step, entity).

    The target keeps the teacher's summary when the fragment cites a gold
    supporting document and is ``IRRELEVANT`` otherwise.
    """
    if traj.failed:
        return []
    question = question or traj.question
    gold = question.gold_support_doc_ids
    if not gold:
        logger.warning("question %s has no supporting-document ids; no summarizer records", question.id)
        return []
    out = []
    for step in traj.steps:
        if not step.fragments or not step.summaries:
            continue
        by_tag = {s.tag: s for s in step.summaries}
        for frag in step.fragments:
            tag = f"knowledge_summarizer/{traj.question.id}/{frag.iteration}/{frag.entity.canonical}"
            exchange = by_tag.get(tag)
            if exchange is None:
                continue
            if gold.intersection(frag.source_doc_ids):
                target = f"{frag.text}\nSOURCES: {', '.join(frag.source_doc_ids)}"
            else:
                target = IRRELEVANT
            out.append(
                SftRecord(
                    "knowledge_summarizer",
                    exchange.prompt,
                    target,
                    _meta(traj, frag.iteration, entity=frag.entity.canonical),
                )
            )
    return out


def derive_all(
    trajectories: Iterable[TrajectoryRecord],
    questions: dict[str, Question] | None = None,
    scorer: SimilarityScorer | None = None,
    threshold: float = 0.8,
) -> list[SftRecord]:
    records: list[SftRecord] = []
    for traj in trajectories:
        q = (questions or {}).get(traj.question.id, traj.question)
        records += derive_reasoner_records(traj)
        records += derive_ei_records(traj, scorer, threshold)
        records += derive_ks_records(traj, q)
    return records


def summarize_counts(records: Sequence[SftRecord]) -> dict[str, int]:
    counts = {c: 0 for c in CAPABILITIES}
    for r in records:
        counts[r.capability] += 1
    counts["sum"] = sum(counts[c] for c in CAPABILITIES)
    return counts


def format_summary(counts: dict[str, int]) -> str:
    labels = {
        "reasoner": "Reasoner",
        "entity_identifier": "Entity Identifier",
        "knowledge_summarizer": "Knowledge Summarizer",
    }
    width = max(len(v) for v in labels.values())
    lines = [f"{'Capability':<{width}}  Count"]
    lines += [f"{labels[c]:<{width}}  {counts[c]:,}" for c in CAPABILITIES]
    lines.append(f"{'Sum':<{width}}  {counts['sum']:,}")
    return "\n".join(lines)


def export_jsonl(records: Sequence[SftRecord], path: str | Path) -> dict[str, int]:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
    return summarize_counts(records)


def load_jsonl(path: str | Path) -> list[SftRecord]:
    with open(path, encoding="utf-8") as fh:
        return [SftRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
