"""Progressive knowledge aggregation: per-entity summaries merged into the outline."""

from __future__ import annotations

import re
from typing import Sequence

from .exceptions import NoEvidence, ParseError
from .llm import ChatBackend, PromptTemplate, get_template, make_tag
from .raq import EntityQueryPlan, Exchange, ask, question_block
from .retrieval import RetrievalBundle
from .types import (
    Document,
    EntityKey,
    KnowledgeFragment,
    KnowledgeOutline,
    Question,
    ReasoningHistory,
    RunConfig,
)

IRRELEVANT = "IRRELEVANT"
_SOURCES_RE = re.compile(r"^\s*\**SOURCES\**\s*:\s*(.*)$", re.IGNORECASE)


def no_evidence_text(entity: EntityKey | str) -> str:
    name = entity.canonical if isinstance(entity, EntityKey) else entity
    return f"No relevant information found for {name}."


def render_documents(docs: Sequence[Document]) -> str:
    return "\n".join(f"[{d.id}] {d.title}: {d.text}" for d in docs)


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


def resolve_citations(citation: str, docs: Sequence[Document]) -> list[str]:
    """Map a ``SOURCES:`` line to doc ids; citations may name ids or titles."""
    items = {_fold(part.strip(" []\"'")) for part in citation.split(",")}
    whole = _fold(citation)
    out = []
    for doc in docs:
        title = _fold(doc.title)
        if _fold(doc.id) in items or (title and title in items) or ("," in doc.title and title in whole):
            if doc.id not in out:
                out.append(doc.id)
    return out


def parse_summary(text: str, docs: Sequence[Document]) -> tuple[str | None, list[str]]:
    """Return ``(summary, source_ids)``; ``summary`` is None for an IRRELEVANT reply."""
    stripped = text.strip()
    if stripped.strip(".*` ").upper() == IRRELEVANT:
        return None, []
    lines = stripped.splitlines()
    for i in range(len(lines) - 1, -1, -1):
        m = _SOURCES_RE.match(lines[i])
        if m:
            summary = "\n".join(lines[:i] + lines[i + 1 :]).strip()
            if not summary:
                raise ParseError("summary is empty", raw_text=text)
            if summary.upper() == IRRELEVANT:
                return None, []
            return summary, resolve_citations(m.group(1), docs)
    raise ParseError("summary has no SOURCES line", raw_text=text)


def summarize_entity(
    backend: ChatBackend,
    question: Question,
    history: ReasoningHistory,
    entity: EntityKey,
    queries: Sequence[str],
    docs: Sequence[Document],
    config: RunConfig | None = None,
    template: PromptTemplate | None = None,
    transcript: list[Exchange] | None = None,
) -> KnowledgeFragment:
    """Summarise ``docs`` for one entity into a fragment tagged with its sources.

    The fragment's iteration is the length of ``history`` (the current step).
    """
    if not docs:
        raise NoEvidence(f"no documents to summarise for {entity.canonical!r}")
    iteration = len(history)
    template = template or get_template("knowledge_summarizer")
    entity_text = f"{entity.canonical} [{', '.join(queries)}]" if queries else entity.canonical
    prompt = template.render(
        question=question_block(question),
        reasoning_history=history.render(),
        entity=entity_text,
        retrieved_docs="\n" + render_documents(docs),
    )
    tag = make_tag("knowledge_summarizer", question.id, iteration, entity.canonical)
    summary, sources = ask(backend, prompt, tag, lambda t: parse_summary(t, docs), config, transcript)
    if summary is None:
        return KnowledgeFragment(entity, no_evidence_text(entity), iteration, ())
    return KnowledgeFragment(entity, summary, iteration, tuple(sources))


def aggregate(
    outline: KnowledgeOutline,
    bundle: RetrievalBundle | None,
    fragments: Sequence[KnowledgeFragment],
    plan: EntityQueryPlan | None = None,
) -> KnowledgeOutline:
    """Fold one iteration's fragments into ``outline``.

    Synonym links declared in ``plan`` are applied first. Fragments are merged
    in the bundle's entity order, so the result does not depend on the order
    in which concurrent summaries finished.
    """
    if plan is not None:
        for new, prior in plan.synonym_links:
            outline = outline.link_synonym(EntityKey(new), prior)
    if bundle is not None:
        order = {name: i for i, name in enumerate(bundle.per_entity)}
        for f in fragments:
            if f.entity.canonical not in order:
                raise ValueError(f"fragment entity {f.entity.canonical!r} is not in the retrieval bundle")
        if len({f.entity.canonical for f in fragments}) != len(fragments):
            raise ValueError("more than one fragment for the same entity")
        fragments = sorted(fragments, key=lambda f: order[f.entity.canonical])
    for fragment in fragments:
        outline = outline.merge(fragment)
    return outline
