"""Reasoning-augmented querying: reasoner, entity identifier and answerer."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, TypeVar

from .exceptions import EmptyPlan, ParseError
from .llm import ChatBackend, ChatRequest, PromptTemplate, get_template, make_tag
from .types import EntityKey, KnowledgeOutline, Question, ReasoningHistory, ReasoningStep, RunConfig

RETRIEVAL_MARKER = "Reason interrupt for retrieval"
COMPLETED_MARKER = "Reasoning completed"
_MARKER_RE = re.compile(
    r"(" + re.escape(RETRIEVAL_MARKER) + r"|" + re.escape(COMPLETED_MARKER) + r")",
    re.IGNORECASE,
)
_ITEM_RE = re.compile(r"^\s*\(?\s*(\d+)\s*[).:]\s*(.+?)\s*:\s*\[(.*)\]\s*$")
_SAME_AS_RE = re.compile(r"^\s*SAME-AS\s*:\s*(.+?)\s*=\s*(.+?)\s*$", re.IGNORECASE)

REPROMPTS = {
    "reasoner": f'Your reply must end with one of the two markers: "{COMPLETED_MARKER}" or "{RETRIEVAL_MARKER}".',
    "entity_identifier": "Your reply must list each entity on its own line as: (1) <Entity>: [<keyword 1>, <keyword 2>]",
    "knowledge_summarizer": 'Your reply must end with a line "SOURCES: ..." or be the single word IRRELEVANT.',
    "answerer": "Your reply must be a short answer phrase.",
    "judge": "Reply with Yes or No only.",
}

T = TypeVar("T")


@dataclass
class Exchange:
    """One logical model call: the prompt as first rendered and the accepted reply."""

    tag: str
    prompt: str
    response: str
    attempts: int = 1

    def to_dict(self) -> dict:
        return {"tag": self.tag, "prompt": self.prompt, "response": self.response, "attempts": self.attempts}

    @classmethod
    def from_dict(cls, data: dict) -> "Exchange":
        return cls(data["tag"], data["prompt"], data["response"], data.get("attempts", 1))


def ask(
    backend: ChatBackend,
    prompt: str,
    tag: str,
    parse: Callable[[str], T],
    config: RunConfig | None = None,
    transcript: list[Exchange] | None = None,
) -> T:
    """Send ``prompt``; on a parse failure reprompt once, then give up."""
    config = config or RunConfig()
    role = tag.split("/", 1)[0]
    text = backend.complete(ChatRequest(prompt, tag, config.temperature, config.max_tokens))
    attempts = 1
    try:
        value = parse(text)
    except ParseError:
        retry = f"{prompt}\n\n{REPROMPTS.get(role, 'Please follow the output format.')}"
        text = backend.complete(ChatRequest(retry, tag, config.temperature, config.max_tokens))
        attempts = 2
        value = parse(text)
    if transcript is not None:
        transcript.append(Exchange(tag, prompt, text, attempts))
    return value


def _knowledge_text(knowledge: KnowledgeOutline | str) -> str:
    return knowledge if isinstance(knowledge, str) else knowledge.render()


def question_block(question: Question) -> str:
    return f"Question: {question.text}"


# -- reasoner ----------------------------------------------------------------


def parse_reasoner_output(text: str) -> tuple[str, bool]:
    """Split a reasoner reply into (rationale, needs_retrieval).

    The last marker in the reply decides the flag; everything before it is
    the rationale.
    """
    matches = list(_MARKER_RE.finditer(text))
    if not matches:
        raise ParseError("reasoner reply has no terminal marker", raw_text=text)
    last = matches[-1]
    needs_retrieval = last.group(1).lower() == RETRIEVAL_MARKER.lower()
    rationale = text[: last.start()].strip().rstrip("[(*").strip()
    if not rationale:
        raise ParseError("reasoner reply has a marker but no rationale", raw_text=text)
    return rationale, needs_retrieval


def reason_step(
    backend: ChatBackend,
    outline: KnowledgeOutline | str,
    question: Question,
    history: ReasoningHistory,
    config: RunConfig | None = None,
    template: PromptTemplate | None = None,
    transcript: list[Exchange] | None = None,
) -> ReasoningStep:
    template = template or get_template("reasoner")
    iteration = len(history) + 1
    prompt = template.render(
        knowledge=_knowledge_text(outline),
        question=question_block(question),
        reasoning_history=history.render(),
    )
    tag = make_tag("reasoner", question.id, iteration)
    rationale, flag = ask(backend, prompt, tag, parse_reasoner_output, config, transcript)
    return ReasoningStep(iteration, rationale, flag)


# -- entity identifier -------------------------------------------------------


@dataclass
class PlanItem:
    entity: EntityKey
    queries: list[str]


@dataclass
class EntityQueryPlan:
    iteration: int
    items: list[PlanItem] = field(default_factory=list)
    synonym_links: list[tuple[str, str]] = field(default_factory=list)

    @property
    def entities(self) -> list[EntityKey]:
        return [item.entity for item in self.items]

    @property
    def query_count(self) -> int:
        return sum(len(item.queries) for item in self.items)

    def serialize(self) -> str:
        lines = [
            f"({n}) {item.entity.canonical}: [{', '.join(item.queries)}]"
            for n, item in enumerate(self.items, start=1)
        ]
        lines.extend(f"SAME-AS: {new} = {prior}" for new, prior in self.synonym_links)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "items": [
                {"entity": i.entity.canonical, "aliases": sorted(i.entity.aliases), "queries": list(i.queries)}
                for i in self.items
            ],
            "synonym_links": [list(link) for link in self.synonym_links],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EntityQueryPlan":
        return cls(
            iteration=data["iteration"],
            items=[
                PlanItem(EntityKey(i["entity"], frozenset(i.get("aliases", ()))), list(i["queries"]))
                for i in data["items"]
            ],
            synonym_links=[tuple(link) for link in data.get("synonym_links", [])],
        )


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


def dedup_queries(queries: list[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for q in queries:
        q = " ".join(q.split())
        if q and _fold(q) not in seen:
            seen.add(_fold(q))
            out.append(q)
    return out


def parse_entity_plan(text: str) -> tuple[list[tuple[str, list[str]]], list[tuple[str, str]]]:
    """Parse numbered ``(n) Entity: [q1, q2]`` lines and ``SAME-AS`` lines."""
    items: list[tuple[str, list[str]]] = []
    links: list[tuple[str, str]] = []
    for line in text.splitlines():
        link = _SAME_AS_RE.match(line)
        if link:
            links.append((link.group(1).strip(), link.group(2).strip()))
            continue
        m = _ITEM_RE.match(line)
        if m:
            name = m.group(2).strip().strip("*\"'").strip()
            queries = [q.strip().strip("\"'").strip() for q in m.group(3).split(",")]
            if name:
                items.append((name, [q for q in queries if q]))
    if not items:
        raise ParseError("entity identifier reply has no entity lines", raw_text=text)
    return items, links


def build_plan(
    iteration: int,
    items: list[tuple[str, list[str]]],
    links: list[tuple[str, str]],
    outline: KnowledgeOutline | None = None,
) -> EntityQueryPlan:
    """Normalise parsed entity lines into a plan.

    Queries are deduplicated case-insensitively, lines that name the same
    entity (directly, via a declared synonym, or via an outline alias) are
    merged, and synonym links to entities absent from the outline are dropped.
    """
    outline = outline or KnowledgeOutline()
    valid_links: list[tuple[str, str]] = []
    link_map: dict[str, str] = {}
    for new, prior in links:
        canonical = outline.resolve(prior)
        if canonical is None or _fold(new) == _fold(canonical):
            continue
        if (new, canonical) not in valid_links:
            valid_links.append((new, canonical))
            link_map[_fold(new)] = canonical

    merged: dict[str, PlanItem] = {}
    for name, queries in items:
        target = link_map.get(_fold(name)) or outline.resolve(name) or name
        key = _fold(target)
        if key in merged:
            item = merged[key]
            item.entity = item.entity.with_aliases([name])
            item.queries = dedup_queries(item.queries + queries)
        else:
            merged[key] = PlanItem(EntityKey(name), dedup_queries(queries))
    plan_items = [item for item in merged.values() if item.queries]
    if not plan_items:
        raise EmptyPlan(f"iteration {iteration}: no entity carries a usable query")
    return EntityQueryPlan(iteration, plan_items, valid_links)


def identify_entities(
    backend: ChatBackend,
    outline: KnowledgeOutline | str,
    question: Question,
    step: ReasoningStep,
    history: ReasoningHistory | None = None,
    config: RunConfig | None = None,
    template: PromptTemplate | None = None,
    transcript: list[Exchange] | None = None,
) -> EntityQueryPlan:
    """Ask the entity identifier which entities to retrieve for, and how.

    ``history`` should already include ``step``; when omitted, only ``step``
    is shown to the model.
    """
    if not step.needs_retrieval:
        raise ValueError("identify_entities called for a step that did not request retrieval")
    template = template or get_template("entity_identifier")
    if history is not None:
        history_text = history.render()
    else:
        history_text = f"Reasoning history:\nStep {step.iteration}: {step.rationale}"
    structured = outline if isinstance(outline, KnowledgeOutline) else None
    knowledge = _knowledge_text(outline)
    if structured:
        names = "; ".join(k.canonical for k in structured.entities)
        knowledge = f"Known entities: {names}\n\n{knowledge}"
    prompt = template.render(
        knowledge=knowledge,
        question=question_block(question),
        reasoning_history=history_text,
    )
    tag = make_tag("entity_identifier", question.id, step.iteration)
    items, links = ask(backend, prompt, tag, parse_entity_plan, config, transcript)
    return build_plan(step.iteration, items, links, structured)


# -- answerer ----------------------------------------------------------------


@dataclass(frozen=True)
class AnswerResult:
    answer_text: str
    forced: bool = False

    def __post_init__(self):
        if not self.answer_text or not self.answer_text.strip():
            raise ValueError("answer text must be non-empty")

    def to_dict(self) -> dict:
        return {"answer_text": self.answer_text, "forced": self.forced}


_ANSWER_PREFIX_RE = re.compile(r"^(final answer|answer|output)\s*:\s*", re.IGNORECASE)


def parse_answer(text: str) -> str:
    for line in text.splitlines():
        line = _ANSWER_PREFIX_RE.sub("", line.strip()).strip().strip("*\"'`").strip()
        if line:
            return line
    raise ParseError("empty answer", raw_text=text)


def generate_answer(
    backend: ChatBackend,
    outline: KnowledgeOutline | str,
    question: Question,
    history: ReasoningHistory,
    forced: bool = False,
    config: RunConfig | None = None,
    template: PromptTemplate | None = None,
    transcript: list[Exchange] | None = None,
) -> AnswerResult:
    template = template or get_template("answerer")
    prompt = template.render(
        knowledge=_knowledge_text(outline),
        question=question_block(question),
        reasoning_history=history.render(),
    )
    tag = make_tag("answerer", question.id, len(history))
    answer = ask(backend, prompt, tag, parse_answer, config, transcript)
    return AnswerResult(answer, forced)
