"""Domain types and the entity-keyed knowledge outline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Iterator

from .exceptions import DuplicateIteration, OutlineError, UnknownEntity

EMPTY_OUTLINE_TEXT = "No knowledge collected yet."


def _fold(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()
    gold_support_doc_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        object.__setattr__(self, "gold_support_doc_ids", frozenset(self.gold_support_doc_ids))
        if any(not g or not g.strip() for g in self.gold_answers):
            raise ValueError(f"question {self.id!r} has an empty gold answer")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "gold_answers": list(self.gold_answers),
            "gold_support_doc_ids": sorted(self.gold_support_doc_ids),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Question":
        return cls(
            id=str(data["id"]),
            text=data["text"],
            gold_answers=tuple(data.get("gold_answers", ())),
            gold_support_doc_ids=frozenset(data.get("gold_support_doc_ids", ())),
        )


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str
    score: float | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"document {self.id!r} has empty text")

    def with_score(self, score: float) -> "Document":
        return Document(self.id, self.title, self.text, score)

    def to_dict(self) -> dict:
        out = {"id": self.id, "title": self.title, "text": self.text}
        if self.score is not None:
            out["score"] = self.score
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Document":
        return cls(str(data["id"]), data.get("title", ""), data["text"], data.get("score"))


@dataclass(frozen=True)
class EntityKey:
    """An entity name plus the surface forms known to refer to it.

    Alias comparison is case-insensitive and whitespace-normalised.
    """

    canonical: str
    aliases: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.canonical or not self.canonical.strip():
            raise ValueError("entity canonical name must be non-empty")
        object.__setattr__(self, "aliases", frozenset(self.aliases) | {self.canonical})

    def matches(self, name: str) -> bool:
        folded = _fold(name)
        return any(_fold(a) == folded for a in self.aliases)

    def with_aliases(self, names: Iterable[str]) -> "EntityKey":
        known = {_fold(a) for a in self.aliases}
        extra = {n for n in names if _fold(n) not in known}
        if not extra:
            return self
        return EntityKey(self.canonical, self.aliases | extra)


@dataclass(frozen=True)
class KnowledgeFragment:
    entity: EntityKey
    text: str
    iteration: int
    source_doc_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("fragment text must be non-empty")
        if self.iteration < 1:
            raise ValueError(f"fragment iteration must be >= 1, got {self.iteration}")
        object.__setattr__(self, "source_doc_ids", tuple(self.source_doc_ids))


class KnowledgeOutline:
    """Entity-keyed, insertion-ordered store of knowledge fragments.

    Instances are immutable: :meth:`merge` and :meth:`link_synonym` return a
    new outline and leave the receiver untouched, so snapshots taken during a
    run stay valid.
    """

    __slots__ = ("_keys", "_fragments")

    def __init__(self):
        self._keys: dict[str, EntityKey] = {}
        self._fragments: dict[str, tuple[KnowledgeFragment, ...]] = {}

    def _copy(self) -> "KnowledgeOutline":
        new = KnowledgeOutline()
        new._keys = dict(self._keys)
        new._fragments = dict(self._fragments)
        return new

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self) -> Iterator[str]:
        return iter(self._keys)

    def __bool__(self) -> bool:
        return bool(self._keys)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.resolve(name) is not None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeOutline):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        counts = ", ".join(f"{k!r}: {len(v)}" for k, v in self._fragments.items())
        return f"KnowledgeOutline({{{counts}}})"

    @property
    def entities(self) -> list[EntityKey]:
        return list(self._keys.values())

    def resolve(self, name: str) -> str | None:
        """Canonical name of the entry that ``name`` refers to, if any."""
        folded = _fold(name)
        for canonical, key in self._keys.items():
            if _fold(canonical) == folded:
                return canonical
        for canonical, key in self._keys.items():
            if any(_fold(a) == folded for a in key.aliases):
                return canonical
        return None

    def key(self, name: str) -> EntityKey:
        canonical = self.resolve(name)
        if canonical is None:
            raise UnknownEntity(f"unknown entity {name!r}")
        return self._keys[canonical]

    def lookup(self, name: str) -> tuple[KnowledgeFragment, ...]:
        canonical = self.resolve(name)
        if canonical is None:
            raise UnknownEntity(f"unknown entity {name!r}")
        return self._fragments[canonical]

    def _resolve_key(self, entity: EntityKey) -> str | None:
        canonical = self.resolve(entity.canonical)
        if canonical is not None:
            return canonical
        for alias in sorted(entity.aliases):
            canonical = self.resolve(alias)
            if canonical is not None:
                return canonical
        return None

    def merge(self, fragment: KnowledgeFragment) -> "KnowledgeOutline":
        canonical = self._resolve_key(fragment.entity)
        new = self._copy()
        if canonical is None:
            new._keys[fragment.entity.canonical] = fragment.entity
            new._fragments[fragment.entity.canonical] = (fragment,)
            return new
        existing = self._fragments[canonical]
        latest = existing[-1].iteration if existing else 0
        if any(f.iteration == fragment.iteration for f in existing):
            raise DuplicateIteration(
                f"entity {canonical!r} already has a fragment for iteration {fragment.iteration}"
            )
        if fragment.iteration < latest:
            raise OutlineError(
                f"fragment for {canonical!r} at iteration {fragment.iteration} "
                f"arrives after iteration {latest}"
            )
        new._fragments[canonical] = existing + (fragment,)
        return new

    def link_synonym(self, new_entity: EntityKey, prior_canonical: str) -> "KnowledgeOutline":
        canonical = self.resolve(prior_canonical)
        if canonical is None:
            raise UnknownEntity(f"cannot link to unknown entity {prior_canonical!r}")
        key = self._keys[canonical]
        linked = key.with_aliases(new_entity.aliases)
        if linked is key:
            return self
        new = self._copy()
        new._keys[canonical] = linked
        return new

    def render(self) -> str:
        if not self._keys:
            return EMPTY_OUTLINE_TEXT
        sections = []
        for canonical, fragments in self._fragments.items():
            lines = [f"## {canonical}"]
            lines.extend(f"- {f.text}" for f in fragments)
            sections.append("\n".join(lines))
        return "\n\n".join(sections)

    def to_dict(self) -> dict:
        return {
            "entities": [
                {
                    "canonical": canonical,
                    "aliases": sorted(self._keys[canonical].aliases),
                    "fragments": [
                        {
                            "text": f.text,
                            "iteration": f.iteration,
                            "source_doc_ids": list(f.source_doc_ids),
                        }
                        for f in fragments
                    ],
                }
                for canonical, fragments in self._fragments.items()
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeOutline":
        outline = cls()
        for entry in data.get("entities", []):
            key = EntityKey(entry["canonical"], frozenset(entry.get("aliases", ())))
            outline._keys[key.canonical] = key
            outline._fragments[key.canonical] = tuple(
                KnowledgeFragment(key, f["text"], f["iteration"], tuple(f.get("source_doc_ids", ())))
                for f in entry.get("fragments", [])
            )
        return outline


def merge_fragment(outline: KnowledgeOutline, fragment: KnowledgeFragment) -> KnowledgeOutline:
    return outline.merge(fragment)


def render_outline(outline: KnowledgeOutline) -> str:
    return outline.render()


def link_synonym(outline: KnowledgeOutline, new_entity: EntityKey, prior_canonical: str) -> KnowledgeOutline:
    return outline.link_synonym(new_entity, prior_canonical)


@dataclass(frozen=True)
class ReasoningStep:
    iteration: int
    rationale: str
    needs_retrieval: bool

    def __post_init__(self):
        if not self.rationale or not self.rationale.strip():
            raise ValueError("rationale must be non-empty")
        if self.iteration < 1:
            raise ValueError("iteration must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReasoningHistory:
    steps: tuple[ReasoningStep, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for expected, step in enumerate(self.steps, start=1):
            if step.iteration != expected:
                raise ValueError(
                    f"reasoning history must be contiguous from 1; step {expected} has iteration {step.iteration}"
                )

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: ReasoningStep) -> "ReasoningHistory":
        return ReasoningHistory(self.steps + (step,))

    def render(self) -> str:
        if not self.steps:
            return "Reasoning history: none yet."
        lines = ["Reasoning history:"]
        lines.extend(f"Step {s.iteration}: {s.rationale}" for s in self.steps)
        return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    """Loop limits, retrieval depths and ablation switches for one run."""

    max_iterations: int = 5
    recall_k: int = 50
    rerank_k: int = 10
    ablation_no_r: bool = False
    ablation_no_ei: bool = False
    ablation_no_ko: bool = False
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        for name in ("max_iterations", "recall_k", "rerank_k", "max_tokens"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.rerank_k > self.recall_k:
            raise ValueError(f"rerank_k ({self.rerank_k}) must not exceed recall_k ({self.recall_k})")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


__all__ = [
    "EMPTY_OUTLINE_TEXT",
    "Document",
    "EntityKey",
    "KnowledgeFragment",
    "KnowledgeOutline",
    "Question",
    "ReasoningHistory",
    "ReasoningStep",
    "RunConfig",
    "link_synonym",
    "merge_fragment",
    "render_outline",
]
