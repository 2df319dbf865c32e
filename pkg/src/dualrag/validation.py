"""Input coercion helpers used at the public API boundary."""

from __future__ import annotations

from typing import Any, Iterable, Mapping

from .types import Document, Question


def check_document(obj: Any) -> Document:
    if isinstance(obj, Document):
        return obj
    if isinstance(obj, Mapping):
        return Document.from_dict(obj)
    raise TypeError(f"expected a Document or mapping, got {type(obj).__name__}")


def check_documents(docs: Iterable[Any]) -> list[Document]:
    if isinstance(docs, (str, bytes)):
        raise TypeError("expected an iterable of documents, got a string")
    return [check_document(d) for d in docs]


def check_question(obj: Any, default_id: str = "q0") -> Question:
    """Accept a Question, a mapping with at least ``text``, or a bare string."""
    if isinstance(obj, Question):
        return obj
    if isinstance(obj, str):
        return Question(default_id, obj)
    if isinstance(obj, Mapping):
        data = dict(obj)
        data.setdefault("id", default_id)
        if "text" not in data and "question" in data:
            data["text"] = data["question"]
        return Question.from_dict(data)
    raise TypeError(f"expected a Question, mapping or string, got {type(obj).__name__}")


def check_questions(questions: Iterable[Any]) -> list[Question]:
    if isinstance(questions, (str, Question)):
        questions = [questions]
    out = [check_question(q, default_id=f"q{i}") for i, q in enumerate(questions)]
    ids = [q.id for q in out]
    if len(set(ids)) != len(ids):
        raise ValueError("question ids must be unique within a batch")
    return out


def check_positive_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return value
