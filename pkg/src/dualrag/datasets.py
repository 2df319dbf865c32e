"""Loaders for HotpotQA, 2WikiMultihopQA and MuSiQue files.

Each loader returns the questions plus a corpus made of every passage in the
file, supporting or not. Passages are deduplicated on (title, text), and doc
ids are content hashes, so the same passage gets the same id in every file.
"""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path
from typing import Any, Iterator, Sequence

from .exceptions import FormatError
from .types import Document, Question

FORMATS = ("hotpotqa", "twowiki", "musique")


def passage_id(title: str, text: str) -> str:
    digest = hashlib.sha1(f"{title}\x00{text}".encode("utf-8")).hexdigest()
    return f"d{digest[:16]}"


def _iter_records(path: Path) -> Iterator[dict]:
    raw = path.read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        yield from data
        return
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON line ({exc})") from exc


class _Corpus:
    def __init__(self):
        self.docs: dict[str, Document] = {}

    def add(self, title: str, text: str) -> str:
        doc_id = passage_id(title, text)
        if doc_id not in self.docs:
            self.docs[doc_id] = Document(doc_id, title, text)
        return doc_id


def _golds(rec: dict) -> tuple[str, ...]:
    answers = [rec["answer"]] if isinstance(rec.get("answer"), str) else list(rec.get("answer") or [])
    answers += list(rec.get("answer_aliases") or [])
    answers += list(rec.get("golden_answers") or [])
    out: list[str] = []
    for a in answers:
        a = str(a).strip()
        if a and a not in out:
            out.append(a)
    return tuple(out)


def _parse_wiki_style(rec: dict, corpus: _Corpus) -> Question:
    # HotpotQA and 2Wiki share context = [[title, [sentences]]] and
    # supporting_facts = [[title, sentence_index]].
    supporting_titles = {title for title, _ in rec.get("supporting_facts", [])}
    support_ids = set()
    for title, sentences in rec["context"]:
        text = " ".join(s.strip() for s in sentences if s.strip())
        if not text:
            continue
        doc_id = corpus.add(title, text)
        if title in supporting_titles:
            support_ids.add(doc_id)
    return Question(
        id=str(rec.get("_id", rec.get("id"))),
        text=rec["question"],
        gold_answers=_golds(rec),
        gold_support_doc_ids=frozenset(support_ids),
    )


def _parse_musique(rec: dict, corpus: _Corpus) -> Question:
    support_ids = set()
    for para in rec["paragraphs"]:
        text = para["paragraph_text"].strip()
        if not text:
            continue
        doc_id = corpus.add(para.get("title", ""), text)
        if para.get("is_supporting"):
            support_ids.add(doc_id)
    return Question(
        id=str(rec["id"]),
        text=rec["question"],
        gold_answers=_golds(rec),
        gold_support_doc_ids=frozenset(support_ids),
    )


_PARSERS = {"hotpotqa": _parse_wiki_style, "twowiki": _parse_wiki_style, "musique": _parse_musique}


def load_dataset(path: str | Path, format: str) -> tuple[list[Question], list[Document]]:
    """Read ``path`` in the given format.

    Returns
    -------
    questions : list of Question
    corpus : list of Document
        Union of all passages in the file, in first-seen order.
    """
    if format not in _PARSERS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    parse = _PARSERS[format]
    corpus = _Corpus()
    questions = []
    for n, rec in enumerate(_iter_records(path)):
        try:
            questions.append(parse(rec, corpus))
        except (KeyError, TypeError, ValueError) as exc:
            rid = rec.get("_id", rec.get("id", "?")) if isinstance(rec, dict) else "?"
            raise FormatError(f"{path}: record #{n} (id={rid}) is not valid {format}: {exc!r}") from exc
    return questions, list(corpus.docs.values())


def sample_questions(questions: Sequence[Any], n: int | None, seed: int = 0) -> list:
    """Seeded sample of ``n`` questions, kept in their original order."""
    if n is None or n >= len(questions):
        return list(questions)
    picked = sorted(random.Random(seed).sample(range(len(questions)), n))
    return [questions[i] for i in picked]
