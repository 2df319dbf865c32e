"""Lexical retrieval: BM25 index, per-entity recall and reranking."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import httpx
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DuplicateDocId,
    EmptyPlan,
    EmptyQuery,
    FormatError,
    ProtocolError,
    TransportError,
)
from .types import Document, EntityKey

_TOKEN_RE = re.compile(r"[^\W_]+")
INDEX_FORMAT = "dualrag-bm25"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


def _doc_tokens(doc: Document) -> list[str]:
    return tokenize(f"{doc.title} {doc.text}")


@runtime_checkable
class Searcher(Protocol):
    def search(self, query: str, k: int) -> list[tuple[str, float]]: ...

    def get_document(self, doc_id: str) -> Document: ...


class BM25Index(BaseEstimator):
    """Okapi BM25 over an in-memory inverted index.

    Parameters
    ----------
    k1 : float, default=1.2
        Term-frequency saturation.
    b : float, default=0.75
        Document-length normalisation strength.

    Attributes
    ----------
    postings_ : dict[str, list[tuple[str, int]]]
        term -> (doc_id, term frequency), sorted by doc_id.
    doc_lengths_ : dict[str, int]
    avg_doc_length_ : float
    doc_count_ : int
    documents_ : dict[str, Document]
        Title and text are indexed together.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b

    def fit(self, documents: Iterable[Document], y=None) -> "BM25Index":
        docs: dict[str, Document] = {}
        lengths: dict[str, int] = {}
        postings: dict[str, list[tuple[str, int]]] = {}
        for doc in documents:
            if doc.id in docs:
                raise DuplicateDocId(f"duplicate document id {doc.id!r}")
            docs[doc.id] = doc
            tokens = _doc_tokens(doc)
            lengths[doc.id] = len(tokens)
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((doc.id, tf))
        for plist in postings.values():
            plist.sort()
        self.documents_ = docs
        self.doc_lengths_ = lengths
        self.postings_ = dict(sorted(postings.items()))
        self.doc_count_ = len(lengths)
        self.avg_doc_length_ = sum(lengths.values()) / len(lengths) if lengths else 0.0
        return self

    @property
    def vocabulary_(self) -> set[str]:
        check_is_fitted(self, "postings_")
        return set(self.postings_)

    def idf(self, term: str) -> float:
        df = len(self.postings_.get(term, ()))
        n = self.doc_count_
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        """Top-``k`` (doc_id, score) pairs, score descending then doc_id ascending.

        Only documents sharing at least one term with the query are returned.
        Repeated query terms count once per occurrence.
        """
        check_is_fitted(self, "postings_")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = tokenize(query)
        if not terms:
            raise EmptyQuery(f"query {query!r} has no indexable terms")
        k1, b, avgdl = self.k1, self.b, self.avg_doc_length_
        scores: dict[str, float] = {}
        for term in terms:
            plist = self.postings_.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_lengths_[doc_id] / avgdl)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:k]

    def get_document(self, doc_id: str) -> Document:
        check_is_fitted(self, "documents_")
        return self.documents_[doc_id]

    def to_dict(self) -> dict:
        check_is_fitted(self, "postings_")
        return {
            "format": INDEX_FORMAT,
            "version": 1,
            "k1": self.k1,
            "b": self.b,
            "doc_count": self.doc_count_,
            "avg_doc_length": self.avg_doc_length_,
            "documents": [d.to_dict() for d in self.documents_.values()],
            "doc_lengths": self.doc_lengths_,
            "postings": {t: [list(p) for p in pl] for t, pl in self.postings_.items()},
        }

    def save(self, path: str | Path) -> str:
        """Write the index as JSON and return its sha256 digest."""
        payload = json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        data = payload.encode("utf-8")
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != INDEX_FORMAT:
            raise FormatError(f"{path} is not a {INDEX_FORMAT} index")
        index = cls(k1=data["k1"], b=data["b"])
        index.documents_ = {d["id"]: Document.from_dict(d) for d in data["documents"]}
        index.doc_lengths_ = {k: int(v) for k, v in data["doc_lengths"].items()}
        index.postings_ = {t: [(d, int(tf)) for d, tf in pl] for t, pl in data["postings"].items()}
        index.doc_count_ = int(data["doc_count"])
        index.avg_doc_length_ = float(data["avg_doc_length"])
        return index


def build_index(corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> BM25Index:
    return BM25Index(k1=k1, b=b).fit(corpus)


def search(index: Searcher, query: str, k: int) -> list[tuple[str, float]]:
    return index.search(query, k)


def read_corpus(path: str | Path) -> list[Document]:
    """Read a JSONL corpus of ``{id, title, text}`` objects."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                docs.append(Document.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad corpus record ({exc})") from exc
    return docs


def write_corpus(documents: Iterable[Document], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            row = {"id": doc.id, "title": doc.title, "text": doc.text}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


# -- rerankers ---------------------------------------------------------------


class Reranker(Protocol):
    def score(self, query_text: str, doc: Document) -> float: ...


class JaccardReranker:
    """Token-set Jaccard overlap between the query and ``title + text``."""

    def score(self, query_text: str, doc: Document) -> float:
        q = set(tokenize(query_text))
        d = set(_doc_tokens(doc))
        union = q | d
        return len(q & d) / len(union) if union else 0.0


class RemoteReranker:
    """POSTs ``{query, documents}`` and expects ``{scores: [...]}`` back."""

    def __init__(self, url: str, timeout: float = 30.0, client: httpx.Client | None = None):
        self.url = url
        self._client = client or httpx.Client(timeout=timeout)

    def score_batch(self, query_text: str, docs: Sequence[Document]) -> list[float]:
        if not docs:
            return []
        payload = {
            "query": query_text,
            "documents": [{"id": d.id, "title": d.title, "text": d.text} for d in docs],
        }
        try:
            resp = self._client.post(self.url, json=payload)
        except httpx.TransportError as exc:
            raise TransportError(f"{self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"{self.url}: HTTP {resp.status_code}")
        try:
            scores = [float(s) for s in resp.json()["scores"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"{self.url}: malformed rerank response") from exc
        if len(scores) != len(docs):
            raise ProtocolError(f"{self.url}: got {len(scores)} scores for {len(docs)} documents")
        return scores

    def score(self, query_text: str, doc: Document) -> float:
        return self.score_batch(query_text, [doc])[0]


class RemoteRetriever:
    """Search contract over HTTP: ``{query, k}`` -> ``{hits: [{id, score}]}``.

    Hit texts are resolved through ``documents`` unless the server includes
    ``title``/``text`` in each hit.
    """

    def __init__(
        self,
        url: str,
        documents: Mapping[str, Document] | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.documents = dict(documents or {})
        self._client = client or httpx.Client(timeout=timeout)

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        if not tokenize(query):
            raise EmptyQuery(f"query {query!r} has no indexable terms")
        try:
            resp = self._client.post(self.url, json={"query": query, "k": k})
        except httpx.TransportError as exc:
            raise TransportError(f"{self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"{self.url}: HTTP {resp.status_code}")
        try:
            hits = resp.json()["hits"]
            out = []
            for hit in hits:
                doc_id = str(hit["id"])
                if "text" in hit and doc_id not in self.documents:
                    self.documents[doc_id] = Document(doc_id, hit.get("title", ""), hit["text"])
                out.append((doc_id, float(hit["score"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"{self.url}: malformed search response") from exc
        out.sort(key=lambda kv: (-kv[1], kv[0]))
        return out[:k]

    def get_document(self, doc_id: str) -> Document:
        return self.documents[doc_id]


# -- per-entity recall and rerank -------------------------------------------


@dataclass
class EntityRetrieval:
    """Recall and rerank results for one entity in one iteration."""

    queries: list[str]
    per_query: dict[str, list[str]] = field(default_factory=dict)
    recalled: list[Document] = field(default_factory=list)
    reranked: list[Document] = field(default_factory=list)
    rerank_query: str = ""

    def to_dict(self) -> dict:
        return {
            "queries": list(self.queries),
            "rerank_query": self.rerank_query,
            "per_query": {q: list(ids) for q, ids in self.per_query.items()},
            "recalled": [d.to_dict() for d in self.recalled],
            "reranked": [d.to_dict() for d in self.reranked],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EntityRetrieval":
        return cls(
            queries=list(data["queries"]),
            per_query={q: list(ids) for q, ids in data.get("per_query", {}).items()},
            recalled=[Document.from_dict(d) for d in data.get("recalled", [])],
            reranked=[Document.from_dict(d) for d in data.get("reranked", [])],
            rerank_query=data.get("rerank_query", ""),
        )


@dataclass
class RetrievalBundle:
    iteration: int
    per_entity: dict[str, EntityRetrieval] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "per_entity": {e: r.to_dict() for e, r in self.per_entity.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RetrievalBundle":
        return cls(
            iteration=data["iteration"],
            per_entity={e: EntityRetrieval.from_dict(r) for e, r in data["per_entity"].items()},
        )


def recall_for_entity(
    index: Searcher,
    entity: EntityKey,
    queries: Sequence[str],
    recall_k: int,
    exclude: Iterable[str] = (),
    per_query: dict[str, list[str]] | None = None,
) -> list[Document]:
    """Union of the per-query top-``recall_k`` lists, in first-retrieval order.

    Queries with no indexable terms are skipped; if every query is empty the
    entity has nothing to retrieve and :class:`EmptyPlan` is raised. Ids in
    ``exclude`` are dropped after the union. When ``per_query`` is given it
    receives each query's raw hit list.
    """
    if not queries:
        raise EmptyPlan(f"entity {entity.canonical!r} has no queries")
    excluded = set(exclude)
    seen: dict[str, Document] = {}
    searched = 0
    for query in queries:
        try:
            hits = index.search(query, recall_k)
        except EmptyQuery:
            continue
        searched += 1
        if per_query is not None:
            per_query[query] = [doc_id for doc_id, _ in hits]
        for doc_id, score in hits:
            if doc_id not in seen:
                seen[doc_id] = index.get_document(doc_id).with_score(score)
    if not searched:
        raise EmptyPlan(f"every query for entity {entity.canonical!r} is empty")
    return [d for d_id, d in seen.items() if d_id not in excluded]


def rerank_entity(
    reranker: Reranker,
    entity: EntityKey | str,
    recalled: Sequence[Document],
    rerank_k: int,
) -> list[Document]:
    """Score ``recalled`` against the entity name and keep the best ``rerank_k``."""
    if rerank_k < 1:
        raise ValueError(f"rerank_k must be >= 1, got {rerank_k}")
    query = entity.canonical if isinstance(entity, EntityKey) else entity
    if not recalled:
        return []
    batch = getattr(reranker, "score_batch", None)
    if batch is not None:
        scores = batch(query, list(recalled))
    else:
        scores = [reranker.score(query, d) for d in recalled]
    ranked = sorted(zip(recalled, scores), key=lambda ds: (-ds[1], ds[0].id))
    return [d.with_score(float(s)) for d, s in ranked[:rerank_k]]
