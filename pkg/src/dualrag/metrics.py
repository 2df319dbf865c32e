"""Answer-quality metrics: EM, containment accuracy, token F1, ROUGE, LLM judge."""

from __future__ import annotations

import csv
import io
import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import JudgeParseError
from .llm import ChatBackend, get_template, make_tag
from .raq import ask
from .types import RunConfig

_PUNCT = set(string.punctuation)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def _as_golds(golds: str | Iterable[str]) -> list[str]:
    return [golds] if isinstance(golds, str) else list(golds)


def _strip_punct(text: str) -> str:
    return "".join(ch for ch in text if ch not in _PUNCT)


def normalize_answer(s: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    s = _strip_punct(s.lower())
    s = _ARTICLES_RE.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, golds: str | Iterable[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in _as_golds(golds)))


def acc_contain(pred: str, golds: str | Iterable[str]) -> int:
    """1 if some normalized gold appears inside the normalized prediction.

    Matching is on whole tokens, so "paris" is not found in "comparison".
    """
    p = f" {normalize_answer(pred)} "
    for g in _as_golds(golds):
        g = normalize_answer(g)
        if g and f" {g} " in p:
            return 1
        if not g and p.strip() == "":
            return 1
    return 0


def _f1(pred_tokens: Sequence, gold_tokens: Sequence) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: str | Iterable[str]) -> float:
    p = normalize_answer(pred).split()
    return max((_f1(p, normalize_answer(g).split()) for g in _as_golds(golds)), default=0.0)


def rouge_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-free tokens. Articles are kept."""
    return _strip_punct(text.lower()).split()


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _rouge_l(p: list[str], g: list[str]) -> float:
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    lcs = _lcs_length(p, g)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(p), lcs / len(g)
    return 2 * precision * recall / (precision + recall)


def _rouge_2(p: list[str], g: list[str]) -> float:
    pb = list(zip(p, p[1:]))
    gb = list(zip(g, g[1:]))
    if not pb and not gb:
        return 1.0 if p == g else 0.0
    return _f1(pb, gb)


def rouge_scores(pred: str, golds: str | Iterable[str]) -> tuple[float, float]:
    """(ROUGE-2 F1, ROUGE-L F1), each the max over golds."""
    p = rouge_tokens(pred)
    pairs = [(_rouge_2(p, rouge_tokens(g)), _rouge_l(p, rouge_tokens(g))) for g in _as_golds(golds)]
    if not pairs:
        return 0.0, 0.0
    return max(r2 for r2, _ in pairs), max(rl for _, rl in pairs)


def parse_judgement(text: str) -> int:
    words = text.strip().split()
    first = words[0].strip(string.punctuation + "*`").lower() if words else ""
    if first == "yes":
        return 1
    if first == "no":
        return 0
    raise JudgeParseError(f"judge reply is not Yes/No: {text[:80]!r}", raw_text=text)


def acc_judge(
    backend: ChatBackend,
    question: str,
    pred: str,
    gold: str | Iterable[str],
    question_id: str = "q",
    config: RunConfig | None = None,
) -> int:
    """Ask a judge model whether ``pred`` implies the ground truth."""
    golds = _as_golds(gold)
    prompt = get_template("judge").render(
        question=question, prediction=pred, golden_answer=" / ".join(golds)
    )
    return ask(backend, prompt, make_tag("judge", question_id, 0), parse_judgement, config)


METRICS = ("em", "acc", "f1", "acc_judge", "rouge_2", "rouge_l")


@dataclass
class EvalReport:
    per_question: list[dict] = field(default_factory=list)

    @property
    def aggregates(self) -> dict[str, float]:
        """Mean of each metric present, scaled to percent."""
        out = {}
        for name in METRICS:
            values = [row[name] for row in self.per_question if row.get(name) is not None]
            if values:
                out[name] = 100.0 * sum(values) / len(values)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"aggregates": self.aggregates, "per_question": self.per_question},
            ensure_ascii=False,
            indent=2,
        )

    def to_csv(self) -> str:
        cols = ["id", "answer"] + [m for m in METRICS if any(r.get(m) is not None for r in self.per_question)]
        if not self.per_question:
            cols = ["id", "answer", "em", "acc", "f1"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.per_question:
            writer.writerow(row)
        return buf.getvalue()

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        csv_path = prefix.with_suffix(".csv")
        json_path = prefix.with_suffix(".json")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path.write_text(self.to_json(), encoding="utf-8")
        return csv_path, json_path


def evaluate(
    predictions: Sequence[tuple[str, str, str, Sequence[str]]],
    judge: ChatBackend | None = None,
    rouge: bool = False,
) -> EvalReport:
    """Score ``(id, question_text, prediction, golds)`` tuples."""
    report = EvalReport()
    for qid, qtext, pred, golds in predictions:
        golds = _as_golds(golds)
        row = {
            "id": qid,
            "answer": pred,
            "em": exact_match(pred, golds),
            "acc": acc_contain(pred, golds),
            "f1": token_f1(pred, golds),
        }
        if judge is not None:
            row["acc_judge"] = acc_judge(judge, qtext, pred, golds, question_id=qid)
        if rouge:
            row["rouge_2"], row["rouge_l"] = rouge_scores(pred, golds)
        report.per_question.append(row)
    return report
