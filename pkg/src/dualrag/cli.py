"""Index corpora, answer questions, score runs, export fine-tuning data, serve over HTTP."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .datasets import FORMATS, load_dataset, sample_questions
from .exceptions import DualRAGError
from .llm import ChatBackend, HTTPChatBackend, ScriptedBackend
from .metrics import evaluate
from .pipeline import DualRAG, iteration_stats, read_trajectories, write_trajectories
from .retrieval import BM25Index, RemoteReranker, RemoteRetriever, read_corpus, write_corpus
from .sft import derive_all, export_jsonl, format_summary
from .types import Question, RunConfig

logger = logging.getLogger("dualrag")

_DEFAULTS = RunConfig()
ABLATIONS = ("no_r", "no_ei", "no_ko")


class CLIError(Exception):
    pass


def make_backend(spec: str | None, api_key: str | None, model: str | None, timeout: float) -> ChatBackend:
    """``scripted:<fixture.jsonl>`` or ``http:<base url>``; falls back to $DUALRAG_API_BASE."""
    spec = spec or (f"http:{os.environ['DUALRAG_API_BASE']}" if os.environ.get("DUALRAG_API_BASE") else None)
    if not spec:
        raise CLIError("no backend configured: pass --backend or set DUALRAG_API_BASE")
    kind, _, target = spec.partition(":")
    if kind == "scripted":
        if not Path(target).is_file():
            raise CLIError(f"fixture file not found: {target}")
        return ScriptedBackend.from_jsonl(target)
    if spec.startswith(("http://", "https://")):
        url = spec
    elif kind == "http":
        url = target
    else:
        raise CLIError(f"unrecognised backend {spec!r}; use scripted:<path> or http:<url>")
    return HTTPChatBackend(
        url,
        model=model or os.environ.get("DUALRAG_MODEL", "default"),
        api_key=api_key or os.environ.get("DUALRAG_API_KEY"),
        timeout=timeout,
    )


def _add_backend_flags(p: argparse.ArgumentParser, name: str = "--backend") -> None:
    p.add_argument(name, help="scripted:<fixture.jsonl> or http:<base url> (default: $DUALRAG_API_BASE)")
    p.add_argument("--api-key", help="API key (default: $DUALRAG_API_KEY)")
    p.add_argument("--model", help="model name sent to the endpoint (default: $DUALRAG_MODEL)")
    p.add_argument("--timeout", type=float, default=60.0, help="request timeout in seconds (default: %(default)s)")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("retrieval")
    src.add_argument("--index", help="index file written by `dualrag index`")
    src.add_argument("--corpus", help="JSONL corpus of {id, title, text}")
    src.add_argument("--retriever-url", help="remote search endpoint used instead of the local index")
    src.add_argument("--reranker-url", help="remote rerank endpoint (default: token-overlap reranker)")
    cfg = p.add_argument_group("loop")
    cfg.add_argument("--max-iters", type=int, default=_DEFAULTS.max_iterations, help="iteration cap (default: %(default)s)")
    cfg.add_argument("--recall-k", type=int, default=_DEFAULTS.recall_k, help="documents recalled per query (default: %(default)s)")
    cfg.add_argument("--rerank-k", type=int, default=_DEFAULTS.rerank_k, help="documents kept per entity after reranking (default: %(default)s)")
    cfg.add_argument("--ablate", action="append", choices=ABLATIONS, default=[], help="disable a component; repeatable")
    cfg.add_argument("--temperature", type=float, default=_DEFAULTS.temperature, help="sampling temperature (default: %(default)s)")
    cfg.add_argument("--parallelism", type=int, default=1, help="questions run concurrently (default: %(default)s)")
    _add_backend_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrag", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a BM25 index from a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--k1", type=float, default=1.2, help="BM25 k1 (default: %(default)s)")
    p.add_argument("--b", type=float, default=0.75, help="BM25 b (default: %(default)s)")

    p = sub.add_parser("corpus", help="write the passage corpus of a dataset file as JSONL")
    p.add_argument("dataset")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("run", help="answer one question or a dataset")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--question", help="question text")
    q.add_argument("--dataset", help="dataset file; its passages form the corpus unless --index/--corpus is given")
    p.add_argument("--question-id", default="q0", help="id used in request tags (default: %(default)s)")
    p.add_argument("--format", choices=FORMATS, default="hotpotqa", help="dataset format (default: %(default)s)")
    p.add_argument("--sample", type=int, help="evaluate a seeded random sample of this many questions")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default: %(default)s)")
    p.add_argument("--trace", help="write trajectories to this JSONL file")
    p.add_argument("--stats", action="store_true", help="print the retrieval-round histogram")
    p.add_argument("--stats-csv", help="write the retrieval-round histogram as CSV")
    _add_pipeline_flags(p)

    p = sub.add_parser("eval", help="score a trajectory file")
    p.add_argument("--trace", required=True)
    p.add_argument("--dataset", help="dataset supplying gold answers (default: golds stored in the trace)")
    p.add_argument("--format", choices=FORMATS, default="hotpotqa")
    p.add_argument("--out", default="eval_report", help="output prefix for .csv and .json (default: %(default)s)")
    p.add_argument("--rouge", action="store_true", help="add ROUGE-2/ROUGE-L")
    _add_backend_flags(p, "--judge")

    p = sub.add_parser("export-sft", help="derive fine-tuning records from trajectories")
    p.add_argument("--trace", required=True)
    p.add_argument("--dataset", help="dataset supplying supporting-passage ids")
    p.add_argument("--format", choices=FORMATS, default="hotpotqa")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.8, help="entity/query dedup similarity (default: %(default)s)")

    p = sub.add_parser("serve", help="serve POST /answer and GET /healthz")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _add_pipeline_flags(p)
    return parser


def _load_index(args, fallback_docs=None):
    if args.retriever_url:
        docs = {d.id: d for d in (fallback_docs or [])}
        if args.corpus:
            docs.update({d.id: d for d in read_corpus(args.corpus)})
        return RemoteRetriever(args.retriever_url, docs)
    if args.index:
        return BM25Index.load(args.index)
    if args.corpus:
        return BM25Index().fit(read_corpus(args.corpus))
    if fallback_docs is not None:
        return BM25Index().fit(fallback_docs)
    raise CLIError("no corpus: pass --index, --corpus or --retriever-url")


def _build_model(args, index) -> DualRAG:
    ablations = set(args.ablate)
    model = DualRAG(
        backend=make_backend(args.backend, args.api_key, args.model, args.timeout),
        reranker=RemoteReranker(args.reranker_url) if args.reranker_url else None,
        retriever=index,
        max_iterations=args.max_iters,
        recall_k=args.recall_k,
        rerank_k=args.rerank_k,
        ablation_no_r="no_r" in ablations,
        ablation_no_ei="no_ei" in ablations,
        ablation_no_ko="no_ko" in ablations,
        temperature=args.temperature,
        parallelism=args.parallelism,
    )
    try:
        return model.fit()
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def _dataset_questions(args) -> dict[str, Question] | None:
    if not args.dataset:
        return None
    questions, _ = load_dataset(args.dataset, args.format)
    return {q.id: q for q in questions}


def cmd_index(args) -> int:
    docs = read_corpus(args.corpus)
    index = BM25Index(k1=args.k1, b=args.b).fit(docs)
    digest = index.save(args.out)
    print(f"{index.doc_count_} documents indexed")
    print(f"vocabulary size: {len(index.postings_)}")
    print(f"digest: sha256:{digest}")
    return 0


def cmd_corpus(args) -> int:
    _, docs = load_dataset(args.dataset, args.format)
    n = write_corpus(docs, args.out)
    print(f"{n} passages written to {args.out}")
    return 0


def cmd_run(args) -> int:
    if args.question:
        questions = [Question(args.question_id, args.question)]
        index = _load_index(args)
    else:
        questions, docs = load_dataset(args.dataset, args.format)
        questions = sample_questions(questions, args.sample, args.seed)
        index = _load_index(args, fallback_docs=docs)
    model = _build_model(args, index)
    records = model.run_batch(questions)
    failures = 0
    for rec in records:
        if rec.failed:
            failures += 1
            print(f"{rec.question.id}\tFAILED\t{rec.error}", file=sys.stderr)
        elif len(records) == 1:
            print(rec.answer_text)
        else:
            print(f"{rec.question.id}\t{rec.answer_text}")
    if args.trace:
        write_trajectories(records, args.trace)
    if args.stats or args.stats_csv:
        stats = iteration_stats(records)
        if args.stats:
            print(stats.to_table(), file=sys.stderr)
        if args.stats_csv:
            Path(args.stats_csv).write_text(stats.to_csv(), encoding="utf-8")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    records = read_trajectories(args.trace)
    golds = _dataset_questions(args) or {}
    judge = make_backend(args.judge, args.api_key, args.model, args.timeout) if args.judge else None
    rows = []
    for rec in records:
        q = golds.get(rec.question.id, rec.question)
        rows.append((rec.question.id, rec.question.text, rec.answer_text, list(q.gold_answers)))
    report = evaluate(rows, judge=judge, rouge=args.rouge)
    csv_path, json_path = report.write(args.out)
    labels = {"em": "EM", "acc": "Acc", "f1": "F1", "acc_judge": "Acc†", "rouge_2": "ROUGE-2", "rouge_l": "ROUGE-L"}
    agg = report.aggregates
    print(f"{len(rows)} questions scored")
    for key, label in labels.items():
        if key in agg:
            print(f"{label} {agg[key]:.1f}")
    print(f"report: {csv_path} {json_path}")
    return 1 if any(r.failed for r in records) else 0


def cmd_export_sft(args) -> int:
    records = read_trajectories(args.trace)
    questions = _dataset_questions(args)
    if questions is None:
        logger.warning("no --dataset given; using supporting-passage ids stored in the trace")
    sft = derive_all(records, questions, threshold=args.threshold)
    counts = export_jsonl(sft, args.out)
    print(format_summary(counts))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    model = _build_model(args, _load_index(args))
    serve(model, host=args.host, port=args.port)
    return 0


COMMANDS = {
    "index": cmd_index,
    "corpus": cmd_corpus,
    "run": cmd_run,
    "eval": cmd_eval,
    "export-sft": cmd_export_sft,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (CLIError, DualRAGError, OSError, ValueError) as exc:
        print(f"dualrag {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
