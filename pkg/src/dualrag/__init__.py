"""Dual-process iterative retrieval-augmented question answering."""

__version__ = "0.1.0"

from .datasets import load_dataset
from .exceptions import DualRAGError
from .llm import ChatRequest, HTTPChatBackend, PromptTemplate, ScriptedBackend, get_template, render_prompt
from .metrics import acc_contain, acc_judge, evaluate, exact_match, normalize_answer, rouge_scores, token_f1
from .pipeline import DualRAG, TrajectoryRecord, iteration_stats, run_batch, run_question
from .retrieval import BM25Index, JaccardReranker, build_index, read_corpus, recall_for_entity, rerank_entity
from .types import (
    Document,
    EntityKey,
    KnowledgeFragment,
    KnowledgeOutline,
    Question,
    ReasoningHistory,
    ReasoningStep,
    RunConfig,
)

__all__ = [
    "BM25Index",
    "ChatRequest",
    "Document",
    "DualRAG",
    "DualRAGError",
    "EntityKey",
    "HTTPChatBackend",
    "JaccardReranker",
    "KnowledgeFragment",
    "KnowledgeOutline",
    "PromptTemplate",
    "Question",
    "ReasoningHistory",
    "ReasoningStep",
    "RunConfig",
    "ScriptedBackend",
    "TrajectoryRecord",
    "acc_contain",
    "acc_judge",
    "build_index",
    "evaluate",
    "exact_match",
    "get_template",
    "iteration_stats",
    "load_dataset",
    "normalize_answer",
    "read_corpus",
    "recall_for_entity",
    "render_prompt",
    "rerank_entity",
    "rouge_scores",
    "run_batch",
    "run_question",
    "token_f1",
]
