"""Correctness scoring: prompt relevance and language structure.

Relevance follows a summarize-then-judge chain: long answers are first
condensed (a relevant answer keeps a relevant summary), then a chat
judge returns a strict one-word relevant/irrelevant verdict. Structure
quality is a judge-assigned score clamped to [1, 10]. The module also
houses the generic binary-classification and MSE metrics used to
calibrate judges against user-supplied labeled data.
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass

from .corpus import DecodingParams, PromptSpec, ResponseRecord
from .errors import (
    AuthError,
    InvalidArg,
    JudgeError,
    JudgeParseError,
    ProviderError,
)
from .provider import ChatRequest, bounded_map_iter
from .templates import load_template, render

logger = logging.getLogger(__name__)

DEFAULT_SUMMARY_WORDS = 250
STRUCTURE_MIN, STRUCTURE_MAX = 1.0, 10.0

RELEVANCE_REMINDER = 'Please respond with exactly one word: "relevant" or "irrelevant".'
SCORE_REMINDER = "Please provide only a score between 1.0 and 10.0."

_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


@dataclass(frozen=True)
class CorrectnessVerdict:
    relevant: bool
    summary: str
    raw_judge_reply: str


@dataclass(frozen=True)
class StructureScore:
    score: float
    raw_judge_reply: str


@dataclass(frozen=True)
class BinaryEvalResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class CorrectnessReport:
    percent_correct: float
    mean_structure: float
    n_records: int
    truncated_summaries: int


def _chat_text(provider, messages: list[dict], tag: str = "") -> str:
    reply = provider.chat(ChatRequest(messages=messages, decoding=DecodingParams(), tag=tag))
    return reply.text


def _summarize(text: str, provider, max_words: int) -> tuple[str, bool]:
    if not text:
        raise InvalidArg("summarize_answer needs non-empty text")
    prompt = render(load_template("summarize"), max_words=max_words, text=text)
    summary = _chat_text(provider, [{"role": "user", "content": prompt}]).strip()
    words = summary.split()
    if len(words) > max_words * 1.1:
        logger.warning(
            "summary ran %d words (cap %d); truncating", len(words), max_words
        )
        return " ".join(words[:max_words]), True
    return summary, False


def summarize_answer(
    text: str,
    provider,
    max_words: int = DEFAULT_SUMMARY_WORDS,
) -> str:
    """Condense `text` to at most `max_words` words via the provider.

    A reply running more than 10% over the limit is truncated at the word
    boundary (and logged); the summarize/judge chain then stays bounded.
    """
    return _summarize(text, provider, max_words)[0]


def judge_relevance(prompt: str, summary: str, provider) -> CorrectnessVerdict:
    """Strict one-word relevant/irrelevant verdict on `summary` against
    `prompt`, with a single reminder retry."""
    rendered = render(load_template("relevance"), prompt_text=prompt, summarized_answer=summary)
    messages = [{"role": "user", "content": rendered}]
    reply = _chat_text(provider, messages)
    verdict = _parse_relevance(reply)
    if verdict is None:
        retry = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": RELEVANCE_REMINDER},
        ]
        reply = _chat_text(provider, retry)
        verdict = _parse_relevance(reply)
        if verdict is None:
            raise JudgeParseError(f"unparseable relevance verdict: {reply!r}")
    return CorrectnessVerdict(relevant=verdict, summary=summary, raw_judge_reply=reply)


def _parse_relevance(reply: str) -> bool | None:
    word = reply.strip().strip(".,!?:;\"'`").lower()
    if word == "relevant":
        return True
    if word == "irrelevant":
        return False
    return None


def score_language_structure(answer: str, provider) -> StructureScore:
    """Judge-assigned grammar/structure score, clamped to [1, 10]."""
    rendered = render(load_template("structure"), answer=answer)
    messages = [{"role": "user", "content": rendered}]
    reply = _chat_text(provider, messages)
    score = _parse_score(reply)
    if score is None:
        retry = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": SCORE_REMINDER},
        ]
        reply = _chat_text(provider, retry)
        score = _parse_score(reply)
        if score is None:
            raise JudgeParseError(f"no score found in judge reply: {reply!r}")
    return StructureScore(score=min(max(score, STRUCTURE_MIN), STRUCTURE_MAX), raw_judge_reply=reply)


def _parse_score(reply: str) -> float | None:
    match = _NUMBER_RE.search(reply)
    return float(match.group(0)) if match else None


def score_ielts_essay(question: str, essay: str, provider) -> float:
    """Band score on the examiner's [1, 9] scale, for calibrating score
    judges against user-supplied labeled essays."""
    rendered = render(load_template("ielts"), question=question, essay=essay)
    messages = [{"role": "user", "content": rendered}]
    reply = _chat_text(provider, messages)
    score = _parse_score(reply)
    if score is None:
        retry = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": "Please provide only a score between 1.0 and 9.0."},
        ]
        reply = _chat_text(provider, retry)
        score = _parse_score(reply)
        if score is None:
            raise JudgeParseError(f"no score found in judge reply: {reply!r}")
    return min(max(score, 1.0), 9.0)


def correctness_report(
    records: Sequence[ResponseRecord],
    prompts: Sequence[PromptSpec],
    provider,
    max_words: int = DEFAULT_SUMMARY_WORDS,
    judge_summaries: bool = True,
    max_workers: int = 1,
) -> CorrectnessReport:
    """Relevance percentage and mean structure score over `records`.

    With `judge_summaries` false the raw answers are judged directly (an
    ablation path). A judge failure raises JudgeError carrying the index
    reached; verdicts already collected are preserved on the exception.
    """
    if not records:
        raise InvalidArg("correctness_report needs at least one record")
    prompt_text = {p.id: p.text for p in prompts}
    for record in records:
        if record.prompt_id not in prompt_text:
            raise InvalidArg(f"record references unknown prompt {record.prompt_id!r}")

    def evaluate(record: ResponseRecord) -> tuple[bool, float, bool]:
        if judge_summaries:
            summary, truncated = _summarize(record.text, provider, max_words)
        else:
            summary, truncated = record.text, False
        verdict = judge_relevance(prompt_text[record.prompt_id], summary, provider)
        structure = score_language_structure(record.text, provider)
        return verdict.relevant, structure.score, truncated

    results: list[tuple[bool, float, bool]] = []
    try:
        for result in bounded_map_iter(evaluate, list(records), max_workers=max_workers):
            results.append(result)
    except (ProviderError, AuthError, JudgeParseError) as exc:
        raise JudgeError(
            f"correctness judging failed at record {len(results)}: {exc}",
            index=len(results),
            labels=["relevant" if r else "irrelevant" for r, _, _ in results],
        ) from exc

    relevant_count = sum(1 for relevant, _, _ in results if relevant)
    mean_structure = math.fsum(score for _, score, _ in results) / len(results)
    return CorrectnessReport(
        percent_correct=100.0 * relevant_count / len(results),
        mean_structure=mean_structure,
        n_records=len(results),
        truncated_summaries=sum(1 for _, _, t in results if t),
    )


def classification_metrics(
    predicted: Sequence[bool], actual: Sequence[bool]
) -> BinaryEvalResult:
    """Confusion counts and accuracy/precision/recall/F1, with divisions
    by zero defined as 0."""
    if len(predicted) != len(actual):
        raise InvalidArg(f"length mismatch: {len(predicted)} vs {len(actual)}")
    if not predicted:
        raise InvalidArg("classification_metrics needs at least one pair")
    tp = fp = tn = fn = 0
    for p, a in zip(predicted, actual):
        if p and a:
            tp += 1
        elif p and not a:
            fp += 1
        elif not p and not a:
            tn += 1
        else:
            fn += 1
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return BinaryEvalResult(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def mse_score(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean squared difference between aligned score lists."""
    if len(predicted) != len(actual):
        raise InvalidArg(f"length mismatch: {len(predicted)} vs {len(actual)}")
    if not predicted:
        raise InvalidArg("mse_score needs at least one pair")
    return math.fsum((p - a) ** 2 for p, a in zip(predicted, actual)) / len(predicted)
