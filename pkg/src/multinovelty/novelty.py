"""Sequential premise-set novelty detection.

The first response of a corpus is novel by definition; every later
response is judged against the set of responses already labeled novel
(the premise set). A response that introduces information beyond the
premises joins the set, anything else is redundant. Judges are
pluggable: a cosine-threshold rule over embeddings, or a chat model
asked for a one-word verdict.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .corpus import DecodingParams
from .errors import (
    AuthError,
    InvalidArg,
    JudgeError,
    JudgeParseError,
    ProviderError,
)
from .provider import ChatRequest
from .templates import load_template, render

NOVEL = "novel"
REDUNDANT = "redundant"

DEFAULT_TAU = 0.80
DEFAULT_PREMISE_CAP = 20

ONE_WORD_REMINDER = 'Please respond with exactly one word: "novel" or "redundant".'


@dataclass(frozen=True)
class EmbeddingThresholdJudge:
    """Labels a hypothesis redundant when its best cosine similarity to
    any premise reaches `tau`."""

    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if not -1.0 < self.tau <= 1.0:
            raise InvalidArg(f"tau must be in (-1, 1], got {self.tau}")

    @property
    def judge_id(self) -> str:
        return f"embedding:{self.tau:g}"


@dataclass(frozen=True)
class ChatNoveltyJudge:
    """Asks a chat model for a one-word novel/redundant verdict.

    Only the `premise_cap` most recent premises are rendered into the
    prompt to bound context length; the premise set itself still grows
    without limit.
    """

    provider: object
    template: str | None = None
    premise_cap: int = DEFAULT_PREMISE_CAP
    model: str | None = None

    def __post_init__(self) -> None:
        if self.template is not None and (
            "{hypothesis}" not in self.template or "{premises}" not in self.template
        ):
            raise InvalidArg("chat judge template needs {hypothesis} and {premises} slots")
        if self.premise_cap < 1:
            raise InvalidArg("premise_cap must be >= 1")

    @property
    def judge_id(self) -> str:
        return f"chat:{self.model or getattr(self.provider, 'name', 'unknown')}"


NoveltyJudge = EmbeddingThresholdJudge | ChatNoveltyJudge


@dataclass(frozen=True)
class NoveltyLabeling:
    labels: list[str]
    premise_indices: list[int] = field(default_factory=list)
    judge_id: str = ""

    @property
    def novelty_percent(self) -> float:
        return novelty_score(self)


def novelty_score(labeling: NoveltyLabeling) -> float:
    """Percentage of responses labeled novel."""
    if not labeling.labels:
        raise InvalidArg("novelty_score needs a non-empty labeling")
    return 100.0 * labeling.labels.count(NOVEL) / len(labeling.labels)


def _unit_rows(emb: Sequence[Sequence[float]]) -> np.ndarray:
    matrix = np.asarray(emb, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidArg("embeddings must be a 2-D set of equal-length vectors")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def embedding_judge(
    hypothesis_emb: Sequence[float],
    premise_embs: Sequence[Sequence[float]],
    tau: float,
) -> str:
    """Novel iff the maximum cosine similarity between the hypothesis and
    any premise stays below `tau`."""
    if not len(premise_embs):
        raise InvalidArg("embedding_judge needs at least one premise")
    hyp = np.asarray(hypothesis_emb, dtype=np.float64)
    premises = _unit_rows(premise_embs)
    if premises.shape[1] != hyp.shape[0]:
        raise InvalidArg(
            f"dimension mismatch: hypothesis {hyp.shape[0]}, premises {premises.shape[1]}"
        )
    hyp_norm = np.linalg.norm(hyp)
    hyp_unit = hyp / hyp_norm if hyp_norm > 0.0 else hyp
    max_sim = float(np.max(premises @ hyp_unit))
    return NOVEL if max_sim < tau else REDUNDANT


def _parse_verdict(reply: str) -> str | None:
    word = reply.strip().strip(".,!?:;\"'`").lower()
    if word in (NOVEL, REDUNDANT):
        return word
    return None


def chat_judge(
    hypothesis: str,
    premises: Sequence[str],
    provider,
    template: str | None = None,
    premise_cap: int = DEFAULT_PREMISE_CAP,
    model: str | None = None,
) -> str:
    """One-word chat verdict on whether `hypothesis` adds information
    beyond `premises`. Retries once with a reminder before giving up with
    JudgeParseError."""
    template = template if template is not None else load_template("novelty")
    shown = list(premises)[-premise_cap:]
    numbered = "\n".join(f"{i}. {p}" for i, p in enumerate(shown, start=1))
    prompt = render(template, premises=numbered, hypothesis=hypothesis)
    messages = [{"role": "user", "content": prompt}]
    reply = provider.chat(ChatRequest(messages=messages, decoding=DecodingParams(), model=model))
    verdict = _parse_verdict(reply.text)
    if verdict is not None:
        return verdict
    retry_messages = messages + [
        {"role": "assistant", "content": reply.text},
        {"role": "user", "content": ONE_WORD_REMINDER},
    ]
    reply = provider.chat(
        ChatRequest(messages=retry_messages, decoding=DecodingParams(), model=model)
    )
    verdict = _parse_verdict(reply.text)
    if verdict is not None:
        return verdict
    raise JudgeParseError(f"unparseable novelty verdict: {reply.text!r}")


def detect_novelty(
    responses: Sequence[str],
    judge: NoveltyJudge,
    emb: Sequence[Sequence[float]] | None = None,
) -> NoveltyLabeling:
    """Run the sequential detector over `responses` in order.

    The embedding judge requires `emb` aligned one-to-one with the
    responses. A provider failure mid-corpus raises JudgeError carrying
    the index reached and the labels produced so far.
    """
    if not responses:
        raise InvalidArg("detect_novelty needs at least one response")

    labels: list[str] = []
    premise_indices: list[int] = []

    if isinstance(judge, EmbeddingThresholdJudge):
        if emb is None:
            raise InvalidArg("embedding judge needs embeddings aligned with responses")
        if len(emb) != len(responses):
            raise InvalidArg(f"{len(emb)} embeddings for {len(responses)} responses")
        unit = _unit_rows(emb)
        for k in range(len(responses)):
            if not premise_indices:
                verdict = NOVEL
            else:
                max_sim = float(np.max(unit[premise_indices] @ unit[k]))
                verdict = NOVEL if max_sim < judge.tau else REDUNDANT
            labels.append(verdict)
            if verdict == NOVEL:
                premise_indices.append(k)
        return NoveltyLabeling(labels, premise_indices, judge.judge_id)

    for k, response in enumerate(responses):
        if not premise_indices:
            verdict = NOVEL
        else:
            premises = [responses[i] for i in premise_indices]
            try:
                verdict = chat_judge(
                    response,
                    premises,
                    judge.provider,
                    template=judge.template,
                    premise_cap=judge.premise_cap,
                    model=judge.model,
                )
            except (ProviderError, AuthError, JudgeParseError) as exc:
                raise JudgeError(
                    f"judge failed at response {k}: {exc}", index=k, labels=labels
                ) from exc
        labels.append(verdict)
        if verdict == NOVEL:
            premise_indices.append(k)
    return NoveltyLabeling(labels, premise_indices, judge.judge_id)
