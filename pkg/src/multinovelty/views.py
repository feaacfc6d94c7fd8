"""Multi-view prompt enrichment.

Text views are distinct perspectives on a prompt obtained from a chat
model as a numbered list; image views run a two-stage chain (vision
caption, then stylistic rewrite) whose raw and refined texts are both
kept. A view is injected into generation by prepending a fixed context
block to the prompt.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DecodingParams, PromptSpec, ViewRecord
from .errors import InvalidArg, SourceError, ViewShortfall
from .provider import ChatRequest
from .templates import load_template, render

logger = logging.getLogger(__name__)

MAX_TOPUP_ROUNDS = 2


@dataclass(frozen=True)
class ViewRequest:
    """What to build for one prompt: `count` text views, or one image
    view per entry of `image_sources`."""

    prompt: PromptSpec
    kind: str = "text"
    count: int = 1
    image_sources: tuple[str, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        if self.kind == "text":
            if self.count < 1:
                raise InvalidArg("text view request needs count >= 1")
        elif self.kind == "image":
            if not self.image_sources:
                raise InvalidArg("image view request needs at least one source")
        else:
            raise InvalidArg(f"unknown view kind {self.kind!r}")

_NUMBERED_LINE_RE = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*$")


def _normalize(text: str) -> str:
    return " ".join(text.casefold().split())


def _parse_numbered(reply: str) -> list[str]:
    views = []
    for line in reply.splitlines():
        match = _NUMBERED_LINE_RE.match(line)
        if match:
            views.append(match.group(1))
    return views


def generate_text_views(
    prompt: PromptSpec,
    count: int,
    provider,
    template: str | None = None,
) -> list[ViewRecord]:
    """Exactly `count` unique text views for `prompt`, or ViewShortfall.

    The provider is asked for a numbered list; duplicates (case-folded,
    whitespace-collapsed) are dropped and up to two top-up rounds request
    the missing remainder.
    """
    if count < 1:
        raise InvalidArg(f"count must be >= 1, got {count}")
    template = template if template is not None else load_template("text_views")

    collected: list[str] = []
    seen: set[str] = set()
    for round_no in range(MAX_TOPUP_ROUNDS + 1):
        missing = count - len(collected)
        if missing == 0:
            break
        rendered = render(template, count=missing, prompt=prompt.text)
        if round_no > 0:
            rendered += (
                f"\n(Top-up round {round_no}: provide {missing} perspectives"
                " different from any already given.)"
            )
        reply = provider.chat(
            ChatRequest(
                messages=[{"role": "user", "content": rendered}],
                decoding=DecodingParams(),
                tag=f"views|{prompt.id}|round{round_no}",
            )
        )
        for view_text in _parse_numbered(reply.text):
            key = _normalize(view_text)
            if key and key not in seen:
                seen.add(key)
                collected.append(view_text)
                if len(collected) == count:
                    break

    if len(collected) < count:
        raise ViewShortfall(got=len(collected), want=count)
    model_name = getattr(provider, "name", "unknown")
    return [
        ViewRecord(
            view_id=f"{prompt.id}-t{i:03d}",
            prompt_id=prompt.id,
            kind="text",
            content=text,
            source=model_name,
        )
        for i, text in enumerate(collected, start=1)
    ]


def describe_image(source: str, provider) -> str:
    """Raw vision-model caption for a local path or URL."""
    if not source:
        raise InvalidArg("describe_image needs a source")
    if not source.startswith(("http://", "https://", "data:")):
        path = Path(source)
        if not path.is_file():
            raise SourceError(f"image source {source!r} is not a readable file")
    return provider.caption(source)


def rewrite_description(raw: str, provider) -> str:
    """Refine a raw caption into well-structured prose."""
    if not raw:
        raise InvalidArg("rewrite_description needs non-empty text")
    rendered = render(load_template("rewrite"), description=raw)
    reply = provider.chat(
        ChatRequest(messages=[{"role": "user", "content": rendered}], decoding=DecodingParams())
    )
    return reply.text.strip()


def generate_image_views(
    prompt: PromptSpec,
    sources: Sequence[str],
    vision_provider,
    rewrite_provider=None,
) -> list[ViewRecord]:
    """Describe-then-rewrite chain over `sources`; every record keeps the
    raw caption alongside the refined content."""
    if not sources:
        raise InvalidArg("generate_image_views needs at least one source")
    rewrite_provider = rewrite_provider if rewrite_provider is not None else vision_provider
    views = []
    for i, source in enumerate(sources, start=1):
        raw = describe_image(source, vision_provider)
        refined = rewrite_description(raw, rewrite_provider)
        views.append(
            ViewRecord(
                view_id=f"{prompt.id}-i{i:03d}",
                prompt_id=prompt.id,
                kind="image",
                content=refined,
                source=str(source),
                raw_description=raw,
            )
        )
    return views


def generate_views(
    request: ViewRequest,
    provider,
    rewrite_provider=None,
) -> list[ViewRecord]:
    """Dispatch a ViewRequest to the text or image pipeline."""
    request.validate()
    if request.kind == "text":
        return generate_text_views(request.prompt, request.count, provider)
    return generate_image_views(
        request.prompt, list(request.image_sources), provider, rewrite_provider
    )


def assemble_prompt(prompt: PromptSpec, view: ViewRecord | None = None) -> str:
    """The final generation prompt: the prompt text itself for baseline,
    or a context block holding the view followed by the instruction and
    the prompt text."""
    if view is None:
        return prompt.text
    return render(load_template("assemble"), context=view.content, question=prompt.text)
