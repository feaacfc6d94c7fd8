"""Prompt template loading and rendering.

Templates ship as plain text files with named {slot} placeholders; a
single trailing newline is stripped at load time so rendered prompts end
exactly where the template text ends.
"""

from __future__ import annotations

from importlib import resources

TEMPLATE_NAMES = (
    "summarize",
    "relevance",
    "ielts",
    "structure",
    "text_views",
    "rewrite",
    "assemble",
    "novelty",
)


def load_template(name: str) -> str:
    text = (
        resources.files("multinovelty")
        .joinpath(f"templates/{name}.txt")
        .read_text(encoding="utf-8")
    )
    return text.removesuffix("\n")


def render(template: str, **slots: object) -> str:
    return template.format(**slots)
