"""Domain records and append-only JSONL persistence.

Prompts, views and responses live in plain JSONL files (one object per
line, snake_case fields). Appends deduplicate on each record's unique
key, so crashed generation runs can simply be re-run; reads always
return records in sample_index order, making "evaluate the first n" a
stable prefix of any larger read.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from .errors import (
    DuplicateId,
    InvalidArg,
    InvalidRecord,
    NoPrompts,
    ParseError,
    StorageError,
)

VARIANTS = ("baseline", "text_view", "image_view")
VIEW_KINDS = ("text", "image")
DEFAULT_SAMPLE_SIZES = (100, 250, 500, 1000, 1500, 2000)


@dataclass(frozen=True)
class PromptSpec:
    id: str
    text: str
    subject: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise InvalidRecord("prompt id must be non-empty")
        if not self.text:
            raise InvalidRecord(f"prompt {self.id!r} has empty text")


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.9
    top_p: float = 0.95
    max_tokens: int = 125

    def validate(self) -> None:
        if not 0.0 <= self.top_p <= 1.0:
            raise InvalidRecord(f"top_p must be in [0, 1], got {self.top_p}")
        if self.max_tokens <= 0:
            raise InvalidRecord(f"max_tokens must be > 0, got {self.max_tokens}")


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    prompt_id: str
    kind: str
    content: str
    source: str | None = None
    raw_description: str | None = None

    def validate(self) -> None:
        if self.kind not in VIEW_KINDS:
            raise InvalidRecord(f"unknown view kind {self.kind!r}")
        if not self.content:
            raise InvalidRecord(f"view {self.view_id!r} has empty content")
        if self.kind == "image" and not self.source:
            raise InvalidRecord(f"image view {self.view_id!r} has no source")

    def key(self) -> tuple[str, str]:
        return (self.prompt_id, self.view_id)


@dataclass(frozen=True)
class ResponseRecord:
    prompt_id: str
    variant: str
    model: str
    sample_index: int
    text: str
    decoding: DecodingParams
    created_at: str
    view_id: str | None = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidRecord(f"unknown variant {self.variant!r}")
        if (self.variant == "baseline") != (self.view_id is None):
            raise InvalidRecord(
                f"variant {self.variant!r} with view_id {self.view_id!r}: "
                "baseline records must omit view_id, view variants must set it"
            )
        if self.sample_index < 0:
            raise InvalidRecord(f"sample_index must be >= 0, got {self.sample_index}")
        self.decoding.validate()

    def key(self) -> tuple[str, str, str, int, str | None]:
        return (self.prompt_id, self.variant, self.model, self.sample_index, self.view_id)


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    prompts: str
    models: tuple[str, ...]
    variants: tuple[str, ...] = ("baseline",)
    sample_sizes: tuple[int, ...] = DEFAULT_SAMPLE_SIZES
    views_per_prompt: int = 50
    provider_config: str | None = None
    image_manifest: str | None = None
    out_dir: str | None = None

    def validate(self) -> None:
        if not self.run_id:
            raise InvalidRecord("run_id must be non-empty")
        if not self.sample_sizes or any(s <= 0 for s in self.sample_sizes):
            raise InvalidRecord("sample_sizes must be strictly positive")
        if self.views_per_prompt < 1:
            raise InvalidRecord("views_per_prompt must be >= 1")
        for v in self.variants:
            if v not in VARIANTS:
                raise InvalidRecord(f"unknown variant {v!r}")


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}", str(path)) from exc
    manifest = RunManifest(
        run_id=raw.get("run_id", ""),
        prompts=raw.get("prompts", ""),
        models=tuple(raw.get("models", ())),
        variants=tuple(raw.get("variants", ("baseline",))),
        sample_sizes=tuple(raw.get("sample_sizes", DEFAULT_SAMPLE_SIZES)),
        views_per_prompt=raw.get("views_per_prompt", 50),
        provider_config=raw.get("provider_config"),
        image_manifest=raw.get("image_manifest"),
        out_dir=raw.get("out_dir"),
    )
    manifest.validate()
    return manifest


def _auto_id(index: int) -> str:
    return f"p{index:03d}"


def load_prompts(path: str | Path) -> list[PromptSpec]:
    """Read prompts from JSONL ({"id"?, "text", "subject"?}) or from plain
    text with one prompt per line; ids are auto-assigned as p001.. when
    absent and order is preserved."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read prompts {path}: {exc}") from exc

    prompts: list[PromptSpec] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("{"):
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"{path}:{lineno}: invalid JSON: {exc}", str(path), lineno
                ) from exc
            spec = PromptSpec(
                id=obj.get("id") or _auto_id(len(prompts) + 1),
                text=obj.get("text", ""),
                subject=obj.get("subject"),
            )
        else:
            spec = PromptSpec(id=_auto_id(len(prompts) + 1), text=stripped)
        spec.validate()
        if spec.id in seen:
            raise DuplicateId(f"duplicate prompt id {spec.id!r} at {path}:{lineno}")
        seen.add(spec.id)
        prompts.append(spec)
    if not prompts:
        raise NoPrompts(f"no prompts found in {path}")
    return prompts


def _strip_nones(obj: dict) -> dict:
    return {k: v for k, v in obj.items() if v is not None}


def _response_to_json(record: ResponseRecord) -> str:
    return json.dumps(_strip_nones(asdict(record)), ensure_ascii=False, sort_keys=True)


def _response_from_obj(obj: dict) -> ResponseRecord:
    decoding = obj.get("decoding") or {}
    return ResponseRecord(
        prompt_id=obj["prompt_id"],
        variant=obj["variant"],
        model=obj["model"],
        sample_index=obj["sample_index"],
        text=obj["text"],
        decoding=DecodingParams(
            temperature=decoding.get("temperature", 0.9),
            top_p=decoding.get("top_p", 0.95),
            max_tokens=decoding.get("max_tokens", 125),
        ),
        created_at=obj.get("created_at", ""),
        view_id=obj.get("view_id"),
    )


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"{path}:{lineno}: malformed JSONL line: {exc}", str(path), lineno
            ) from exc
        yield lineno, obj


def _existing_response_keys(path: Path) -> set[tuple]:
    if not path.exists():
        return set()
    return {_response_from_obj(obj).key() for _, obj in _iter_jsonl(path)}


def append_records(path: str | Path, records: Iterable[ResponseRecord]) -> int:
    """Append records as one JSON object per line, skipping any whose
    unique key (prompt_id, variant, model, sample_index, view_id) is
    already stored. Returns the number actually written."""
    path = Path(path)
    records = list(records)
    for record in records:
        record.validate()
    seen = _existing_response_keys(path)
    written = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            for record in records:
                key = record.key()
                if key in seen:
                    continue
                fh.write(_response_to_json(record) + "\n")
                seen.add(key)
                written += 1
    except OSError as exc:
        raise StorageError(f"cannot append to {path}: {exc}") from exc
    return written


def read_records(
    path: str | Path,
    prompt_id: str | None = None,
    variant: str | None = None,
    model: str | None = None,
    limit: int | None = None,
) -> list[ResponseRecord]:
    """Records matching every given filter field, sorted by sample_index,
    truncated to the first `limit`. A store that does not exist yet reads
    as empty."""
    if limit is not None and limit < 0:
        raise InvalidArg(f"limit must be >= 0, got {limit}")
    path = Path(path)
    if not path.exists():
        return []
    matches = []
    for _, obj in _iter_jsonl(path):
        record = _response_from_obj(obj)
        if prompt_id is not None and record.prompt_id != prompt_id:
            continue
        if variant is not None and record.variant != variant:
            continue
        if model is not None and record.model != model:
            continue
        matches.append(record)
    matches.sort(key=lambda r: r.sample_index)
    if limit is not None:
        matches = matches[:limit]
    return matches


def _view_from_obj(obj: dict) -> ViewRecord:
    return ViewRecord(
        view_id=obj["view_id"],
        prompt_id=obj["prompt_id"],
        kind=obj["kind"],
        content=obj["content"],
        source=obj.get("source"),
        raw_description=obj.get("raw_description"),
    )


def append_views(path: str | Path, views: Iterable[ViewRecord]) -> int:
    """Append view records, deduplicating on (prompt_id, view_id)."""
    path = Path(path)
    views = list(views)
    for view in views:
        view.validate()
    seen: set[tuple[str, str]] = set()
    if path.exists():
        seen = {_view_from_obj(obj).key() for _, obj in _iter_jsonl(path)}
    written = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            for view in views:
                if view.key() in seen:
                    continue
                fh.write(
                    json.dumps(_strip_nones(asdict(view)), ensure_ascii=False, sort_keys=True)
                    + "\n"
                )
                seen.add(view.key())
                written += 1
    except OSError as exc:
        raise StorageError(f"cannot append to {path}: {exc}") from exc
    return written


def read_views(
    path: str | Path,
    prompt_id: str | None = None,
    kind: str | None = None,
) -> list[ViewRecord]:
    path = Path(path)
    if not path.exists():
        return []
    views = []
    for _, obj in _iter_jsonl(path):
        view = _view_from_obj(obj)
        if prompt_id is not None and view.prompt_id != prompt_id:
            continue
        if kind is not None and view.kind != kind:
            continue
        views.append(view)
    return views
