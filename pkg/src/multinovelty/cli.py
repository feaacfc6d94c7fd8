"""Experiment orchestration CLI.

`mn views` fans a prompt file out into per-prompt views, `mn generate`
produces the response corpus, `mn evaluate` scores it (diversity always,
novelty/correctness behind flags) into CSV + Markdown reports, and
`mn calibrate` measures a judge against user-supplied labeled data.
Every stage is resumable: stores are append-only with dedup keys, and
re-running against a warm cache or the offline mock is deterministic.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import corpus, views
from .corpus import (
    DecodingParams,
    ResponseRecord,
    RunManifest,
    load_manifest,
    load_prompts,
)
from .correctness import (
    classification_metrics,
    correctness_report,
    judge_relevance,
    mse_score,
    score_ielts_essay,
)
from .diversity import diversity_report
from .errors import (
    InvalidArg,
    JudgeParseError,
    MissingEmbeddings,
    MultiNoveltyError,
)
from .novelty import (
    ChatNoveltyJudge,
    EmbeddingThresholdJudge,
    chat_judge,
    detect_novelty,
    embedding_judge,
)
from .provider import (
    CachedProvider,
    ChatRequest,
    HttpProvider,
    MockProvider,
    bounded_map,
    load_provider_config,
)
from .textops import tokenize

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "mtld",
    "sdt",
    "entropy",
    "sde",
    "self_bleu_diversity",
    "novelty_percent",
    "correctness_percent",
    "structure_mean",
)

CSV_COLUMNS = ("model", "variant", "sample_size") + METRIC_COLUMNS[:6] + (
    "novelty_judge",
    "correctness_percent",
    "structure_mean",
)


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def _out_dir(manifest: RunManifest, manifest_path: Path) -> Path:
    base = manifest_path.parent
    out = _resolve(base, manifest.out_dir) if manifest.out_dir else base / "runs" / manifest.run_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_provider(
    manifest: RunManifest,
    manifest_path: Path,
    provider_config: str | None,
    mock: str | None,
    seed: int,
    cache_dir: str | None,
    use_cache: bool,
    out_dir: Path,
):
    if mock:
        provider = MockProvider(personality=mock, seed=seed)
    else:
        cfg_path = provider_config or manifest.provider_config
        if not cfg_path:
            raise click.UsageError("need --provider-config, --mock, or provider_config in the manifest")
        resolved = _resolve(manifest_path.parent, cfg_path)
        provider = HttpProvider(load_provider_config(resolved))
    if use_cache:
        provider = CachedProvider(provider, cache_dir or out_dir / "cache")
    return provider


def _parse_judge(spec: str, provider):
    kind, _, arg = spec.partition(":")
    if kind == "embedding":
        return EmbeddingThresholdJudge(tau=float(arg) if arg else 0.80)
    if kind == "chat":
        return ChatNoveltyJudge(provider=provider, model=arg or None)
    raise click.BadParameter(f"unknown judge spec {spec!r}; use embedding:<tau> or chat:<model>")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Multi-view prompt enrichment and response-corpus evaluation."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


manifest_option = click.option(
    "--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False)
)
provider_options = [
    click.option("--provider-config", default=None, type=click.Path(dir_okay=False)),
    click.option("--mock", type=click.Choice(["repetitive", "diverse", "echo"]), default=None),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--cache-dir", default=None, type=click.Path(file_okay=False)),
    click.option("--no-cache", "use_cache", is_flag=True, flag_value=False, default=True),
]


def _with_provider_options(fn):
    for option in reversed(provider_options):
        fn = option(fn)
    return fn


@main.command("views")
@manifest_option
@_with_provider_options
def cmd_views(manifest_path, provider_config, mock, seed, cache_dir, use_cache) -> None:
    """Generate text views (and image views when a manifest lists image
    sources) for every prompt."""
    manifest_file = Path(manifest_path)
    manifest = load_manifest(manifest_file)
    out_dir = _out_dir(manifest, manifest_file)
    provider = _build_provider(
        manifest, manifest_file, provider_config, mock, seed, cache_dir, use_cache, out_dir
    )
    prompts = load_prompts(_resolve(manifest_file.parent, manifest.prompts))
    views_path = out_dir / "views.jsonl"

    failures: list[str] = []
    total_written = 0
    for prompt in prompts:
        existing = corpus.read_views(views_path, prompt_id=prompt.id, kind="text")
        if len(existing) >= manifest.views_per_prompt:
            continue
        try:
            records = views.generate_text_views(prompt, manifest.views_per_prompt, provider)
        except MultiNoveltyError as exc:
            logger.error("text views failed for prompt %s: %s", prompt.id, exc)
            failures.append(prompt.id)
            continue
        total_written += corpus.append_views(views_path, records)

    if manifest.image_manifest:
        image_path = _resolve(manifest_file.parent, manifest.image_manifest)
        sources_by_prompt: dict[str, list[str]] = {}
        for line in image_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            sources_by_prompt.setdefault(obj["prompt_id"], []).append(obj["source"])
        for prompt in prompts:
            sources = sources_by_prompt.get(prompt.id, [])
            existing_ids = {
                v.view_id for v in corpus.read_views(views_path, prompt_id=prompt.id, kind="image")
            }
            for i, source in enumerate(sources, start=1):
                view_id = f"{prompt.id}-i{i:03d}"
                if view_id in existing_ids:
                    continue
                try:
                    raw = views.describe_image(source, provider)
                    refined = views.rewrite_description(raw, provider)
                except MultiNoveltyError as exc:
                    logger.error("image view %s failed: %s", view_id, exc)
                    failures.append(view_id)
                    continue
                total_written += corpus.append_views(
                    views_path,
                    [
                        corpus.ViewRecord(
                            view_id=view_id,
                            prompt_id=prompt.id,
                            kind="image",
                            content=refined,
                            source=str(source),
                            raw_description=raw,
                        )
                    ],
                )

    click.echo(f"views: wrote {total_written} new records to {views_path}")
    if failures:
        click.echo(f"views: {len(failures)} unit(s) failed: {', '.join(failures)}", err=True)
        sys.exit(1)


def _views_for_variant(views_path: Path, prompt_id: str, variant: str) -> list:
    kind = "text" if variant == "text_view" else "image"
    return corpus.read_views(views_path, prompt_id=prompt_id, kind=kind)


@main.command("generate")
@manifest_option
@_with_provider_options
def cmd_generate(manifest_path, provider_config, mock, seed, cache_dir, use_cache) -> None:
    """Generate max(sample_sizes) responses per (prompt, variant, model);
    view variants rotate through the stored views so each is exercised
    evenly. Already-stored samples are skipped, so runs resume cleanly."""
    manifest_file = Path(manifest_path)
    manifest = load_manifest(manifest_file)
    out_dir = _out_dir(manifest, manifest_file)
    provider = _build_provider(
        manifest, manifest_file, provider_config, mock, seed, cache_dir, use_cache, out_dir
    )
    prompts = load_prompts(_resolve(manifest_file.parent, manifest.prompts))
    views_path = out_dir / "views.jsonl"
    responses_path = out_dir / "responses.jsonl"
    max_size = max(manifest.sample_sizes)
    decoding = DecodingParams()

    total_written = 0
    for model in manifest.models:
        for variant in manifest.variants:
            for prompt in prompts:
                if variant == "baseline":
                    variant_views = [None]
                else:
                    variant_views = _views_for_variant(views_path, prompt.id, variant)
                    if not variant_views:
                        raise click.ClickException(
                            f"no {variant} views stored for prompt {prompt.id}; run `mn views` first"
                        )
                existing = {
                    r.sample_index
                    for r in corpus.read_records(
                        responses_path, prompt_id=prompt.id, variant=variant, model=model
                    )
                }
                todo = [i for i in range(max_size) if i not in existing]
                if not todo:
                    continue

                def generate_one(i: int) -> ResponseRecord:
                    view = variant_views[i % len(variant_views)]
                    content = views.assemble_prompt(prompt, view)
                    reply = provider.chat(
                        ChatRequest(
                            messages=[{"role": "user", "content": content}],
                            decoding=decoding,
                            tag=f"gen|{model}|{variant}|{prompt.id}|{i}",
                            model=model,
                        )
                    )
                    return ResponseRecord(
                        prompt_id=prompt.id,
                        variant=variant,
                        model=model,
                        sample_index=i,
                        text=reply.text,
                        decoding=decoding,
                        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                        view_id=view.view_id if view is not None else None,
                    )

                records = bounded_map(
                    generate_one, todo, max_workers=getattr(provider, "max_parallel", 1)
                )
                total_written += corpus.append_records(responses_path, records)

    click.echo(f"generate: wrote {total_written} new records to {responses_path}")


def _population_std(values: list[float]) -> float:
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


def _write_report_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            rendered = {}
            for column in CSV_COLUMNS:
                value = row.get(column)
                if isinstance(value, float):
                    rendered[column] = f"{value:.6f}"
                elif value is None:
                    rendered[column] = ""
                else:
                    rendered[column] = str(value)
            writer.writerow(rendered)


def _read_report_csv(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = dict(raw)
            for column in METRIC_COLUMNS:
                if column in row:
                    row[column] = float(row[column]) if row[column] else None
            rows.append(row)
    return rows


_MD_METRICS = (
    ("mtld", "MTLD"),
    ("sdt", "SDT"),
    ("entropy", "Entropy (bits)"),
    ("sde", "SDE"),
    ("self_bleu_diversity", "Self-BLEU div."),
    ("novelty_percent", "Novelty %"),
    ("correctness_percent", "Correct %"),
    ("structure_mean", "Structure"),
)


def _render_markdown(rows: list[dict]) -> str:
    """Per-size tables with the best value per (model, metric) group in
    bold, then a mean ± std aggregate over sizes."""
    sizes = sorted({row["sample_size"] for row in rows if str(row["sample_size"]).isdigit()}, key=int)
    lines = ["# Evaluation report", ""]

    def emit_table(size_rows: list[dict], std_lookup: dict | None = None) -> None:
        lines.append("| model | variant | " + " | ".join(label for _, label in _MD_METRICS) + " |")
        lines.append("|" + "---|" * (2 + len(_MD_METRICS)))
        best: dict[tuple[str, str], float] = {}
        for row in size_rows:
            for key, _ in _MD_METRICS:
                value = row.get(key)
                if value is None:
                    continue
                group = (row["model"], key)
                if group not in best or value > best[group]:
                    best[group] = value
        for row in size_rows:
            cells = [row["model"], row["variant"]]
            for key, _ in _MD_METRICS:
                value = row.get(key)
                if value is None:
                    cells.append("—")
                    continue
                if std_lookup is not None:
                    std = std_lookup.get((row["model"], row["variant"], key))
                    text = f"{value:.4f} ± {std:.4f}" if std is not None else f"{value:.4f}"
                else:
                    text = f"{value:.4f}"
                if best.get((row["model"], key)) == value:
                    text = f"**{text}**"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")

    for size in sizes:
        lines.append(f"## Sample size {size}")
        lines.append("")
        emit_table([row for row in rows if str(row["sample_size"]) == size])

    mean_rows = [row for row in rows if row["sample_size"] == "mean"]
    std_rows = {
        (row["model"], row["variant"], key): row.get(key)
        for row in rows
        if row["sample_size"] == "std"
        for key, _ in _MD_METRICS
    }
    if mean_rows:
        lines.append("## Mean ± std across sample sizes")
        lines.append("")
        emit_table(mean_rows, std_rows)
    return "\n".join(lines)


@main.command("evaluate")
@manifest_option
@_with_provider_options
@click.option("--sizes", default=None, help="Comma-separated sample sizes (default: manifest).")
@click.option("--judge", "judge_spec", default="embedding:0.8", show_default=True)
@click.option("--with-novelty", is_flag=True, default=False)
@click.option("--with-correctness", is_flag=True, default=False)
@click.option("--no-sde", is_flag=True, default=False, help="Skip embeddings and the SDE column.")
def cmd_evaluate(
    manifest_path,
    provider_config,
    mock,
    seed,
    cache_dir,
    use_cache,
    sizes,
    judge_spec,
    with_novelty,
    with_correctness,
    no_sde,
) -> None:
    """Score the stored responses: per-prompt metrics averaged across
    prompts, one row per (model, variant, size), plus mean ± std rows
    across sizes."""
    manifest_file = Path(manifest_path)
    manifest = load_manifest(manifest_file)
    out_dir = _out_dir(manifest, manifest_file)
    provider = _build_provider(
        manifest, manifest_file, provider_config, mock, seed, cache_dir, use_cache, out_dir
    )
    prompts = load_prompts(_resolve(manifest_file.parent, manifest.prompts))
    responses_path = out_dir / "responses.jsonl"
    size_list = (
        sorted(int(s) for s in sizes.split(",")) if sizes else sorted(manifest.sample_sizes)
    )
    judge = _parse_judge(judge_spec, provider) if with_novelty else None
    need_embeddings = (not no_sde) or isinstance(judge, EmbeddingThresholdJudge)

    rows: list[dict] = []
    for model in manifest.models:
        for variant in manifest.variants:
            per_prompt_records: dict[str, list[ResponseRecord]] = {}
            per_prompt_emb: dict[str, list[list[float]]] = {}
            for prompt in prompts:
                records = corpus.read_records(
                    responses_path,
                    prompt_id=prompt.id,
                    variant=variant,
                    model=model,
                    limit=max(size_list),
                )
                if len(records) < max(size_list):
                    raise click.ClickException(
                        f"only {len(records)} responses stored for ({model}, {variant}, "
                        f"{prompt.id}) but size {max(size_list)} requested; run `mn generate`"
                    )
                per_prompt_records[prompt.id] = records
                if need_embeddings:
                    try:
                        per_prompt_emb[prompt.id] = provider.embed(
                            [r.text for r in records]
                        ).vectors
                    except InvalidArg as exc:
                        raise MissingEmbeddings(
                            f"SDE/novelty need an embedding model: {exc}; "
                            "pass --no-sde or configure embed_model"
                        ) from exc

            variant_rows = []
            for size in size_list:
                metric_acc: dict[str, list[float]] = {key: [] for key in METRIC_COLUMNS}
                for prompt in prompts:
                    records = per_prompt_records[prompt.id][:size]
                    docs = [tokenize(r.text) for r in records]
                    emb = per_prompt_emb.get(prompt.id)
                    emb_slice = emb[:size] if emb is not None else None
                    report = diversity_report(docs, emb_slice if not no_sde else None)
                    metric_acc["mtld"].append(report.mtld)
                    metric_acc["sdt"].append(report.sdt)
                    metric_acc["entropy"].append(report.lexical_entropy_bits)
                    if report.sde is not None:
                        metric_acc["sde"].append(report.sde)
                    metric_acc["self_bleu_diversity"].append(report.self_bleu_diversity)
                    if judge is not None:
                        labeling = detect_novelty(
                            [r.text for r in records], judge, emb=emb_slice
                        )
                        metric_acc["novelty_percent"].append(labeling.novelty_percent)
                    if with_correctness:
                        creport = correctness_report(records, prompts, provider)
                        metric_acc["correctness_percent"].append(creport.percent_correct)
                        metric_acc["structure_mean"].append(creport.mean_structure)

                def average(key: str) -> float | None:
                    values = metric_acc[key]
                    return math.fsum(values) / len(values) if values else None

                row = {
                    "model": model,
                    "variant": variant,
                    "sample_size": size,
                    "novelty_judge": judge.judge_id if judge is not None else "",
                }
                for key in METRIC_COLUMNS:
                    row[key] = average(key)
                variant_rows.append(row)
            rows.extend(variant_rows)

            for stat in ("mean", "std"):
                agg = {
                    "model": model,
                    "variant": variant,
                    "sample_size": stat,
                    "novelty_judge": judge.judge_id if judge is not None else "",
                }
                for key in METRIC_COLUMNS:
                    values = [r[key] for r in variant_rows]
                    if any(v is None for v in values):
                        agg[key] = None
                    elif stat == "mean":
                        agg[key] = math.fsum(values) / len(values)
                    else:
                        agg[key] = _population_std(values)
                rows.append(agg)

    csv_path = out_dir / "report.csv"
    md_path = out_dir / "report.md"
    _write_report_csv(csv_path, rows)
    md_path.write_text(_render_markdown(_read_report_csv(csv_path)), encoding="utf-8")
    click.echo(f"evaluate: wrote {csv_path} and {md_path}")


@main.command("report")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def cmd_report(csv_path, out_path) -> None:
    """Re-render the Markdown report from an existing report.csv."""
    csv_file = Path(csv_path)
    markdown = _render_markdown(_read_report_csv(csv_file))
    out_file = Path(out_path) if out_path else csv_file.with_suffix(".md")
    out_file.write_text(markdown, encoding="utf-8")
    click.echo(f"report: wrote {out_file}")


def _parse_bool_label(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return bool(value)
    word = str(value).strip().lower()
    if word in ("1", "true", "novel", "relevant", "correct", "yes"):
        return True
    if word in ("0", "false", "redundant", "irrelevant", "incorrect", "no"):
        return False
    raise ValueError(f"unrecognized label {value!r}")


@main.command("calibrate")
@click.option("--labeled", "labeled_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(["novelty", "relevance", "score"]), required=True)
@click.option("--judge", "judge_spec", default="embedding:0.8", show_default=True)
@click.option("--provider-config", default=None, type=click.Path(dir_okay=False))
@click.option("--mock", type=click.Choice(["repetitive", "diverse", "echo"]), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_calibrate(labeled_path, task, judge_spec, provider_config, mock, seed) -> None:
    """Run a judge over labeled items: classification metrics for the
    binary tasks, MSE for score prediction. Lines that do not match the
    schema are reported and skipped."""
    if mock:
        provider = MockProvider(personality=mock, seed=seed)
    elif provider_config:
        provider = HttpProvider(load_provider_config(provider_config))
    else:
        raise click.UsageError("need --provider-config or --mock")

    judge = _parse_judge(judge_spec, provider) if task == "novelty" else None
    predicted_bools: list[bool] = []
    actual_bools: list[bool] = []
    predicted_scores: list[float] = []
    actual_scores: list[float] = []
    skipped = 0

    for lineno, line in enumerate(
        Path(labeled_path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
            if task == "relevance":
                verdict = judge_relevance(item["prompt"], item["answer"], provider)
                predicted_bools.append(verdict.relevant)
                actual_bools.append(_parse_bool_label(item["label"]))
            elif task == "novelty":
                premises = item["premises"]
                if isinstance(premises, str):
                    premises = [premises]
                if isinstance(judge, EmbeddingThresholdJudge):
                    vectors = provider.embed([item["hypothesis"], *premises]).vectors
                    verdict_word = embedding_judge(vectors[0], vectors[1:], judge.tau)
                else:
                    verdict_word = chat_judge(
                        item["hypothesis"], premises, provider, model=judge.model
                    )
                predicted_bools.append(verdict_word == "novel")
                actual_bools.append(_parse_bool_label(item["label"]))
            else:
                predicted_scores.append(
                    score_ielts_essay(item["question"], item["essay"], provider)
                )
                actual_scores.append(float(item["score"]))
        except (KeyError, ValueError, json.JSONDecodeError, JudgeParseError) as exc:
            logger.error("%s:%d: skipping item: %s", labeled_path, lineno, exc)
            skipped += 1

    if task == "score":
        if not predicted_scores:
            raise click.ClickException("no valid labeled items")
        click.echo(f"mse: {mse_score(predicted_scores, actual_scores):.4f}")
    else:
        if not predicted_bools:
            raise click.ClickException("no valid labeled items")
        result = classification_metrics(predicted_bools, actual_bools)
        click.echo(
            f"accuracy: {result.accuracy:.4f}\n"
            f"precision: {result.precision:.4f}\n"
            f"recall: {result.recall:.4f}\n"
            f"f1: {result.f1:.4f}\n"
            f"confusion: tp={result.tp} fp={result.fp} tn={result.tn} fn={result.fn}"
        )
    if skipped:
        click.echo(f"skipped {skipped} malformed line(s)", err=True)


if __name__ == "__main__":
    main()
