"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Every tolerance is pinned here; the end-to-end criteria
run the real CLI against the offline mock with network access forbidden.
"""

from __future__ import annotations

import csv
import json
import math
import random
import time
from contextlib import contextmanager
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner

from multinovelty.cli import main
from multinovelty.corpus import read_records
from multinovelty.correctness import classification_metrics, mse_score
from multinovelty.diversity import (
    lexical_entropy,
    mtld,
    sde,
    sdt,
    self_bleu_diversity,
)
from multinovelty.novelty import EmbeddingThresholdJudge, detect_novelty
from multinovelty.templates import load_template, render

from conftest import TEN_PROMPTS
from oracles import (
    oracle_entropy,
    oracle_mtld,
    oracle_sde,
    oracle_sdt,
    oracle_self_bleu_diversity,
)

TOL = 1e-9


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL", flush=True)
        raise
    print(f"ACCEPTANCE {name}: PASS", flush=True)


@pytest.fixture(autouse=True)
def forbid_network(monkeypatch):
    def _blocked(*args, **kwargs):
        raise AssertionError("network access attempted during offline acceptance run")

    monkeypatch.setattr(httpx, "post", _blocked)
    monkeypatch.setattr(httpx, "get", _blocked)
    monkeypatch.setattr(httpx, "request", _blocked)
    monkeypatch.setattr(httpx.Client, "send", _blocked)


def _random_corpus(rng, max_docs=10, max_len=50, alphabet=12):
    n_docs = rng.randint(2, max_docs)
    return [
        [f"w{rng.randrange(alphabet)}" for _ in range(rng.randint(1, max_len))]
        for _ in range(n_docs)
    ]


def test_criterion_1_metric_oracle_equivalence():
    with criterion("1 metric-oracle equivalence"):
        rng = random.Random(202)
        start = time.monotonic()
        for _ in range(50):
            docs = _random_corpus(rng)
            embs = [[rng.gauss(0, 1) for _ in range(8)] for _ in docs]
            for doc in docs:
                assert mtld(doc) == pytest.approx(oracle_mtld(doc), abs=TOL)
            assert sdt(docs) == pytest.approx(oracle_sdt(docs), abs=TOL)
            assert sde(embs) == pytest.approx(oracle_sde(embs), abs=TOL)
            assert self_bleu_diversity(docs) == pytest.approx(
                oracle_self_bleu_diversity(docs), abs=TOL
            )
            assert lexical_entropy(docs) == pytest.approx(oracle_entropy(docs), abs=TOL)
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"


def test_criterion_2_closed_form_cases():
    with criterion("2 closed-form cases"):
        identical = [["the", "very", "same", "answer"]] * 5
        assert sdt(identical) == pytest.approx(0.0, abs=TOL)
        assert self_bleu_diversity(identical) == pytest.approx(0.0, abs=TOL)
        assert sde([(0.6, 0.8)] * 5) == pytest.approx(0.0, abs=TOL)
        assert sdt([["a", "b"], ["c", "d"], ["e", "f"]]) == 1.0
        assert sde([(1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]) == pytest.approx(2.0 / 3.0, abs=TOL)
        assert lexical_entropy([["a", "a", "b", "c"]]) == 1.5
        assert mtld(["a"] * 10) == 2.0


def test_criterion_3_entropy_bound():
    with criterion("3 entropy bound"):
        rng = random.Random(303)
        for _ in range(100):
            docs = _random_corpus(rng, alphabet=rng.randint(2, 20))
            vocabulary = {t for d in docs for t in d}
            h = lexical_entropy(docs)
            assert 0.0 <= h <= math.log2(len(vocabulary)) + 1e-12
        for v_size in (2, 4, 8, 16, 32):
            tokens = [f"w{i}" for i in range(v_size)] * 3
            assert lexical_entropy([tokens]) == math.log2(v_size)


def test_criterion_4_novelty_determinism_and_boundaries():
    with criterion("4 novelty determinism and boundaries"):
        fixture = [(1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]
        labeling = detect_novelty(
            ["r1", "r2", "r3"], EmbeddingThresholdJudge(0.8), emb=fixture
        )
        assert labeling.labels == ["novel", "novel", "redundant"]

        rng = random.Random(404)
        for _ in range(100):
            n = rng.randint(1, 12)
            embs = [[rng.gauss(0, 1) for _ in range(5)] for _ in range(n)]
            texts = [f"r{i}" for i in range(n)]
            counts = []
            for tau in (-0.5, 0.0, 0.25, 0.5, 0.75, 1.0):
                result = detect_novelty(texts, EmbeddingThresholdJudge(tau), emb=embs)
                assert result.labels[0] == "novel"
                counts.append(result.labels.count("novel"))
            assert counts == sorted(counts), "novel count must be non-decreasing in tau"


def test_criterion_5_judge_calibration_arithmetic():
    with criterion("5 judge-calibration arithmetic"):
        predicted = [True] * 50 + [False] * 50
        actual = [True] * 42 + [False] * 8 + [False] * 25 + [True] * 25
        result = classification_metrics(predicted, actual)
        assert (result.tp, result.fp, result.tn, result.fn) == (42, 8, 25, 25)
        assert result.accuracy == 0.67
        assert mse_score([1.0, 2.0], [2.0, 4.0]) == 2.5
        assert mse_score([6.5], [7.0]) == 0.25
        assert mse_score([3.0, 4.0], [3.0, 4.0]) == 0.0


def _write_manifest(base: Path, run_id: str, prompts_file: Path, **overrides) -> Path:
    config = {
        "run_id": run_id,
        "prompts": str(prompts_file),
        "models": ["mock-model"],
        "variants": ["baseline", "text_view"],
        "sample_sizes": [100],
        "views_per_prompt": 10,
        "out_dir": str(base / f"out_{run_id}"),
    }
    config.update(overrides)
    path = base / f"manifest_{run_id}.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def _run_pipeline(manifest: Path, personality: str, seed: int, eval_args=()) -> Path:
    runner = CliRunner()
    for command in ("views", "generate"):
        result = runner.invoke(
            main,
            [command, "--manifest", str(manifest), "--mock", personality, "--seed", str(seed)],
            catch_exceptions=False,
        )
        assert result.exit_code == 0, result.output
    result = runner.invoke(
        main,
        [
            "evaluate",
            "--manifest",
            str(manifest),
            "--mock",
            personality,
            "--seed",
            str(seed),
            *eval_args,
        ],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    out_dir = Path(json.loads(manifest.read_text(encoding="utf-8"))["out_dir"])
    return out_dir / "report.csv"


def _read_rows(csv_path: Path) -> list[dict]:
    with csv_path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_6_directional_end_to_end(tmp_path, ten_prompts_file):
    with criterion("6 directional end-to-end (offline)"):
        start = time.monotonic()
        eval_args = ("--with-novelty", "--judge", "embedding:0.8")

        diverse_manifest = _write_manifest(tmp_path, "diverse", ten_prompts_file)
        diverse_csv = _run_pipeline(diverse_manifest, "diverse", seed=0, eval_args=eval_args)

        repetitive_manifest = _write_manifest(tmp_path, "repetitive", ten_prompts_file)
        repetitive_csv = _run_pipeline(
            repetitive_manifest, "repetitive", seed=0, eval_args=eval_args
        )

        metrics = ("mtld", "sdt", "entropy", "sde", "self_bleu_diversity",
                   "novelty_percent")
        diverse_rows = {
            (r["variant"], r["sample_size"]): r for r in _read_rows(diverse_csv)
        }
        repetitive_rows = {
            (r["variant"], r["sample_size"]): r for r in _read_rows(repetitive_csv)
        }
        for variant in ("baseline", "text_view"):
            d_row = diverse_rows[(variant, "100")]
            r_row = repetitive_rows[(variant, "100")]
            for metric in metrics:
                assert float(d_row[metric]) > float(r_row[metric]), (
                    f"{metric} not strictly higher for diverse mock ({variant}): "
                    f"{d_row[metric]} vs {r_row[metric]}"
                )

        repeat_manifest = _write_manifest(tmp_path, "diverse_repeat", ten_prompts_file)
        repeat_csv = _run_pipeline(repeat_manifest, "diverse", seed=0, eval_args=eval_args)
        assert repeat_csv.read_bytes() == diverse_csv.read_bytes()

        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"end-to-end comparison took {elapsed:.1f}s"


def test_criterion_7_prefix_and_resume(tmp_path, ten_prompts_file):
    with criterion("7 prefix/resume semantics"):
        prompts = tmp_path / "three.txt"
        prompts.write_text("\n".join(TEN_PROMPTS[:3]) + "\n", encoding="utf-8")

        big = _write_manifest(
            tmp_path, "big", prompts, sample_sizes=[100, 250], variants=["baseline"]
        )
        small = _write_manifest(
            tmp_path, "small", prompts, sample_sizes=[100], variants=["baseline"]
        )
        big_csv = _run_pipeline(big, "diverse", seed=0)
        small_csv = _run_pipeline(small, "diverse", seed=0)

        big_100 = [r for r in _read_rows(big_csv) if r["sample_size"] == "100"]
        small_100 = [r for r in _read_rows(small_csv) if r["sample_size"] == "100"]
        assert big_100 == small_100

        # Crash-resume: extend the small run to 250 samples; only the gap
        # is generated and no duplicate keys appear.
        small_dir = Path(json.loads(small.read_text(encoding="utf-8"))["out_dir"])
        before = read_records(small_dir / "responses.jsonl")
        config = json.loads(small.read_text(encoding="utf-8"))
        config["sample_sizes"] = [100, 250]
        small.write_text(json.dumps(config), encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["generate", "--manifest", str(small), "--mock", "diverse", "--seed", "0"],
            catch_exceptions=False,
        )
        assert result.exit_code == 0, result.output
        assert "wrote 450 new records" in result.output  # 3 prompts x 150 missing
        after = read_records(small_dir / "responses.jsonl")
        keys = [(r.prompt_id, r.variant, r.model, r.sample_index, r.view_id) for r in after]
        assert len(keys) == len(set(keys)) == 750
        # The original prefix is untouched by the resume.
        assert before == [r for r in after if r.sample_index < 100]

        big_dir = Path(json.loads(big.read_text(encoding="utf-8"))["out_dir"])
        big_records = read_records(big_dir / "responses.jsonl", prompt_id="p001", limit=100)
        small_records = read_records(small_dir / "responses.jsonl", prompt_id="p001", limit=100)
        assert [r.text for r in big_records] == [r.text for r in small_records]


def test_criterion_8_template_fidelity():
    with criterion("8 template fidelity"):
        summary = render(load_template("summarize"), max_words=250, text="<TEXT>")
        assert summary == (
            "Please summarize the following text in no more than 250 words:\n<TEXT>"
        )
        relevance = render(
            load_template("relevance"),
            prompt_text="<PROMPT>",
            summarized_answer="<SUMMARY>",
        )
        assert relevance == (
            "PROMPT:\n<PROMPT>\nANSWER:\n<SUMMARY>\n"
            "Question: Is this answer relevant to the prompt, or is it irrelevant??\n"
            'Please respond with exactly one word: "relevant" or "irrelevant".'
        )
        assert "no more than {max_words} words" in load_template("summarize")
        assert "respond with exactly one word" in load_template("relevance")
