"""Corpus diversity metrics.

Five measures over a list of tokenized responses: MTLD, TF-IDF semantic
diversity (sdt), lexical entropy, embedding semantic diversity (sde) and
inverted Self-BLEU. All cross-document reductions run through
``math.fsum``, whose exactly-rounded result does not depend on summation
order, so every corpus-level metric is exactly invariant under response
reordering and safe to parallelize over pairs.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import InsufficientDocs, InvalidArg
from .textops import TokenSeq, ngrams, tfidf_matrix

DEFAULT_TTR_THRESHOLD = 0.72
SELF_BLEU_EPSILON = 1e-9


@dataclass(frozen=True)
class DiversityReport:
    """One corpus's diversity quintet.

    ``sde`` is None when no embeddings were supplied; it is never
    zero-filled.
    """

    mtld: float
    sdt: float
    lexical_entropy_bits: float
    sde: float | None
    self_bleu_diversity: float
    n_responses: int


def _mtld_forward(tokens: Sequence[str], threshold: float) -> float:
    factors = 0.0
    types: set[str] = set()
    count = 0
    ttr = 1.0
    for tok in tokens:
        count += 1
        types.add(tok)
        ttr = len(types) / count
        if ttr < threshold:
            factors += 1.0
            types.clear()
            count = 0
            ttr = 1.0
    if count > 0:
        factors += (1.0 - ttr) / (1.0 - threshold)
    if factors == 0.0:
        # TTR never dropped and the remainder was perfectly diverse:
        # treat the whole text as one maximally diverse factor.
        return float(len(tokens))
    return len(tokens) / factors


def mtld(seq: TokenSeq, ttr_threshold: float = DEFAULT_TTR_THRESHOLD) -> float:
    """Measure of Textual Lexical Diversity (McCarthy & Jarvis 2010).

    Scans the sequence accumulating a running type-token ratio; each time
    it drops below `ttr_threshold` one factor is counted and the scan
    resets. A partial factor (1 - TTR_final) / (1 - threshold) covers the
    remainder. The result is token_count / factor_count, averaged over
    the forward and reversed passes.
    """
    if not seq:
        raise InvalidArg("mtld needs a non-empty token sequence")
    if not 0.0 < ttr_threshold < 1.0:
        raise InvalidArg(f"ttr_threshold must be in (0, 1), got {ttr_threshold}")
    forward = _mtld_forward(seq, ttr_threshold)
    backward = _mtld_forward(list(reversed(seq)), ttr_threshold)
    return 0.5 * (forward + backward)


def _mean_pairwise_dot_sparse(vectors: Sequence[dict[str, float]]) -> float:
    # sum_{i<j} v_i.v_j = (|S|^2 - sum_i |v_i|^2) / 2 with S = sum_i v_i,
    # turning the O(n^2) pair loop into one accumulation pass. Vectors are
    # unit (or zero) norm, so the pairwise dot equals the pairwise cosine.
    n = len(vectors)
    component_sums: dict[str, list[float]] = {}
    for vec in vectors:
        for term, w in vec.items():
            component_sums.setdefault(term, []).append(w)
    total_sq = math.fsum(math.fsum(ws) ** 2 for ws in component_sums.values())
    self_sq = math.fsum(math.fsum(w * w for w in vec.values()) for vec in vectors)
    return (total_sq - self_sq) / (n * (n - 1))


def sdt(docs: Sequence[TokenSeq]) -> float:
    """Semantic diversity of text: 1 minus the mean pairwise cosine
    similarity of the documents' TF-IDF vectors."""
    if len(docs) < 2:
        raise InsufficientDocs("sdt needs at least 2 documents")
    return 1.0 - _mean_pairwise_dot_sparse(tfidf_matrix(docs))


def _as_rows(emb: Sequence[Sequence[float]]) -> list[list[float]]:
    rows = [[float(x) for x in row] for row in emb]
    if not rows:
        raise InvalidArg("empty embedding set")
    dim = len(rows[0])
    if any(len(r) != dim for r in rows):
        raise InvalidArg("embeddings have mixed dimensions")
    return rows


def _unit(row: list[float]) -> list[float]:
    norm = math.sqrt(math.fsum(x * x for x in row))
    if norm == 0.0:
        return row
    return [x / norm for x in row]


def sde(emb: Sequence[Sequence[float]]) -> float:
    """Semantic diversity of embeddings: the mean of (1 - cosine
    similarity) over all unordered pairs."""
    rows = _as_rows(emb)
    n = len(rows)
    if n < 2:
        raise InsufficientDocs("sde needs at least 2 embeddings")
    normed = [_unit(r) for r in rows]
    dim = len(normed[0])
    col_sums = [math.fsum(r[k] for r in normed) for k in range(dim)]
    total_sq = math.fsum(s * s for s in col_sums)
    self_sq = math.fsum(math.fsum(x * x for x in r) for r in normed)
    mean_cos = (total_sq - self_sq) / (n * (n - 1))
    return 1.0 - mean_cos


def _closest_ref_length(lengths: Sequence[int], skip: int, hyp_len: int) -> int:
    # Standard BLEU tie rule: closest absolute difference, then shorter.
    best = -1
    for j, ref_len in enumerate(lengths):
        if j == skip:
            continue
        if best < 0 or (abs(ref_len - hyp_len), ref_len) < (abs(best - hyp_len), best):
            best = ref_len
    return best


class _TopTwo:
    """Largest and second-largest per-document count of one n-gram,
    tracking which document holds the largest (so a max excluding any
    single document is exact)."""

    __slots__ = ("top", "top_doc", "second")

    def __init__(self) -> None:
        self.top = 0
        self.top_doc = -1
        self.second = 0

    def update(self, count: int, doc: int) -> None:
        if count > self.top:
            self.second = self.top
            self.top = count
            self.top_doc = doc
        elif count > self.second:
            self.second = count

    def max_excluding(self, doc: int) -> int:
        return self.second if doc == self.top_doc else self.top


def self_bleu_diversity(
    docs: Sequence[TokenSeq], max_n: int = 4, epsilon: float = SELF_BLEU_EPSILON
) -> float:
    """1 minus the mean BLEU of each document against all others.

    BLEU uses uniform weights over orders 1..max_n, clipped modified
    n-gram precision against the per-gram maximum reference count, and
    the standard brevity penalty with the closest reference length.
    Orders for which the hypothesis has no n-grams are dropped from the
    geometric mean (weights renormalized), which keeps identical corpora
    at BLEU exactly 1 regardless of document length; a precision of zero
    is floored at `epsilon`.
    """
    if max_n < 1:
        raise InvalidArg(f"max_n must be >= 1, got {max_n}")
    n_docs = len(docs)
    if n_docs < 2:
        raise InsufficientDocs("self_bleu_diversity needs at least 2 documents")

    lengths = [len(d) for d in docs]
    counts_by_order = [[ngrams(d, order) for d in docs] for order in range(1, max_n + 1)]
    best_by_order: list[dict[tuple[str, ...], _TopTwo]] = []
    for counts in counts_by_order:
        best: dict[tuple[str, ...], _TopTwo] = {}
        for j, doc_counts in enumerate(counts):
            for gram, c in doc_counts.items():
                entry = best.get(gram)
                if entry is None:
                    entry = best[gram] = _TopTwo()
                entry.update(c, j)
        best_by_order.append(best)

    bleu_scores = []
    for i in range(n_docs):
        hyp_len = lengths[i]
        if hyp_len == 0:
            bleu_scores.append(0.0)
            continue
        log_precisions = []
        for order in range(max_n):
            hyp_counts = counts_by_order[order][i]
            total = sum(hyp_counts.values())
            if total == 0:
                continue
            best = best_by_order[order]
            clipped = sum(
                min(c, best[gram].max_excluding(i)) for gram, c in hyp_counts.items()
            )
            precision = clipped / total if clipped else epsilon
            log_precisions.append(math.log(precision))
        ref_len = _closest_ref_length(lengths, i, hyp_len)
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
        bleu_scores.append(bp * math.exp(sum(log_precisions) / len(log_precisions)))

    return 1.0 - math.fsum(bleu_scores) / n_docs


def lexical_entropy(docs: Sequence[TokenSeq]) -> float:
    """Shannon entropy (bits) of the token distribution pooled across all
    documents."""
    pooled: Counter[str] = Counter()
    for doc in docs:
        pooled.update(doc)
    total = sum(pooled.values())
    if total == 0:
        raise InvalidArg("lexical_entropy needs at least one token")
    # Sorted terms give an input-order-independent summation.
    return -math.fsum(
        (c / total) * math.log2(c / total) for _, c in sorted(pooled.items())
    )


def diversity_report(
    docs: Sequence[TokenSeq],
    emb: Sequence[Sequence[float]] | None = None,
    ttr_threshold: float = DEFAULT_TTR_THRESHOLD,
    max_n: int = 4,
) -> DiversityReport:
    """All five metrics for one corpus.

    MTLD is the mean of per-response MTLD values (responses with no
    tokens are skipped); sde is None when `emb` is absent.
    """
    if len(docs) < 2:
        raise InsufficientDocs("diversity_report needs at least 2 documents")
    if emb is not None and len(emb) != len(docs):
        raise InvalidArg(f"{len(emb)} embeddings for {len(docs)} documents")
    mtld_values = [mtld(d, ttr_threshold) for d in docs if d]
    mean_mtld = math.fsum(mtld_values) / len(mtld_values) if mtld_values else 0.0
    return DiversityReport(
        mtld=mean_mtld,
        sdt=sdt(docs),
        lexical_entropy_bits=lexical_entropy(docs),
        sde=sde(emb) if emb is not None else None,
        self_bleu_diversity=self_bleu_diversity(docs, max_n=max_n),
        n_responses=len(docs),
    )
