"""Deterministic text primitives shared by every metric.

Tokenization, n-gram extraction, TF-IDF vectorization and cosine
similarity are implemented here once, dependency-free, so that metric
values are reproducible bit-for-bit across platforms and runs.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence

from .errors import InvalidArg

# A token is a maximal run of Unicode alphanumerics; apostrophes are kept
# word-internal ("don't" stays one token). Underscore is excluded from \w.
_TOKEN_RE = re.compile(r"[^\W_]+(?:['’][^\W_]+)*")

TokenSeq = list[str]
TfIdfVector = dict[str, float]


def tokenize(text: str) -> TokenSeq:
    """Lowercase `text` and split it into alphanumeric-run tokens.

    Punctuation is discarded; an empty string yields an empty sequence.
    Idempotent on its own output joined by spaces.
    """
    return _TOKEN_RE.findall(text.lower())


def ngrams(seq: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    """Multiset of all contiguous n-token windows of `seq`.

    Empty when the sequence is shorter than `n`.
    """
    if n < 1:
        raise InvalidArg(f"n must be >= 1, got {n}")
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def tfidf_matrix(docs: Sequence[TokenSeq]) -> list[TfIdfVector]:
    """L2-normalized TF-IDF vectors over the shared vocabulary of `docs`.

    tf is the raw term count within a document; idf uses the smoothed form
    ln((1 + N) / (1 + df)) + 1 so no term ever gets zero or infinite
    weight. A document with no tokens maps to the zero vector.
    """
    if not docs:
        raise InvalidArg("tfidf_matrix needs at least one document")
    n = len(docs)
    df: Counter[str] = Counter()
    for doc in docs:
        df.update(set(doc))
    idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}

    vectors: list[TfIdfVector] = []
    for doc in docs:
        weights = {t: c * idf[t] for t, c in Counter(doc).items()}
        norm = math.sqrt(math.fsum(w * w for w in weights.values()))
        if norm > 0.0:
            weights = {t: w / norm for t, w in weights.items()}
        vectors.append(weights)
    return vectors


def cosine_sim(
    u: Mapping[str, float] | Sequence[float],
    v: Mapping[str, float] | Sequence[float],
) -> float:
    """Cosine similarity u.v / (|u||v|); 0.0 when either norm is zero.

    Accepts two sparse term->weight mappings (shared vocabulary implied)
    or two equal-length dense vectors.
    """
    if isinstance(u, Mapping) and isinstance(v, Mapping):
        small, large = (u, v) if len(u) <= len(v) else (v, u)
        dot = math.fsum(w * large[t] for t, w in small.items() if t in large)
        nu = math.sqrt(math.fsum(w * w for w in u.values()))
        nv = math.sqrt(math.fsum(w * w for w in v.values()))
    elif isinstance(u, Mapping) or isinstance(v, Mapping):
        raise InvalidArg("cannot mix sparse and dense vectors")
    else:
        if len(u) != len(v):
            raise InvalidArg(f"dimension mismatch: {len(u)} vs {len(v)}")
        dot = math.fsum(a * b for a, b in zip(u, v))
        nu = math.sqrt(math.fsum(a * a for a in u))
        nv = math.sqrt(math.fsum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    # Clamp away float noise (possible with near-underflow components) so
    # the result always lies in [-1, 1].
    return max(-1.0, min(1.0, dot / (nu * nv)))
