"""Provider-agnostic access to chat, vision-caption and embedding services.

One wire protocol (OpenAI-compatible JSON over HTTP) covers every real
backend; a deterministic offline mock with selectable personalities
("repetitive", "diverse", "echo") stands in for all capabilities during
tests. A content-addressed disk cache and a sliding-window rate limiter
wrap any provider.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import mimetypes
import os
import random
import re
import threading
import time
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import DecodingParams
from .errors import AuthError, InvalidArg, ParseError, ProviderError, StorageError

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 5
BACKOFF_BASE_SECONDS = 0.5
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for one OpenAI-compatible endpoint.

    API keys are only ever read from the environment variable named by
    `api_key_env`, never stored in files.
    """

    name: str
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    chat_model: str = "gpt-4o-mini"
    vision_model: str | None = None
    embed_model: str | None = None
    max_parallel: int = 4
    requests_per_minute: int = 60
    timeout_seconds: float = 60.0
    embed_batch_size: int = 128

    def validate(self) -> None:
        if self.max_parallel < 1:
            raise InvalidArg("max_parallel must be >= 1")
        if self.requests_per_minute < 1:
            raise InvalidArg("requests_per_minute must be >= 1")
        if self.embed_batch_size < 1:
            raise InvalidArg("embed_batch_size must be >= 1")


def load_provider_config(path: str | Path) -> ProviderConfig:
    """Load a ProviderConfig from JSON (or TOML on Python >= 3.11)."""
    path = Path(path)
    try:
        raw_text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read provider config {path}: {exc}") from exc
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError as exc:
            raise InvalidArg(
                "TOML provider configs need Python >= 3.11; use JSON instead"
            ) from exc
        raw = tomllib.loads(raw_text)
    else:
        try:
            raw = json.loads(raw_text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"provider config {path} is not valid JSON: {exc}") from exc
    cfg = ProviderConfig(**raw)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request.

    `model`, when set, overrides the provider's configured chat model.
    `tag` never reaches the wire; it distinguishes repeated sampling of
    an identical payload, feeding both the cache key and the mock's
    seeding, so sample k of a prompt is reproducible in isolation.
    """

    messages: tuple[dict, ...] | list[dict]
    decoding: DecodingParams = DecodingParams()
    tag: str = ""
    model: str | None = None

    def validate(self) -> None:
        if not self.messages:
            raise InvalidArg("chat request needs at least one message")


@dataclass(frozen=True)
class ChatReply:
    text: str
    token_usage: dict
    model: str
    latency_ms: float


@dataclass(frozen=True)
class EmbedReply:
    vectors: list[list[float]]
    model: str


class RateLimiter:
    """Admits at most `requests_per_minute` starts in any sliding 60 s
    window and at most `max_parallel` requests in flight.

    `clock` and `sleep` are injectable so the window behavior is testable
    with simulated time.
    """

    WINDOW_SECONDS = 60.0

    def __init__(
        self,
        requests_per_minute: int,
        max_parallel: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._rpm = requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(max_parallel)
        self._lock = threading.Lock()
        self._starts: deque[float] = deque()

    def acquire(self) -> None:
        self._sem.acquire()
        while True:
            with self._lock:
                now = self._clock()
                while self._starts and now - self._starts[0] >= self.WINDOW_SECONDS:
                    self._starts.popleft()
                if len(self._starts) < self._rpm:
                    self._starts.append(now)
                    return
                wait = self.WINDOW_SECONDS - (now - self._starts[0])
            self._sleep(max(wait, 0.0))

    def release(self) -> None:
        self._sem.release()

    def __enter__(self) -> "RateLimiter":
        self.acquire()
        return self

    def __exit__(self, *exc_info) -> None:
        self.release()


def _default_transport(
    url: str, headers: dict, payload: dict, timeout: float
) -> tuple[int, dict]:
    import httpx

    response = httpx.post(url, headers=headers, json=payload, timeout=timeout)
    try:
        body = response.json()
    except ValueError:
        body = {}
    return response.status_code, body


def _file_to_data_url(path: Path) -> str:
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    data = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{data}"


class HttpProvider:
    """OpenAI-compatible HTTP provider with retries and rate limiting.

    Transient failures (429, 5xx, timeouts) are retried with exponential
    backoff up to MAX_ATTEMPTS; auth failures are raised immediately and
    never retried.
    """

    def __init__(
        self,
        cfg: ProviderConfig,
        transport: Callable[[str, dict, dict, float], tuple[int, dict]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        cfg.validate()
        self.cfg = cfg
        self.name = cfg.name
        self.max_parallel = cfg.max_parallel
        self._transport = transport or _default_transport
        self._sleep = sleep
        self._limiter = RateLimiter(cfg.requests_per_minute, cfg.max_parallel)

    def fingerprint(self) -> dict:
        return {
            "name": self.cfg.name,
            "base_url": self.cfg.base_url,
            "chat_model": self.cfg.chat_model,
            "vision_model": self.cfg.vision_model,
            "embed_model": self.cfg.embed_model,
        }

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, endpoint: str, payload: dict) -> dict:
        url = self.cfg.base_url.rstrip("/") + endpoint
        status = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                with self._limiter:
                    status, body = self._transport(
                        url, self._headers(), payload, self.cfg.timeout_seconds
                    )
            except (TimeoutError, OSError) as exc:
                logger.warning("attempt %d against %s failed: %s", attempt, url, exc)
                status, body = None, {}
            else:
                if status in (401, 403):
                    raise AuthError(f"{url} rejected credentials (HTTP {status})")
                if status is not None and 200 <= status < 300:
                    return body
                if status is not None and status not in RETRYABLE_STATUSES:
                    raise ProviderError(
                        f"{url} returned HTTP {status}", status=status, attempts=attempt
                    )
                logger.warning("attempt %d against %s got HTTP %s", attempt, url, status)
            if attempt < MAX_ATTEMPTS:
                self._sleep(BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
        raise ProviderError(
            f"{url} still failing after {MAX_ATTEMPTS} attempts",
            status=status,
            attempts=MAX_ATTEMPTS,
        )

    def chat(self, request: ChatRequest) -> ChatReply:
        request.validate()
        payload = {
            "model": request.model or self.cfg.chat_model,
            "messages": list(request.messages),
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        }
        start = time.monotonic()
        body = self._post("/chat/completions", payload)
        latency = (time.monotonic() - start) * 1000.0
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat reply: {body!r}") from exc
        return ChatReply(
            text=text,
            token_usage=body.get("usage", {}),
            model=body.get("model", payload["model"]),
            latency_ms=latency,
        )

    def embed(self, texts: Sequence[str]) -> EmbedReply:
        if not texts:
            raise InvalidArg("embed needs at least one text")
        if not self.cfg.embed_model:
            raise InvalidArg(f"provider {self.cfg.name!r} has no embed model configured")
        vectors: list[list[float]] = []
        cap = self.cfg.embed_batch_size
        for start in range(0, len(texts), cap):
            batch = list(texts[start : start + cap])
            body = self._post("/embeddings", {"model": self.cfg.embed_model, "input": batch})
            try:
                items = sorted(body["data"], key=lambda d: d.get("index", 0))
                vectors.extend([list(map(float, item["embedding"])) for item in items])
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed embeddings reply: {body!r}") from exc
        return EmbedReply(vectors=vectors, model=self.cfg.embed_model)

    def caption(self, source: str, prompt: str = "Describe this image.") -> str:
        if not self.cfg.vision_model:
            raise InvalidArg(f"provider {self.cfg.name!r} has no vision model configured")
        if source.startswith(("http://", "https://", "data:")):
            image_url = source
        else:
            image_url = _file_to_data_url(Path(source))
        payload = {
            "model": self.cfg.vision_model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": image_url}},
                    ],
                }
            ],
        }
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed caption reply: {body!r}") from exc


def chat(cfg: ProviderConfig, request: ChatRequest) -> ChatReply:
    """One-shot chat completion against `cfg` (fresh rate limiter)."""
    return HttpProvider(cfg).chat(request)


def embed(cfg: ProviderConfig, texts: Sequence[str]) -> EmbedReply:
    """One-shot embedding call against `cfg` (fresh rate limiter)."""
    return HttpProvider(cfg).embed(texts)


def _canonical_digest(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()


class CachedProvider:
    """Content-addressed disk cache around any provider.

    Keys cover the provider fingerprint, capability, full request payload
    and the sampling tag, so any field that can change the output changes
    the key. Corrupt entries are treated as misses and rewritten.
    """

    def __init__(self, inner, cache_dir: str | Path):
        self.inner = inner
        self.name = inner.name
        self.max_parallel = getattr(inner, "max_parallel", 1)
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def fingerprint(self) -> dict:
        return self.inner.fingerprint()

    def _lookup(self, key: str) -> dict | None:
        path = self.cache_dir / f"{key}.json"
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("corrupt cache entry %s (%s); recomputing", path, exc)
            return None

    def _store(self, key: str, obj: dict) -> None:
        path = self.cache_dir / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(obj, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)

    def chat(self, request: ChatRequest) -> ChatReply:
        key = _canonical_digest(
            {
                "kind": "chat",
                "provider": self.inner.fingerprint(),
                "messages": list(request.messages),
                "decoding": asdict(request.decoding),
                "tag": request.tag,
                "model": request.model,
            }
        )
        hit = self._lookup(key)
        if hit is not None:
            try:
                return ChatReply(**hit)
            except TypeError:
                logger.warning("corrupt cache entry for key %s; recomputing", key)
        reply = self.inner.chat(request)
        self._store(key, asdict(reply))
        return reply

    def embed(self, texts: Sequence[str]) -> EmbedReply:
        key = _canonical_digest(
            {"kind": "embed", "provider": self.inner.fingerprint(), "texts": list(texts)}
        )
        hit = self._lookup(key)
        if hit is not None:
            try:
                return EmbedReply(**hit)
            except TypeError:
                logger.warning("corrupt cache entry for key %s; recomputing", key)
        reply = self.inner.embed(texts)
        self._store(key, asdict(reply))
        return reply

    def caption(self, source: str, prompt: str = "Describe this image.") -> str:
        key = _canonical_digest(
            {
                "kind": "caption",
                "provider": self.inner.fingerprint(),
                "source": source,
                "prompt": prompt,
            }
        )
        hit = self._lookup(key)
        if hit is not None and isinstance(hit.get("text"), str):
            return hit["text"]
        text = self.inner.caption(source, prompt)
        self._store(key, {"text": text})
        return text


def cached(provider, cache_dir: str | Path) -> CachedProvider:
    """Wrap `provider` so repeated identical requests hit disk, not the
    network."""
    return CachedProvider(provider, cache_dir)


# --- deterministic offline mock -------------------------------------------

_REPETITIVE_POOL = (
    "The answer is the same as it always is. The answer is the same as it always is.",
    "Life is good and life is calm and life is good. Life is good and life is calm.",
    "We see the same thing again and again and again. We see the same thing again.",
)

_MOCK_SUBJECTS = (
    "orchards", "tidepools", "archives", "festivals", "glaciers", "workshops",
    "lanterns", "harbors", "meadows", "observatories", "markets", "canyons",
    "libraries", "reefs", "villages", "turbines", "gardens", "quarries",
    "bridges", "aquifers", "studios", "forges", "terraces", "mosaics",
    "satellites", "hedgerows", "kilns", "estuaries", "foundries", "orchestras",
)

_MOCK_VERBS = (
    "reshape", "illuminate", "bind", "scatter", "nourish", "echo", "anchor",
    "unravel", "temper", "gather", "transform", "mirror", "kindle", "bridge",
    "weather", "distill", "carry", "awaken", "balance", "chart",
)

_MOCK_MODIFIERS = (
    "luminous", "patient", "restless", "quiet", "vivid", "ancient", "fleeting",
    "sturdy", "tangled", "gilded", "somber", "brisk", "mellow", "jagged",
    "fragrant", "austere", "buoyant", "weathered", "spirited", "serene",
)

_MOCK_TAILS = (
    "beyond wintry ridgelines", "across shifting deltas", "beneath copper skies",
    "within crowded plazas", "along forgotten canals", "despite gathering storms",
    "amid murmuring crowds", "after sudden thaws", "before distant harvests",
    "between rival valleys", "under borrowed starlight", "through salted winds",
)

_MOCK_DISCIPLINES = (
    "an economist's", "a historian's", "an ecologist's", "a poet's",
    "an engineer's", "a sociologist's", "a physician's", "a navigator's",
    "a teacher's", "a gardener's", "a cartographer's", "a musician's",
    "an architect's", "a philosopher's", "a statistician's", "a sailor's",
    "a chemist's", "a folklorist's", "an athlete's", "a diplomat's",
    "a linguist's", "a geologist's", "an astronomer's", "a playwright's",
)

_MOCK_ASPECTS = (
    "long-term tradeoffs", "hidden incentives", "material constraints",
    "community rituals", "measurement pitfalls", "seasonal rhythms",
    "competing narratives", "resource flows", "failure modes", "edge cases",
    "historical precedents", "embodied practice", "power asymmetries",
    "feedback loops", "craft traditions", "migration patterns",
    "maintenance burdens", "signal versus noise", "scale effects",
    "unintended consequences", "boundary conditions", "local adaptations",
    "shared infrastructure", "generational change", "risk appetites",
    "translation losses", "emergent order", "quiet externalities",
    "counterfactual worlds", "slow variables", "threshold effects",
    "coalition dynamics", "memory and forgetting", "repair cultures",
    "improvised solutions", "invisible labor", "path dependence",
    "coordination costs", "abundance and scarcity", "ritual timing",
)

_CAPTION_SCENES = (
    "a crowded square at dusk", "a quiet shoreline at dawn", "a busy workshop floor",
    "a terraced hillside", "a rain-soaked street", "a sunlit atrium",
)

_CAPTION_DETAILS = (
    "figures gathered near the center", "banners moving in the wind",
    "light pooling on worn stone", "tools laid out in careful rows",
    "reflections scattered across glass", "long shadows reaching outward",
)

MOCK_EMBED_DIM = 256
MOCK_PERSONALITIES = ("repetitive", "diverse", "echo")


class MockProvider:
    """Deterministic offline stand-in for every provider capability.

    Replies are pure functions of (seed, personality, request payload),
    so runs are bit-reproducible, thread-safe, and independent of call
    order. The "repetitive" personality answers from a tiny fixed pool;
    "diverse" builds fresh seeded sentences; "echo" returns the last user
    message verbatim.
    """

    def __init__(self, personality: str = "diverse", seed: int = 0):
        if personality not in MOCK_PERSONALITIES:
            raise InvalidArg(f"unknown mock personality {personality!r}")
        self.personality = personality
        self.seed = seed
        self.name = f"mock-{personality}"
        self.max_parallel = 1
        self.chat_model = f"mock-{personality}"

    def fingerprint(self) -> dict:
        return {"name": self.name, "seed": self.seed}

    def _rng(self, *parts) -> random.Random:
        digest = hashlib.sha256(
            json.dumps([self.seed, self.personality, *parts], sort_keys=True).encode()
        ).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _diverse_sentence(self, rng: random.Random) -> str:
        words = [
            rng.choice(_MOCK_MODIFIERS),
            rng.choice(_MOCK_SUBJECTS),
            rng.choice(_MOCK_VERBS),
            rng.choice(_MOCK_MODIFIERS),
            rng.choice(_MOCK_SUBJECTS),
            rng.choice(_MOCK_TAILS),
        ]
        return (" ".join(words) + ".").capitalize()

    def _generate_answer(self, rng: random.Random) -> str:
        if self.personality == "repetitive":
            return _REPETITIVE_POOL[rng.randrange(len(_REPETITIVE_POOL))]
        return " ".join(self._diverse_sentence(rng) for _ in range(rng.randint(2, 3)))

    def _numbered_views(self, count: int, rng: random.Random) -> str:
        combos = rng.sample(
            range(len(_MOCK_DISCIPLINES) * len(_MOCK_ASPECTS)),
            min(count, len(_MOCK_DISCIPLINES) * len(_MOCK_ASPECTS)),
        )
        lines = []
        for i, combo in enumerate(combos, start=1):
            discipline = _MOCK_DISCIPLINES[combo % len(_MOCK_DISCIPLINES)]
            aspect = _MOCK_ASPECTS[combo // len(_MOCK_DISCIPLINES)]
            lines.append(f"{i}. From {discipline} vantage point, weigh {aspect}.")
        return "\n".join(lines)

    def chat(self, request: ChatRequest) -> ChatReply:
        request.validate()
        last_user = ""
        for message in request.messages:
            if message.get("role") == "user":
                content = message.get("content", "")
                last_user = content if isinstance(content, str) else json.dumps(content)
        rng = self._rng(
            list(request.messages), asdict(request.decoding), request.tag, request.model
        )

        if self.personality == "echo":
            text = last_user
        elif "Reply with a numbered list" in last_user:
            match = re.search(r"Generate (\d+) distinct perspectives", last_user)
            count = int(match.group(1)) if match else 5
            text = self._numbered_views(count, rng)
        elif "summarize the following text" in last_user:
            match = re.search(r"no more than (\d+) words", last_user)
            max_words = int(match.group(1)) if match else 250
            body = last_user.split("words:\n", 1)[-1]
            text = " ".join(body.split()[:max_words])
        elif 'one word: "relevant" or "irrelevant"' in last_user:
            text = "relevant" if rng.randrange(10) < 9 else "irrelevant"
        elif 'one word: "novel" or "redundant"' in last_user:
            text = "novel" if rng.randrange(2) == 0 else "redundant"
        elif "score between 1.0 and 10.0" in last_user:
            text = f"{6.0 + rng.randrange(40) / 10.0:.1f}"
        elif "score between 1.0 and 9.0" in last_user:
            text = f"{4.0 + rng.randrange(50) / 10.0:.1f}"
        elif "Rewrite the following image description" in last_user:
            text = last_user.split("Description: ", 1)[-1].strip()
        else:
            text = self._generate_answer(rng)

        return ChatReply(
            text=text,
            token_usage={
                "prompt_tokens": len(last_user.split()),
                "completion_tokens": len(text.split()),
            },
            model=request.model or self.chat_model,
            latency_ms=0.0,
        )

    def embed(self, texts: Sequence[str]) -> EmbedReply:
        if not texts:
            raise InvalidArg("embed needs at least one text")
        return EmbedReply(
            vectors=[hash_embedding(t, MOCK_EMBED_DIM) for t in texts],
            model=f"mock-embed-{MOCK_EMBED_DIM}",
        )

    def caption(self, source: str, prompt: str = "Describe this image.") -> str:
        stem = Path(str(source)).stem or str(source)
        rng = self._rng("caption", str(source), prompt)
        scene = rng.choice(_CAPTION_SCENES)
        first = rng.choice(_CAPTION_DETAILS)
        second = rng.choice(_CAPTION_DETAILS)
        return (
            f"The image associated with {stem} shows {scene}, "
            f"with {first} and {second}."
        )


def _token_bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % dim


def hash_embedding(text: str, dim: int = MOCK_EMBED_DIM) -> list[float]:
    """Deterministic bag-of-hashed-tokens unit vector; identical texts map
    to identical vectors, disjoint texts to near-orthogonal ones."""
    counts: Counter[int] = Counter()
    for token in text.lower().split():
        counts[_token_bucket(token, dim)] += 1
    vec = [0.0] * dim
    for bucket, c in counts.items():
        vec[bucket] = float(c)
    norm = math.sqrt(math.fsum(x * x for x in vec))
    if norm > 0.0:
        vec = [x / norm for x in vec]
    return vec


def bounded_map_iter(fn: Callable, items: Sequence, max_workers: int = 1):
    """Yield fn(item) for every item in order, fanning out across at most
    `max_workers` threads; results already yielded survive a failure."""
    if max_workers <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        yield from executor.map(fn, items)


def bounded_map(fn: Callable, items: Sequence, max_workers: int = 1) -> list:
    """Apply `fn` to every item, preserving order; fans out across at most
    `max_workers` threads when more than one is allowed."""
    return list(bounded_map_iter(fn, items, max_workers=max_workers))
