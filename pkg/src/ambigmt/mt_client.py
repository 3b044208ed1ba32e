"""Pluggable machine-translation client with caching and an offline mock.

Engines expose ``translate_many(texts, src_lang, tgt_lang) -> list[str]``
plus a stable ``engine_id``; the HTTP adapter performs one POST per chunk
with body ``{"texts": [...], "source": ..., "target": ...}`` and expects
``{"translations": [...]}`` back. The cache is an append-only JSONL file
(one ``{"key", "translation", "ts"}`` record per line) so interrupted
back-translation runs resume without re-querying the engine.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .corpus import GENDER_PRONOUNS, Caption, ParallelExample, tokenize

logger = logging.getLogger(__name__)

NEUTRAL_PRONOUN = "o"


class TranslationError(Exception):
    """Engine failed to translate a chunk."""


class RateLimitedError(TranslationError):
    """Engine signalled quota exhaustion; holds the suggested pause."""

    def __init__(self, message: str, retry_after: float = 1.0):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass(frozen=True)
class TranslationRequest:
    text: str
    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("request text must be non-empty")
        if self.src_lang == self.tgt_lang:
            raise ValueError(f"src_lang and tgt_lang are both {self.src_lang!r}")


@dataclass
class TranslationResult:
    request: TranslationRequest
    translation: str | None = None
    error: str | None = None
    from_cache: bool = False
    attempts: int = 0

    @property
    def ok(self) -> bool:
        return self.translation is not None


class TranslationEngine(Protocol):
    engine_id: str

    def translate_many(self, texts: Sequence[str], src_lang: str,
                       tgt_lang: str) -> list[str]: ...


class MockNeutralizingEngine:
    """Offline engine that maps every gender pronoun to a neutral token.

    Stands in for translating into a gender-neutral language: both "he" and
    "she" collapse onto the single pronoun "o", so the output genuinely loses
    the gender information while staying deterministic and free.
    """

    engine_id = "mock-neutralizer"

    def __init__(self):
        self.n_calls = 0
        self.n_texts = 0

    def translate_many(self, texts: Sequence[str], src_lang: str,
                       tgt_lang: str) -> list[str]:
        self.n_calls += 1
        self.n_texts += len(texts)
        out = []
        for text in texts:
            tokens = [NEUTRAL_PRONOUN if t in GENDER_PRONOUNS else t
                      for t in tokenize(text)]
            out.append(" ".join(tokens))
        return out


class HttpTranslationEngine:
    """Adapter for a commercial HTTP translation service (one POST per chunk)."""

    def __init__(self, url: str, engine_id: str = "http", timeout: float = 30.0,
                 session=None):
        import requests

        self.url = url
        self.engine_id = engine_id
        self.timeout = timeout
        self._session = session or requests.Session()

    def translate_many(self, texts: Sequence[str], src_lang: str,
                       tgt_lang: str) -> list[str]:
        payload = {"texts": list(texts), "source": src_lang, "target": tgt_lang}
        try:
            resp = self._session.post(self.url, json=payload, timeout=self.timeout)
        except Exception as exc:  # connection errors, timeouts
            raise TranslationError(f"engine unreachable: {exc}") from exc
        if resp.status_code == 429:
            retry_after = float(resp.headers.get("Retry-After", 1.0))
            raise RateLimitedError("quota exceeded", retry_after=retry_after)
        if resp.status_code != 200:
            raise TranslationError(f"engine returned HTTP {resp.status_code}")
        translations = resp.json().get("translations")
        if not isinstance(translations, list) or len(translations) != len(texts):
            raise TranslationError("malformed engine response")
        return [str(t) for t in translations]


class TranslationCache:
    """Persistent translation cache keyed by (engine, langs, text) hash.

    Records are appended as they arrive and the whole file is replayed on
    open, so the cache survives process restarts and partial runs.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["translation"]
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key_for(engine_id: str, request: TranslationRequest) -> str:
        raw = "\x1f".join(
            [engine_id, request.src_lang, request.tgt_lang, request.text])
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def get(self, key: str) -> str | None:
        with self._lock:
            value = self._entries.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put(self, key: str, translation: str) -> None:
        rec = json.dumps({"key": key, "translation": translation,
                          "ts": time.time()}, ensure_ascii=False)
        with self._lock:
            self._entries[key] = translation
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(rec + "\n")

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class ClientConfig:
    chunk_size: int = 32
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 8.0


def _translate_chunk(engine: TranslationEngine,
                     chunk: list[tuple[int, TranslationRequest]],
                     config: ClientConfig,
                     sleep: Callable[[float], None]) -> list[tuple[int, TranslationResult]]:
    requests = [r for _, r in chunk]
    texts = [r.text for r in requests]
    src, tgt = requests[0].src_lang, requests[0].tgt_lang
    attempts = 0
    while True:
        attempts += 1
        try:
            translations = engine.translate_many(texts, src, tgt)
            return [(i, TranslationResult(r, translation=t, attempts=attempts))
                    for (i, r), t in zip(chunk, translations)]
        except TranslationError as exc:
            if attempts > config.max_retries:
                logger.warning("chunk of %d failed after %d attempts: %s",
                               len(chunk), attempts, exc)
                return [(i, TranslationResult(r, error=str(exc), attempts=attempts))
                        for i, r in chunk]
            if isinstance(exc, RateLimitedError):
                pause = min(exc.retry_after, config.backoff_cap)
            else:
                pause = min(config.backoff_base * 2 ** (attempts - 1),
                            config.backoff_cap)
            sleep(pause)


def translate_batch(engine: TranslationEngine,
                    requests: Sequence[TranslationRequest],
                    cache: TranslationCache | None = None,
                    config: ClientConfig | None = None,
                    sleep: Callable[[float], None] = time.sleep,
                    ) -> list[TranslationResult]:
    """Translate a batch, consulting the cache first and retrying failures.

    Output order matches input order. Items that still fail after
    ``config.max_retries`` retries come back as per-item error records
    rather than aborting the batch; every fresh translation is written to
    the cache before returning.
    """
    config = config or ClientConfig()
    results: list[TranslationResult | None] = [None] * len(requests)

    pending: list[tuple[int, TranslationRequest]] = []
    for i, request in enumerate(requests):
        if cache is not None:
            key = TranslationCache.key_for(engine.engine_id, request)
            hit = cache.get(key)
            if hit is not None:
                results[i] = TranslationResult(request, translation=hit,
                                               from_cache=True)
                continue
        pending.append((i, request))

    # Requests in one chunk share a language pair; group to keep the wire
    # format simple, then preserve chunk order when collecting.
    groups: dict[tuple[str, str], list[tuple[int, TranslationRequest]]] = {}
    for item in pending:
        groups.setdefault((item[1].src_lang, item[1].tgt_lang), []).append(item)
    chunks = []
    for group in groups.values():
        for start in range(0, len(group), config.chunk_size):
            chunks.append(group[start:start + config.chunk_size])

    if chunks:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            for chunk_results in pool.map(
                    lambda c: _translate_chunk(engine, c, config, sleep), chunks):
                for i, result in chunk_results:
                    if result.ok and cache is not None:
                        key = TranslationCache.key_for(engine.engine_id,
                                                       result.request)
                        cache.put(key, result.translation)
                    results[i] = result

    assert all(r is not None for r in results)
    return results  # type: ignore[return-value]


def build_pseudo_parallel(corpus: Sequence[Caption],
                          engine: TranslationEngine,
                          cache: TranslationCache | None = None,
                          config: ClientConfig | None = None,
                          src_lang: str = "en",
                          tgt_lang: str = "tr",
                          sleep: Callable[[float], None] = time.sleep,
                          ) -> list[ParallelExample]:
    """Back-translate captions into pseudo-parallel training examples.

    The engine output becomes the (ambiguous) source side; the original
    caption, tokenized, is kept verbatim as the target side. Captions whose
    translation failed after retries are dropped with a logged count.
    """
    requests = [TranslationRequest(c.text, src_lang, tgt_lang) for c in corpus]
    outcomes = translate_batch(engine, requests, cache, config, sleep)
    examples = []
    dropped = 0
    for caption, outcome in zip(corpus, outcomes):
        if not outcome.ok:
            dropped += 1
            logger.warning("dropping caption %s: %s", caption.id, outcome.error)
            continue
        examples.append(ParallelExample(
            id=caption.id,
            source=tuple(tokenize(outcome.translation)),
            target=tuple(tokenize(caption.text)),
            image_id=caption.image_id))
    if dropped:
        logger.warning("dropped %d of %d captions with failed translations",
                       dropped, len(corpus))
    return examples
