"""Four-class sentence sentiment behind a pluggable provider.

Two providers ship here: a deterministic lexicon baseline (word lists
plus a short negation window) and a thin client for any remote service
speaking the minimal wire protocol documented on RemoteSentimentProvider.
Every provider returns SentimentResult values whose four class scores
sum to one and whose label is the argmax.
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .errors import TransportError
from .evalmetrics import pearson

logger = logging.getLogger(__name__)

CLASS_ORDER = ("positive", "negative", "neutral", "mixed")

# Tokens that flip the polarity of the next lexicon hit.
_NEGATORS = frozenset({"not", "never", "no"})
_NEGATION_WINDOW = 3
_NEUTRAL_FLOOR = 0.05

_WORD_RE = re.compile(r"[a-z0-9']+")


@dataclass(frozen=True)
class SentimentResult:
    """Class label plus a full score distribution over the four classes."""

    label: str
    scores: Mapping[str, float]


def make_result(raw_scores: Mapping[str, float]) -> SentimentResult:
    """Normalize raw class scores and pick the label by argmax.

    Ties go to the earlier class in CLASS_ORDER, which is what makes the
    provider deterministic on evidence-free text.
    """
    total = sum(raw_scores.get(c, 0.0) for c in CLASS_ORDER)
    if not math.isfinite(total) or total <= 0:
        raise ValueError(f"scores must be finite with a positive sum, got {dict(raw_scores)}")
    scores = {c: raw_scores.get(c, 0.0) / total for c in CLASS_ORDER}
    label = max(CLASS_ORDER, key=lambda c: scores[c])
    return SentimentResult(label=label, scores=scores)


def _load_word_list(path) -> frozenset[str]:
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word and not word.startswith("#"):
            words.add(word)
    return frozenset(words)


class LexiconSentimentProvider:
    """Word-list sentiment with a 3-token negation window.

    With p positive and n negative hits, evidence is e_pos = p/(p+n+1)
    and e_neg = n/(p+n+1); mixed gets 2*min(e_pos, e_neg) and neutral the
    leftover mass (floored), after which everything is renormalized.
    Pure and deterministic, so results are reproducible and safely
    shareable across workers.
    """

    kind = "lexicon"

    def __init__(
        self, positive_path: str | Path | None = None, negative_path: str | Path | None = None
    ):
        data = resources.files("rhskit.lexicons")
        self._positive = _load_word_list(
            Path(positive_path) if positive_path else data / "positive.txt"
        )
        self._negative = _load_word_list(
            Path(negative_path) if negative_path else data / "negative.txt"
        )

    def _count_hits(self, tokens: Sequence[str]) -> tuple[int, int]:
        positive = negative = 0
        negate_until = -1
        for i, token in enumerate(tokens):
            if token in _NEGATORS or token.endswith("n't"):
                negate_until = i + _NEGATION_WINDOW
                continue
            hit = None
            if token in self._positive:
                hit = "positive"
            elif token in self._negative:
                hit = "negative"
            if hit is None:
                continue
            if i <= negate_until:
                hit = "negative" if hit == "positive" else "positive"
                negate_until = -1
            if hit == "positive":
                positive += 1
            else:
                negative += 1
        return positive, negative

    def classify(self, text: str) -> SentimentResult:
        tokens = [t.strip("'") for t in _WORD_RE.findall(text.lower())]
        p, n = self._count_hits([t for t in tokens if t])
        e_pos = p / (p + n + 1)
        e_neg = n / (p + n + 1)
        raw = {
            "positive": e_pos,
            "negative": e_neg,
            "mixed": 2 * min(e_pos, e_neg),
            "neutral": max(_NEUTRAL_FLOOR, 1.0 - (e_pos + e_neg)),
        }
        return make_result(raw)

    def classify_batch(self, texts: Sequence[str]) -> list[SentimentResult]:
        return [self.classify(t) for t in texts]


class RemoteSentimentProvider:
    """Client for an external sentiment service.

    Wire protocol: POST {"texts": [...]} to the configured URL; the
    service answers {"results": [{"label": ..., "scores": {"positive":
    x, "negative": x, "neutral": x, "mixed": x}}, ...]} aligned by
    index. Scores are renormalized locally so the SentimentResult
    invariants hold regardless of the service's own conventions.

    Connection failures and 5xx/429 responses are retried up to
    ``max_attempts``; the raised TransportError carries the attempt count
    and last status so callers can decide about another round.
    """

    kind = "remote"

    def __init__(
        self,
        url: str,
        *,
        timeout: float = 10.0,
        batch_size: int = 32,
        max_attempts: int = 3,
        retry_wait: float = 0.5,
        session: requests.Session | None = None,
    ):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
        self.url = url
        self.timeout = timeout
        self.batch_size = batch_size
        self.max_attempts = max_attempts
        self.retry_wait = retry_wait
        self._session = session or requests.Session()

    def classify(self, text: str) -> SentimentResult:
        return self.classify_batch([text])[0]

    def classify_batch(self, texts: Sequence[str]) -> list[SentimentResult]:
        results: list[SentimentResult] = []
        for start in range(0, len(texts), self.batch_size):
            results.extend(self._post(list(texts[start : start + self.batch_size])))
        return results

    def _post(self, batch: list[str]) -> list[SentimentResult]:
        last_status: int | None = None
        last_error = "request failed"
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1 and self.retry_wait > 0:
                time.sleep(self.retry_wait)
            try:
                response = self._session.post(
                    self.url, json={"texts": batch}, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_status = None
                last_error = f"connection error: {exc}"
                continue
            last_status = response.status_code
            if response.status_code == 200:
                return self._parse(response, batch, attempt)
            last_error = f"HTTP {response.status_code}"
            if response.status_code not in (429,) and response.status_code < 500:
                # Client errors will not improve with retries.
                raise TransportError(
                    last_error, url=self.url, status=last_status, attempts=attempt
                )
        raise TransportError(
            last_error, url=self.url, status=last_status, attempts=self.max_attempts
        )

    def _parse(self, response, batch: list[str], attempts: int) -> list[SentimentResult]:
        def malformed(detail: str) -> TransportError:
            return TransportError(
                f"malformed response: {detail}", url=self.url, status=200, attempts=attempts
            )

        try:
            payload = response.json()
        except ValueError as exc:
            raise malformed(f"body is not JSON ({exc})") from exc
        entries = payload.get("results") if isinstance(payload, dict) else None
        if not isinstance(entries, list) or len(entries) != len(batch):
            raise malformed(f"expected {len(batch)} results, got "
                            f"{len(entries) if isinstance(entries, list) else 'none'}")
        results = []
        for i, entry in enumerate(entries):
            scores = entry.get("scores") if isinstance(entry, dict) else None
            if not isinstance(scores, dict) or any(
                not isinstance(scores.get(c), (int, float)) for c in CLASS_ORDER
            ):
                raise malformed(f"result {i} lacks numeric scores for all four classes")
            if any(scores[c] < 0 or not math.isfinite(scores[c]) for c in CLASS_ORDER):
                raise malformed(f"result {i} has negative or non-finite scores")
            try:
                result = make_result(scores)
            except ValueError as exc:
                raise malformed(f"result {i}: {exc}") from exc
            stated = entry.get("label")
            if stated is not None and stated != result.label:
                logger.warning(
                    "remote label %r disagrees with its own scores (argmax %r); using argmax",
                    stated,
                    result.label,
                )
            results.append(result)
        return results


def classify_sentiment(provider, text: str) -> SentimentResult:
    """Classify one text with whichever provider is configured."""
    return provider.classify(text)


@dataclass(frozen=True)
class SentimentPartition:
    """Helpful candidates split into polar pools; neutral and mixed are
    dropped but counted."""

    positive: tuple
    negative: tuple
    n_neutral: int
    n_mixed: int

    @property
    def n_discarded(self) -> int:
        return self.n_neutral + self.n_mixed


def partition_by_sentiment(items: Sequence, provider, text_of=None) -> SentimentPartition:
    """Split items into positive and negative pools by sentiment label.

    ``items`` can be anything; ``text_of`` extracts the classifiable text
    (defaults to .text, falling back to str). Pools hold (item, result)
    pairs so downstream ranking keeps the score distribution.
    """
    if text_of is None:
        text_of = lambda item: getattr(item, "text", None) or str(item)
    texts = [text_of(item) for item in items]
    results = provider.classify_batch(texts)
    positive = []
    negative = []
    n_neutral = n_mixed = 0
    for item, result in zip(items, results):
        if result.label == "positive":
            positive.append((item, result))
        elif result.label == "negative":
            negative.append((item, result))
        elif result.label == "neutral":
            n_neutral += 1
        else:
            n_mixed += 1
    return SentimentPartition(tuple(positive), tuple(negative), n_neutral, n_mixed)


def sentiment_neutral_correlation(annotated: Sequence, provider) -> float:
    """Pearson between gold helpfulness and the neutral-class score.

    Strong providers should land clearly negative here: unopinionated
    sentences rarely help a purchase decision.
    """
    texts = [a.sentence.text for a in annotated]
    results = provider.classify_batch(texts)
    gold = [a.helpfulness for a in annotated]
    neutral = [r.scores["neutral"] for r in results]
    return pearson(gold, neutral)
