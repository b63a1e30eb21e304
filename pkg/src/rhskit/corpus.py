"""Review ingestion and sentence preprocessing.

Turns raw review dumps (JSON lines) into clean, length-gated sentences:
markup stripping, rule-based sentence splitting, and loaders for both
review files and annotated helpfulness datasets. Loading never aborts on
a bad record; problems are collected into an error report instead.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InputError

logger = logging.getLogger(__name__)

# Default character-length gate for retained sentences (inclusive).
DEFAULT_MIN_CHARS = 30
DEFAULT_MAX_CHARS = 200


@dataclass(frozen=True)
class LengthBounds:
    """Inclusive character-length gate applied after sentence splitting."""

    min_chars: int = DEFAULT_MIN_CHARS
    max_chars: int = DEFAULT_MAX_CHARS

    def __post_init__(self) -> None:
        if not (0 < self.min_chars <= self.max_chars):
            raise ValueError(
                f"invalid length bounds: need 0 < min_chars <= max_chars, "
                f"got [{self.min_chars}, {self.max_chars}]"
            )

    def contains(self, n_chars: int) -> bool:
        return self.min_chars <= n_chars <= self.max_chars


@dataclass(frozen=True)
class Review:
    """One product review as ingested, before any sentence work."""

    review_id: str
    product_id: str
    text: str
    helpful_votes: int | None = None
    star_rating: int | None = None


@dataclass(frozen=True)
class Sentence:
    """A single review sentence with provenance.

    ``sentence_id`` is deterministic (review id plus the sentence's
    pre-filter ordinal), so reruns over the same file agree. ``char_len``
    counts Unicode scalar values, not bytes.
    """

    sentence_id: str
    review_id: str | None
    product_id: str | None
    text: str
    char_len: int


@dataclass(frozen=True)
class AnnotatedSentence:
    """A sentence with crowd ratings and/or a mean helpfulness score.

    When per-annotator ratings are present, ``helpfulness`` is their
    arithmetic mean; score-only datasets supply it directly.
    """

    sentence: Sentence
    ratings: tuple[tuple[str, int], ...]
    helpfulness: float


@dataclass(frozen=True)
class RecordError:
    """One skipped input record and the reason it was skipped."""

    line_no: int
    reason: str


class _TextExtractor(HTMLParser):
    """Collects text content, dropping tags and script/style bodies."""

    _SKIP_CONTENT = frozenset({"script", "style"})

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP_CONTENT:
            self._skip_depth += 1
        self._parts.append(" ")

    def handle_endtag(self, tag):
        if tag in self._SKIP_CONTENT and self._skip_depth:
            self._skip_depth -= 1
        self._parts.append(" ")

    def handle_data(self, data):
        if not self._skip_depth:
            self._parts.append(data)

    def text(self) -> str:
        return "".join(self._parts)


def strip_html(text: str) -> str:
    """Remove markup, decode entity references, collapse whitespace.

    Best-effort on malformed markup; never raises. Idempotent for any
    text whose decoded form does not itself re-encode markup (review
    prose in practice; "&lt;b&gt;" style double encoding is the known
    exception).
    """
    extractor = _TextExtractor()
    extractor.feed(text)
    extractor.close()
    return " ".join(extractor.text().split())


# Terminators end a sentence; closers may trail them ("Stop!" he said.);
# an opener, capital, or digit must start the next one.
_TERMINATORS = frozenset(".!?")
_CLOSERS = frozenset("\"')]’”")
_OPENERS = frozenset("\"'(‘“")

# Fixed abbreviation list; a trailing period on these never splits.
_ABBREVIATIONS = frozenset(
    {"mr.", "mrs.", "dr.", "vs.", "etc.", "e.g.", "i.e.", "u.s.", "inc.", "st."}
)


def _ends_with_abbreviation(text: str, dot_index: int) -> bool:
    start = dot_index
    while start > 0 and (text[start - 1].isalpha() or text[start - 1] == "."):
        start -= 1
    return text[start : dot_index + 1].lower() in _ABBREVIATIONS


def split_sentences(text: str) -> list[str]:
    """Split markup-free text into sentences.

    Rule-based: a sentence ends at '.', '!' or '?' (plus any closing
    quotes/brackets) when followed by whitespace and an uppercase letter,
    digit, or opening quote. Periods belonging to known abbreviations do
    not split. Joining the results with single spaces reconstructs the
    whitespace-collapsed input.
    """
    text = text.strip()
    if not text:
        return []
    out: list[str] = []
    n = len(text)
    start = 0
    i = 0
    while i < n:
        if text[i] in _TERMINATORS:
            j = i + 1
            while j < n and text[j] in _CLOSERS:
                j += 1
            k = j
            while k < n and text[k].isspace():
                k += 1
            boundary = (
                j < n
                and text[j].isspace()
                and k < n
                and (text[k].isupper() or text[k].isdigit() or text[k] in _OPENERS)
            )
            if boundary and text[i] == "." and _ends_with_abbreviation(text, i):
                boundary = False
            if boundary:
                segment = text[start:j].strip()
                if segment:
                    out.append(segment)
                start = k
                i = k
                continue
        i += 1
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def segment_review(review: Review) -> list[Sentence]:
    """Clean and split a review into sentences, no length gate.

    Ordinals (and therefore sentence ids) are assigned here, before any
    filtering, so they are stable whatever bounds are applied later.
    """
    clean = strip_html(review.text)
    sentences = []
    for ordinal, sent_text in enumerate(split_sentences(clean)):
        sentences.append(
            Sentence(
                sentence_id=f"{review.review_id}:{ordinal}",
                review_id=review.review_id,
                product_id=review.product_id,
                text=sent_text,
                char_len=len(sent_text),
            )
        )
    return sentences


def preprocess_review(review: Review, bounds: LengthBounds | None = None) -> list[Sentence]:
    """strip_html, split, then drop sentences outside the length gate."""
    if bounds is None:
        bounds = LengthBounds()
    return [s for s in segment_review(review) if bounds.contains(s.char_len)]


# Canonical field names; --map lets callers rename them per input file.
REVIEW_FIELDS = ("review_id", "product_id", "text", "helpful_votes", "star_rating")
ANNOTATED_FIELDS = (
    "sentence",
    "helpfulness",
    "ratings",
    "product_id",
    "sentence_id",
    "review_id",
)


def _resolve(record: Mapping, canonical: str, field_map: Mapping[str, str] | None):
    actual = field_map.get(canonical, canonical) if field_map else canonical
    return record.get(actual)


def _coerce_id(value) -> str | None:
    if isinstance(value, str):
        return value if value.strip() else None
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return None


def _coerce_int(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


def _iter_records(path: str | Path):
    """Yield (line_no, parsed_or_error) for each nonblank JSONL line."""
    with open(path, encoding="utf-8") as handle:
        line_no = 0
        while True:
            try:
                line = handle.readline()
            except UnicodeDecodeError as exc:
                raise InputError(f"not valid UTF-8: {exc}", path=str(path)) from exc
            if not line:
                return
            line_no += 1
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                yield line_no, RecordError(line_no, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(record, dict):
                yield line_no, RecordError(line_no, "record is not a JSON object")
                continue
            yield line_no, record


def load_reviews(
    path: str | Path, field_map: Mapping[str, str] | None = None
) -> tuple[list[Review], list[RecordError]]:
    """Load a JSONL review file.

    Returns the parsed reviews and a list of per-record errors; bad
    records are skipped, never fatal. An unreadable or non-UTF-8 file is
    fatal.
    """
    reviews: list[Review] = []
    errors: list[RecordError] = []
    for line_no, item in _iter_records(path):
        if isinstance(item, RecordError):
            errors.append(item)
            continue
        record = item
        review_id = _coerce_id(_resolve(record, "review_id", field_map))
        if review_id is None:
            errors.append(RecordError(line_no, "missing or empty review_id"))
            continue
        text = _resolve(record, "text", field_map)
        if not isinstance(text, str) or not text.strip():
            errors.append(RecordError(line_no, "missing or empty text"))
            continue
        product_id = _coerce_id(_resolve(record, "product_id", field_map)) or ""
        helpful_votes = _resolve(record, "helpful_votes", field_map)
        if helpful_votes is not None:
            helpful_votes = _coerce_int(helpful_votes)
            if helpful_votes is None or helpful_votes < 0:
                errors.append(RecordError(line_no, "helpful_votes is not a nonnegative integer"))
                continue
        star_rating = _resolve(record, "star_rating", field_map)
        if star_rating is not None:
            star_rating = _coerce_int(star_rating)
            if star_rating is None or not (1 <= star_rating <= 5):
                errors.append(RecordError(line_no, "star_rating outside 1..5"))
                continue
        reviews.append(Review(review_id, product_id, text, helpful_votes, star_rating))
    return reviews, errors


def _parse_ratings(raw, line_no: int) -> tuple[tuple[str, int], ...] | RecordError:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        return RecordError(line_no, "ratings is not an array")
    ratings: list[tuple[str, int]] = []
    for position, entry in enumerate(raw):
        if isinstance(entry, dict):
            annotator = _coerce_id(entry.get("annotator_id")) or f"a{position}"
            value = _coerce_int(entry.get("rating"))
        else:
            # Bare integer arrays are accepted; annotators get positional ids.
            annotator = f"a{position}"
            value = _coerce_int(entry)
        if value is None or value not in (0, 1, 2):
            return RecordError(line_no, f"rating outside {{0,1,2}} at position {position}")
        ratings.append((annotator, value))
    return tuple(ratings)


def load_annotated_dataset(
    path: str | Path, field_map: Mapping[str, str] | None = None
) -> tuple[list[AnnotatedSentence], list[RecordError]]:
    """Load a JSONL annotated-sentence dataset.

    Each record needs a sentence plus either per-annotator ratings or a
    precomputed helpfulness score. When ratings are present they are
    authoritative: helpfulness is their mean, and a conflicting stored
    score is only warned about (files round-trip through reporting tools
    that round).
    """
    annotated: list[AnnotatedSentence] = []
    errors: list[RecordError] = []
    for line_no, item in _iter_records(path):
        if isinstance(item, RecordError):
            errors.append(item)
            continue
        record = item
        text = _resolve(record, "sentence", field_map)
        if not isinstance(text, str) or not text.strip():
            errors.append(RecordError(line_no, "missing or empty sentence"))
            continue
        ratings = _parse_ratings(_resolve(record, "ratings", field_map), line_no)
        if isinstance(ratings, RecordError):
            errors.append(ratings)
            continue
        stored = _resolve(record, "helpfulness", field_map)
        if stored is not None and not isinstance(stored, (int, float)):
            errors.append(RecordError(line_no, "helpfulness is not a number"))
            continue
        if ratings:
            helpfulness = sum(r for _, r in ratings) / len(ratings)
            if stored is not None and abs(float(stored) - helpfulness) > 0.005:
                logger.warning(
                    "line %d: stored helpfulness %.4f != mean of ratings %.4f; using the mean",
                    line_no,
                    float(stored),
                    helpfulness,
                )
        elif stored is None:
            errors.append(RecordError(line_no, "record has neither ratings nor helpfulness"))
            continue
        else:
            helpfulness = float(stored)
        if not 0.0 <= helpfulness <= 2.0:
            errors.append(RecordError(line_no, f"helpfulness {helpfulness} outside [0,2]"))
            continue
        sentence_id = _coerce_id(_resolve(record, "sentence_id", field_map)) or f"line-{line_no}"
        sentence = Sentence(
            sentence_id=sentence_id,
            review_id=_coerce_id(_resolve(record, "review_id", field_map)),
            product_id=_coerce_id(_resolve(record, "product_id", field_map)),
            text=text,
            char_len=len(text),
        )
        annotated.append(AnnotatedSentence(sentence, ratings, helpfulness))
    return annotated, errors


def write_error_report(errors: Iterable[RecordError], path: str | Path) -> None:
    """Write skipped-record errors as JSON lines {line_no, reason}."""
    with open(path, "w", encoding="utf-8") as handle:
        for err in errors:
            handle.write(json.dumps({"line_no": err.line_no, "reason": err.reason}) + "\n")
