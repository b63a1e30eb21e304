"""Sentence vector spaces and cosine similarity.

Three representation sources live here: TF-IDF sparse vectors for the
helpfulness regressor, idf-weighted bag-of-words vectors for similarity
work, and precomputed external embeddings read from disk. All of them
are carried around as SentenceEmbedding values tagged with a space id,
and only embeddings from the same space may be compared.

The TF-IDF weighting is the smoothed variant ln((1+N)/(1+df)) + 1 over
raw term counts, with L2 row normalization.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Sentence
from .errors import InputError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class TokenizerConfig:
    """Tokenizer knobs: alphanumeric runs, optionally lowercased."""

    lowercase: bool = True
    min_token_chars: int = 2

    def __post_init__(self) -> None:
        if self.min_token_chars < 1:
            raise ValueError(f"min_token_chars must be >= 1, got {self.min_token_chars}")


def tokenize(text: str, config: TokenizerConfig | None = None) -> list[str]:
    """Split text into alphanumeric-run tokens.

    Lowercases when configured and drops tokens shorter than
    ``min_token_chars``.
    """
    if config is None:
        config = TokenizerConfig()
    if config.lowercase:
        text = text.lower()
    return [t for t in _TOKEN_RE.findall(text) if len(t) >= config.min_token_chars]


@dataclass(frozen=True)
class Vocabulary:
    """Term list with document frequencies for one fitted corpus."""

    terms: tuple[str, ...]
    term_index: Mapping[str, int]
    doc_freq: np.ndarray
    n_docs: int


@dataclass
class SentenceEmbedding:
    """One sentence vector tagged with its embedding space.

    ``values`` is either a dense 1-d float array or a 1-by-d CSR row;
    ``norm`` caches the Euclidean norm.
    """

    sentence_id: str
    space_id: str
    values: np.ndarray | sp.csr_matrix
    norm: float = field(default=0.0)

    @property
    def dim(self) -> int:
        if sp.issparse(self.values):
            return self.values.shape[1]
        return self.values.shape[0]


def _row_norm(values) -> float:
    if sp.issparse(values):
        return float(math.sqrt(values.multiply(values).sum()))
    return float(np.linalg.norm(values))


def make_embedding(sentence_id: str, space_id: str, values) -> SentenceEmbedding:
    """Build an embedding, computing the norm cache from the values."""
    return SentenceEmbedding(sentence_id, space_id, values, _row_norm(values))


def _text_of(item) -> str:
    return item.text if isinstance(item, Sentence) else str(item)


def _id_of(item, position: int) -> str:
    return item.sentence_id if isinstance(item, Sentence) else f"t{position}"


class TfidfModel(BaseEstimator, TransformerMixin):
    """Smoothed TF-IDF vectorizer over alphanumeric tokens.

    fit() accepts raw strings or Sentence objects; transform() returns an
    L2-normalized CSR matrix. The fitted state (``vocabulary_``,
    ``idf_``) is plain data and round-trips through the helpfulness model
    file.

    Parameters
    ----------
    lowercase, min_token_chars : tokenizer configuration.
    min_df : drop terms seen in fewer documents than this.
    max_features : keep only the most document-frequent terms (ties by
        term); None keeps everything.
    space_id : tag written onto produced embeddings ("tfidf" for
        regression features, "idf-bow" for similarity vectors).
    """

    def __init__(
        self,
        lowercase: bool = True,
        min_token_chars: int = 2,
        min_df: int = 1,
        max_features: int | None = None,
        space_id: str = "tfidf",
    ):
        self.lowercase = lowercase
        self.min_token_chars = min_token_chars
        self.min_df = min_df
        self.max_features = max_features
        self.space_id = space_id

    def _config(self) -> TokenizerConfig:
        return TokenizerConfig(lowercase=self.lowercase, min_token_chars=self.min_token_chars)

    def fit(self, X: Sequence, y=None) -> "TfidfModel":
        docs = list(X)
        if not docs:
            raise ValueError("cannot fit a TF-IDF model on an empty corpus")
        config = self._config()
        df: dict[str, int] = {}
        for doc in docs:
            for term in set(tokenize(_text_of(doc), config)):
                df[term] = df.get(term, 0) + 1
        retained = {t: c for t, c in df.items() if c >= self.min_df}
        if self.max_features is not None and len(retained) > self.max_features:
            by_freq = sorted(retained.items(), key=lambda tc: (-tc[1], tc[0]))
            retained = dict(by_freq[: self.max_features])
        if not retained:
            raise ValueError("empty effective corpus: no term survived tokenization")
        terms = tuple(sorted(retained))
        n_docs = len(docs)
        doc_freq = np.array([retained[t] for t in terms], dtype=np.int64)
        self.vocabulary_ = Vocabulary(
            terms=terms,
            term_index={t: i for i, t in enumerate(terms)},
            doc_freq=doc_freq,
            n_docs=n_docs,
        )
        self.idf_ = np.log((1.0 + n_docs) / (1.0 + doc_freq)) + 1.0
        return self

    def transform(self, X: Sequence) -> sp.csr_matrix:
        check_is_fitted(self, "vocabulary_")
        config = self._config()
        index = self.vocabulary_.term_index
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for doc in X:
            counts: dict[int, int] = {}
            for term in tokenize(_text_of(doc), config):
                col = index.get(term)
                if col is not None:
                    counts[col] = counts.get(col, 0) + 1
            for col in sorted(counts):
                indices.append(col)
                data.append(counts[col] * self.idf_[col])
            indptr.append(len(indices))
        matrix = sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), indices, indptr),
            shape=(len(indptr) - 1, len(self.vocabulary_.terms)),
        )
        # L2-normalize rows; all-OOV rows stay zero.
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
        matrix = sp.diags(scale) @ matrix
        return sp.csr_matrix(matrix)

    def vectorize(self, text: str, sentence_id: str = "") -> SentenceEmbedding:
        row = self.transform([text])
        return make_embedding(sentence_id, self.space_id, row)

    def embed(self, sentences: Sequence) -> list[SentenceEmbedding]:
        matrix = self.transform(sentences)
        return [
            make_embedding(_id_of(s, i), self.space_id, matrix.getrow(i))
            for i, s in enumerate(sentences)
        ]

    @classmethod
    def from_state(
        cls,
        terms: Sequence[str],
        doc_freq: Sequence[int],
        n_docs: int,
        params: Mapping | None = None,
        space_id: str = "tfidf",
    ) -> "TfidfModel":
        """Rebuild a fitted model from persisted vocabulary data."""
        model = cls(space_id=space_id, **dict(params or {}))
        freq = np.asarray(doc_freq, dtype=np.int64)
        model.vocabulary_ = Vocabulary(
            terms=tuple(terms),
            term_index={t: i for i, t in enumerate(terms)},
            doc_freq=freq,
            n_docs=int(n_docs),
        )
        model.idf_ = np.log((1.0 + n_docs) / (1.0 + freq)) + 1.0
        return model


def build_tfidf_model(sentences: Sequence, config: TokenizerConfig | None = None) -> TfidfModel:
    """Fit a TF-IDF model over sentences (Sentence objects or strings)."""
    config = config or TokenizerConfig()
    return TfidfModel(
        lowercase=config.lowercase, min_token_chars=config.min_token_chars, space_id="tfidf"
    ).fit(sentences)


def tfidf_vectorize(model: TfidfModel, text: str, sentence_id: str = "") -> SentenceEmbedding:
    """Vectorize one text in a fitted model's space."""
    return model.vectorize(text, sentence_id)


class Embedder(Protocol):
    """Anything that can turn sentences into same-space embeddings."""

    space_id: str

    def build(self, sentences: Sequence[Sentence]) -> list[SentenceEmbedding]: ...


class PrefitEmbedder:
    """Embeds sentences with an already-fitted vectorizer."""

    def __init__(self, model: TfidfModel):
        check_is_fitted(model, "vocabulary_")
        self._model = model
        self.space_id = model.space_id

    def build(self, sentences: Sequence[Sentence]) -> list[SentenceEmbedding]:
        return self._model.embed(sentences)


class IdfBowEmbedder:
    """Fits an idf-weighted bag-of-words space on each batch it embeds.

    Used per product: the vocabulary and idf come from that product's own
    sentences, so no global corpus pass is needed. Vectors from different
    build() calls share a space tag but not a vocabulary, so support is
    only computed within one call's output.
    """

    space_id = "idf-bow"

    def __init__(self, lowercase: bool = True, min_token_chars: int = 2):
        self._lowercase = lowercase
        self._min_token_chars = min_token_chars

    def build(self, sentences: Sequence[Sentence]) -> list[SentenceEmbedding]:
        model = TfidfModel(
            lowercase=self._lowercase,
            min_token_chars=self._min_token_chars,
            space_id=self.space_id,
        ).fit(sentences)
        return model.embed(sentences)


def build_idf_bow_embedder(
    sentences: Sequence, config: TokenizerConfig | None = None
) -> PrefitEmbedder:
    """Fit an idf-bow similarity space over a sentence corpus."""
    config = config or TokenizerConfig()
    model = TfidfModel(
        lowercase=config.lowercase, min_token_chars=config.min_token_chars, space_id="idf-bow"
    ).fit(sentences)
    return PrefitEmbedder(model)


@dataclass
class EmbeddingStore:
    """Precomputed external sentence vectors, keyed by sentence id."""

    space_id: str
    dim: int
    vectors: dict[str, np.ndarray]

    def get(self, sentence_id: str) -> np.ndarray | None:
        return self.vectors.get(sentence_id)


class StoreEmbedder:
    """Looks sentences up in an EmbeddingStore; missing ids are fatal."""

    def __init__(self, store: EmbeddingStore):
        self._store = store
        self.space_id = store.space_id

    def build(self, sentences: Sequence[Sentence]) -> list[SentenceEmbedding]:
        missing = [s.sentence_id for s in sentences if s.sentence_id not in self._store.vectors]
        if missing:
            shown = ", ".join(missing[:5])
            raise InputError(
                f"{len(missing)} sentence ids have no stored embedding (first: {shown})"
            )
        return [
            make_embedding(s.sentence_id, self.space_id, self._store.vectors[s.sentence_id])
            for s in sentences
        ]


def load_precomputed_embeddings(path: str | Path, space_id: str | None = None) -> EmbeddingStore:
    """Read an embedding file: header ``dim=<D>``, then id TAB floats.

    A wrong number of values on any line is fatal and names the line;
    duplicate ids keep the last occurrence with a warning.
    """
    path = Path(path)
    if space_id is None:
        space_id = f"external:{path.stem}"
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip()
        match = re.fullmatch(r"dim=(\d+)", header)
        if not match:
            raise InputError("expected header 'dim=<D>'", line_no=1, path=str(path))
        dim = int(match.group(1))
        if dim < 1:
            raise InputError("dimension must be positive", line_no=1, path=str(path))
        for line_no, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InputError(
                    "expected '<sentence_id>\\t<floats>'", line_no=line_no, path=str(path)
                )
            sentence_id, payload = parts
            fields = payload.split()
            if len(fields) != dim:
                raise InputError(
                    f"expected {dim} values, got {len(fields)}", line_no=line_no, path=str(path)
                )
            try:
                values = np.array([float(f) for f in fields], dtype=np.float64)
            except ValueError as exc:
                raise InputError(
                    f"bad float value: {exc}", line_no=line_no, path=str(path)
                ) from exc
            if sentence_id in vectors:
                logger.warning("duplicate embedding for %r; keeping the last one", sentence_id)
            vectors[sentence_id] = values
    return EmbeddingStore(space_id=space_id, dim=dim, vectors=vectors)


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    """Write a store in the embedding file format; floats use repr so the
    save/load round trip is bit-identical."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"dim={store.dim}\n")
        for sentence_id, values in store.vectors.items():
            if "\t" in sentence_id:
                raise ValueError(f"sentence_id may not contain TAB: {sentence_id!r}")
            rendered = " ".join(repr(float(v)) for v in values)
            handle.write(f"{sentence_id}\t{rendered}\n")


def cosine_similarity(a: SentenceEmbedding, b: SentenceEmbedding) -> float:
    """Cosine of two same-space embeddings; zero-norm vectors give 0.0."""
    if a.space_id != b.space_id:
        raise ValueError(f"embedding space mismatch: {a.space_id!r} vs {b.space_id!r}")
    if a.dim != b.dim:
        raise ValueError(f"embedding dimension mismatch: {a.dim} vs {b.dim}")
    if a.norm == 0.0 or b.norm == 0.0:
        return 0.0
    if sp.issparse(a.values) or sp.issparse(b.values):
        left = sp.csr_matrix(a.values)
        right = sp.csr_matrix(b.values)
        dot = float((left @ right.T).toarray()[0, 0])
    else:
        dot = float(np.dot(a.values, b.values))
    return dot / (a.norm * b.norm)
