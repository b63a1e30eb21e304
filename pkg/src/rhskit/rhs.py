"""Support computation and Representative Helpful Sentence selection.

A sentence's support is the number of other sentences in its pool whose
cosine similarity exceeds a threshold sigma (strict inequality; a
sentence never supports itself). Candidates passing a minimum support
are ranked by support * helpfulness^alpha, and the top positive and
negative candidates become the product's RHS pair.

The boost exponent alpha can be refit from annotation data by minimizing
KL(annotator softmax || formula softmax) over per-product groups.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import LengthBounds, Review, Sentence, segment_review
from .helpfulness import (
    HelpfulnessPrediction,
    RidgeModel,
    filter_helpful,
    predict_many,
    predict_texts,
)
from .sentiment import SentimentResult, partition_by_sentiment
from .textvec import Embedder, SentenceEmbedding

logger = logging.getLogger(__name__)

# Similarity threshold and minimum support; the defaults were calibrated
# for a strong external encoder space. The relaxed pair trades precision
# for coverage. Neither value transfers across embedding spaces, so
# recalibrate (calibrate-sigma) when switching spaces.
DEFAULT_SIGMA = 0.876
RELAXED_SIGMA = 0.75
DEFAULT_MIN_SUPPORT = 5
DEFAULT_ALPHA = 38.8


@dataclass(frozen=True)
class SupportConfig:
    sigma: float = DEFAULT_SIGMA
    min_support: int = DEFAULT_MIN_SUPPORT

    def __post_init__(self) -> None:
        if not -1.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must be in [-1, 1], got {self.sigma}")
        if self.min_support < 0:
            raise ValueError(f"min_support must be >= 0, got {self.min_support}")


RELAXED_SUPPORT = SupportConfig(sigma=RELAXED_SIGMA, min_support=0)


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass
class ScoredCandidate:
    """One pool candidate with everything the ranking formula needs."""

    sentence: Sentence
    helpfulness: HelpfulnessPrediction
    sentiment: SentimentResult
    support: int
    neighbors: list[tuple[str, float]]
    rank_score: float = 0.0


@dataclass(frozen=True)
class Diagnostics:
    """Sentence counts at each pipeline stage, for observability."""

    input_sentences: int = 0
    after_length_gate: int = 0
    after_helpfulness_gate: int = 0
    positive_pool: int = 0
    negative_pool: int = 0
    discarded_by_sentiment: int = 0
    positive_supported: int = 0
    negative_supported: int = 0

    def to_dict(self) -> dict:
        return {
            "input_sentences": self.input_sentences,
            "after_length_gate": self.after_length_gate,
            "after_helpfulness_gate": self.after_helpfulness_gate,
            "after_sentiment_split": {
                "positive": self.positive_pool,
                "negative": self.negative_pool,
                "discarded": self.discarded_by_sentiment,
            },
            "after_support_gate": {
                "positive": self.positive_supported,
                "negative": self.negative_supported,
            },
        }


@dataclass
class RhsResult:
    """Per-product outcome: the selected positive and negative RHS (either
    may be absent) plus stage diagnostics."""

    product_id: str | None
    positive: ScoredCandidate | None
    negative: ScoredCandidate | None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def to_json_dict(self, supporters_top_k: int = 5) -> dict:
        return {
            "product_id": self.product_id,
            "positive": _candidate_dict(self.positive, supporters_top_k),
            "negative": _candidate_dict(self.negative, supporters_top_k),
            "diagnostics": self.diagnostics.to_dict(),
        }


def _candidate_dict(candidate: ScoredCandidate | None, top_k: int) -> dict | None:
    if candidate is None:
        return None
    supporters = sorted(candidate.neighbors, key=lambda pair: (-pair[1], pair[0]))[:top_k]
    return {
        "sentence": {
            "sentence_id": candidate.sentence.sentence_id,
            "review_id": candidate.sentence.review_id,
            "text": candidate.sentence.text,
        },
        "helpfulness": candidate.helpfulness.score,
        "raw_helpfulness": candidate.helpfulness.raw_score,
        "sentiment": candidate.sentiment.label,
        "support": candidate.support,
        "rank_score": candidate.rank_score,
        "supporters": [{"sentence_id": sid, "similarity": sim} for sid, sim in supporters],
    }


def _normalized_matrix(embeddings: Sequence[SentenceEmbedding]):
    """Stack embeddings into a row matrix with unit (or zero) rows."""
    if sp.issparse(embeddings[0].values):
        matrix = sp.vstack([sp.csr_matrix(e.values) for e in embeddings], format="csr")
        norms = np.array([e.norm for e in embeddings])
        scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
        return sp.diags(scale) @ matrix
    matrix = np.vstack([np.asarray(e.values, dtype=np.float64) for e in embeddings])
    norms = np.array([e.norm for e in embeddings])
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return matrix * scale[:, None]


def compute_support(
    embeddings: Sequence[SentenceEmbedding],
    sigma: float,
    workers: int = 1,
    block_size: int = 256,
) -> list[tuple[int, list[tuple[str, float]]]]:
    """Exact all-pairs support: per sentence, the count and list of other
    sentences with cosine similarity strictly above sigma.

    Work is split over fixed row blocks of the similarity matrix;
    the block partition does not depend on the worker count, so the
    parallel result is bit-identical to the sequential one.
    """
    if not -1.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [-1, 1], got {sigma}")
    n = len(embeddings)
    if n == 0:
        return []
    space = embeddings[0].space_id
    dim = embeddings[0].dim
    for e in embeddings:
        if e.space_id != space:
            raise ValueError(f"mixed embedding spaces: {space!r} vs {e.space_id!r}")
        if e.dim != dim:
            raise ValueError(f"mixed embedding dimensions: {dim} vs {e.dim}")
    ids = [e.sentence_id for e in embeddings]
    matrix = _normalized_matrix(embeddings)
    sparse = sp.issparse(matrix)
    transposed = matrix.T if not sparse else matrix.T.tocsc()

    def run_block(bounds: tuple[int, int]) -> list[tuple[int, list[tuple[str, float]]]]:
        start, stop = bounds
        block = matrix[start:stop] @ transposed
        if sp.issparse(block):
            block = block.toarray()
        out = []
        for local, row_index in enumerate(range(start, stop)):
            row = block[local]
            hits = np.flatnonzero(row > sigma)
            neighbors = [(ids[j], float(row[j])) for j in hits if j != row_index]
            out.append((len(neighbors), neighbors))
        return out

    blocks = [(start, min(start + block_size, n)) for start in range(0, n, block_size)]
    if workers <= 1 or len(blocks) == 1:
        chunks = [run_block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_block, blocks))
    return [item for chunk in chunks for item in chunk]


def rank_candidates(
    pool: Sequence[ScoredCandidate],
    support_cfg: SupportConfig,
    selection_cfg: SelectionConfig,
) -> list[ScoredCandidate]:
    """Drop under-supported candidates and sort by the selection formula.

    rank_score = support * helpfulness^alpha, descending; ties fall back
    to higher support, then higher helpfulness, then sentence id.
    """
    kept = [c for c in pool if c.support >= support_cfg.min_support]
    for candidate in kept:
        candidate.rank_score = candidate.support * candidate.helpfulness.score**selection_cfg.alpha
    return sorted(
        kept,
        key=lambda c: (
            -c.rank_score,
            -c.support,
            -c.helpfulness.score,
            c.sentence.sentence_id,
        ),
    )


def pareto_front(candidates: Sequence[ScoredCandidate]) -> list[ScoredCandidate]:
    """Candidates not strictly dominated in both support and helpfulness.

    Ties on both coordinates are all retained; output keeps input order.
    """
    ordered = sorted(candidates, key=lambda c: (-c.support, -c.helpfulness.score))
    dominated: set[int] = set()
    best_help = -math.inf
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].support == ordered[i].support:
            j += 1
        group = ordered[i:j]
        for candidate in group:
            # best_help covers only strictly higher supports at this point.
            if best_help > candidate.helpfulness.score:
                dominated.add(id(candidate))
        best_help = max(best_help, max(c.helpfulness.score for c in group))
        i = j
    return [c for c in candidates if id(c) not in dominated]


def _prepare_group(group) -> tuple[np.ndarray, np.ndarray, np.ndarray, float] | None:
    if len(group) < 2:
        return None
    support = np.array([g[0] for g in group], dtype=np.float64)
    helpful = np.array([g[1] for g in group], dtype=np.float64)
    annotated = np.array([g[2] for g in group], dtype=np.float64)
    if (support <= 0).any() or (helpful <= 0).any():
        raise ValueError("fit_alpha needs strictly positive support and helpfulness values")
    if not np.isfinite(annotated).all():
        raise ValueError("annotated scores must be finite")
    shifted = annotated - annotated.max()
    weights = np.exp(shifted)
    p = weights / weights.sum()
    entropy_term = float(p @ np.log(p))
    return np.log(support), np.log(helpful), p, entropy_term


def fit_alpha(
    groups: Sequence[Sequence[tuple[float, float, float]]],
    *,
    alpha_min: float = 0.1,
    alpha_max: float = 200.0,
    grid_step: float = 0.5,
    tol: float = 1e-3,
) -> float:
    """Fit the boost exponent from (support, helpfulness, annotated) triples.

    Minimizes the summed KL divergence between each group's softmax of
    annotated scores and the softmax of ln(support) + alpha*ln(helpfulness),
    with a coarse grid pass followed by golden-section refinement. Groups
    with fewer than two candidates are skipped.
    """
    prepared = []
    for group in groups:
        item = _prepare_group(group)
        if item is None:
            logger.warning("skipping a fit_alpha group with fewer than 2 candidates")
        else:
            prepared.append(item)
    if not prepared:
        raise ValueError("fit_alpha needs at least one group with >= 2 candidates")

    def objective(alpha: float) -> float:
        total = 0.0
        for ln_s, ln_h, p, entropy_term in prepared:
            z = ln_s + alpha * ln_h
            z = z - z.max()
            lse = math.log(float(np.exp(z).sum()))
            total += entropy_term - float(p @ z) + lse
        return total

    grid = list(np.arange(alpha_min, alpha_max, grid_step))
    grid.append(alpha_max)
    values = [objective(a) for a in grid]
    best = int(np.argmin(values))
    lo = grid[max(0, best - 1)]
    hi = grid[min(len(grid) - 1, best + 1)]

    # Golden-section: the objective is convex in alpha (log-sum-exp of an
    # affine function minus an affine function), so this converges.
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    return (a + b) / 2.0


def _pool_candidates(
    pool: Sequence[tuple],
    embeddings_by_id: dict[str, SentenceEmbedding] | None,
    support_cfg: SupportConfig,
    workers: int,
) -> list[ScoredCandidate]:
    """Compute support within one sentiment pool and build candidates."""
    if not pool:
        return []
    if embeddings_by_id is None:
        supports = [(0, []) for _ in pool]
    else:
        embeddings = [embeddings_by_id[sentence.sentence_id] for (sentence, _), _ in pool]
        supports = compute_support(embeddings, support_cfg.sigma, workers=workers)
    return [
        ScoredCandidate(
            sentence=sentence,
            helpfulness=prediction,
            sentiment=sentiment,
            support=count,
            neighbors=neighbors,
        )
        for ((sentence, prediction), sentiment), (count, neighbors) in zip(pool, supports)
    ]


def select_rhs(
    reviews: Sequence[Review],
    model: RidgeModel,
    provider,
    embedder: Embedder,
    support_cfg: SupportConfig | None = None,
    selection_cfg: SelectionConfig | None = None,
    *,
    bounds: LengthBounds | None = None,
    helpful_floor: float = 1.0,
    workers: int = 1,
    product_id: str | None = None,
) -> RhsResult:
    """Run the full pipeline for one product's reviews.

    preprocess -> predict helpfulness -> floor filter -> sentiment split
    -> per-pool support -> rank -> top of each pool. Absent pools yield
    absent results; a sentence is never fabricated. Stage progress is
    logged so failures can be located.
    """
    support_cfg = support_cfg or SupportConfig()
    selection_cfg = selection_cfg or SelectionConfig()
    bounds = bounds or LengthBounds()

    if product_id is None:
        seen = {r.product_id for r in reviews}
        if len(seen) > 1:
            raise ValueError(
                f"reviews span {len(seen)} products; select_rhs works on one at a time"
            )
        product_id = seen.pop() if seen else None

    logger.debug("select_rhs[%s]: preprocessing %d reviews", product_id, len(reviews))
    raw_count = 0
    gated: list[Sentence] = []
    for review in reviews:
        sentences = segment_review(review)
        raw_count += len(sentences)
        gated.extend(s for s in sentences if bounds.contains(s.char_len))
    if not gated:
        return RhsResult(
            product_id,
            None,
            None,
            Diagnostics(input_sentences=raw_count, after_length_gate=0),
        )

    # One embedding pass over all gated sentences; a per-call embedder
    # (idf-bow) fits its space on this product's own sentences.
    embeddings_by_id: dict[str, SentenceEmbedding] | None
    try:
        built = embedder.build(gated)
        embeddings_by_id = {e.sentence_id: e for e in built}
    except ValueError as exc:
        if model.feature_space != "tfidf":
            raise
        logger.warning(
            "select_rhs[%s]: similarity space unavailable (%s); supports set to 0",
            product_id,
            exc,
        )
        embeddings_by_id = None

    logger.debug("select_rhs[%s]: predicting helpfulness", product_id)
    if model.feature_space == "tfidf":
        predictions = predict_texts(
            model, [s.text for s in gated], [s.sentence_id for s in gated]
        )
    elif embeddings_by_id is not None and embedder.space_id == model.feature_space:
        predictions = predict_many(model, [embeddings_by_id[s.sentence_id] for s in gated])
    else:
        raise ValueError(
            f"model feature space {model.feature_space!r} needs embeddings from the same "
            f"space; the configured embedder provides {embedder.space_id!r}"
        )

    helpful = filter_helpful(predictions, helpful_floor)
    helpful_ids = {p.sentence_id for p in helpful}
    helpful_pairs = [
        (sentence, prediction)
        for sentence, prediction in zip(gated, predictions)
        if prediction.sentence_id in helpful_ids
    ]

    logger.debug("select_rhs[%s]: sentiment over %d sentences", product_id, len(helpful_pairs))
    partition = partition_by_sentiment(
        helpful_pairs, provider, text_of=lambda pair: pair[0].text
    )

    logger.debug(
        "select_rhs[%s]: support over pools of %d/%d",
        product_id,
        len(partition.positive),
        len(partition.negative),
    )
    positive_pool = _pool_candidates(partition.positive, embeddings_by_id, support_cfg, workers)
    negative_pool = _pool_candidates(partition.negative, embeddings_by_id, support_cfg, workers)
    positive_ranked = rank_candidates(positive_pool, support_cfg, selection_cfg)
    negative_ranked = rank_candidates(negative_pool, support_cfg, selection_cfg)

    diagnostics = Diagnostics(
        input_sentences=raw_count,
        after_length_gate=len(gated),
        after_helpfulness_gate=len(helpful_pairs),
        positive_pool=len(partition.positive),
        negative_pool=len(partition.negative),
        discarded_by_sentiment=partition.n_discarded,
        positive_supported=len(positive_ranked),
        negative_supported=len(negative_ranked),
    )
    return RhsResult(
        product_id,
        positive_ranked[0] if positive_ranked else None,
        negative_ranked[0] if negative_ranked else None,
        diagnostics,
    )
