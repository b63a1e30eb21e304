"""Annotation-reliability and dataset analysis battery.

Everything here works on crowd votes (0/1/2 per annotator) or mean
helpfulness scores: annotator-vs-rest agreement with worst-annotator
trimming, split-half reliability, vote-convergence curves, internal
consistency of semantic neighborhoods, helpful/unhelpful review
contrasts, plus the length, sentiment and distribution summaries.

The Student-t distribution function is computed locally through the
regularized incomplete beta function so the t-tests carry no extra
dependency and can be checked against reference implementations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import AnnotatedSentence, LengthBounds, Review, Sentence, preprocess_review
from .evalmetrics import pearson
from .textvec import Embedder

logger = logging.getLogger(__name__)

VALID_RATINGS = (0, 1, 2)


@dataclass(frozen=True)
class VoteMatrix:
    """Sparse (sentence, annotator) -> rating map.

    Rows keep first-seen order; annotators are sorted so every seeded
    operation downstream is deterministic.
    """

    rows: tuple[str, ...]
    annotators: tuple[str, ...]
    entries: Mapping[tuple[str, str], int]

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, int]]) -> "VoteMatrix":
        rows: list[str] = []
        seen_rows: set[str] = set()
        annotators: set[str] = set()
        entries: dict[tuple[str, str], int] = {}
        for sentence_id, annotator_id, rating in records:
            if rating not in VALID_RATINGS:
                raise ValueError(f"rating {rating!r} outside {{0,1,2}}")
            if sentence_id not in seen_rows:
                seen_rows.add(sentence_id)
                rows.append(sentence_id)
            annotators.add(annotator_id)
            entries[(sentence_id, annotator_id)] = int(rating)
        return cls(tuple(rows), tuple(sorted(annotators)), entries)

    @classmethod
    def from_annotated(cls, annotated: Sequence[AnnotatedSentence]) -> "VoteMatrix":
        records = [
            (a.sentence.sentence_id, annotator, rating)
            for a in annotated
            for annotator, rating in a.ratings
        ]
        return cls.from_records(records)

    def row_votes(self, sentence_id: str) -> list[tuple[str, int]]:
        """Votes on one row in annotator-sorted order."""
        return [
            (a, self.entries[(sentence_id, a)])
            for a in self.annotators
            if (sentence_id, a) in self.entries
        ]

    def vote_count(self, sentence_id: str) -> int:
        return len(self.row_votes(sentence_id))

    def row_mean(self, sentence_id: str) -> float:
        votes = [r for _, r in self.row_votes(sentence_id)]
        if not votes:
            raise ValueError(f"row {sentence_id!r} has no votes")
        return sum(votes) / len(votes)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    kind: str
    dof: float

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "kind": self.kind,
            "dof": self.dof,
        }


def regularized_incomplete_beta(a: float, b: float, x: float, tol: float = 1e-14) -> float:
    """I_x(a, b) by continued fraction (Lentz), absolute accuracy ~1e-10.

    Uses the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the
    fast-convergence region.
    """
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x, tol)
    ln_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        + math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
    )
    front = math.exp(ln_front) / a

    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        coeff = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + coeff * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + coeff / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        coeff = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + coeff * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + coeff / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < tol:
            break
    else:
        logger.warning("incomplete beta did not reach tol=%g for a=%g b=%g x=%g", tol, a, b, x)
    return front * h


def student_t_sf(t: float, dof: float) -> float:
    """One-sided survival function P(T > t) of Student's t."""
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof}")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = dof / (dof + t * t)
    half_tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return half_tail if t >= 0 else 1.0 - half_tail


def student_t_two_tailed(t: float, dof: float) -> float:
    """Two-tailed p-value for a t statistic."""
    if math.isinf(t):
        return 0.0
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof}")
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def _degenerate(mean_diff: float, kind: str, dof: float) -> TTestResult:
    # Zero standard error: equal means are a perfect null, unequal means
    # an unbounded statistic.
    if mean_diff == 0.0:
        return TTestResult(0.0, 1.0, kind, dof)
    statistic = math.inf if mean_diff > 0 else -math.inf
    return TTestResult(statistic, 0.0, kind, dof)


def t_test(a: Sequence[float], b: Sequence[float], kind: str = "student") -> TTestResult:
    """Two-tailed t-test: pooled-variance Student, Welch, or paired."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if kind == "paired":
        if x.shape != y.shape or x.size < 2:
            raise ValueError("paired test needs two equal-length samples of size >= 2")
        diff = x - y
        n = diff.size
        dof = float(n - 1)
        sd = float(diff.std(ddof=1))
        mean_diff = float(diff.mean())
        label = "paired-two-tailed"
        if sd == 0.0:
            return _degenerate(mean_diff, label, dof)
        statistic = mean_diff / (sd / math.sqrt(n))
        return TTestResult(statistic, student_t_two_tailed(statistic, dof), label, dof)
    if kind not in ("student", "welch"):
        raise ValueError(f"unknown t-test kind {kind!r}")
    if x.size < 2 or y.size < 2:
        raise ValueError("two-sample tests need >= 2 values per sample")
    mean_diff = float(x.mean() - y.mean())
    var_x = float(x.var(ddof=1))
    var_y = float(y.var(ddof=1))
    n_x, n_y = x.size, y.size
    if kind == "student":
        dof = float(n_x + n_y - 2)
        pooled = ((n_x - 1) * var_x + (n_y - 1) * var_y) / dof
        se = math.sqrt(pooled * (1.0 / n_x + 1.0 / n_y))
    else:
        se_sq = var_x / n_x + var_y / n_y
        se = math.sqrt(se_sq)
        if se_sq > 0.0:
            dof = se_sq**2 / (
                (var_x / n_x) ** 2 / (n_x - 1) + (var_y / n_y) ** 2 / (n_y - 1)
            )
        else:
            dof = float(n_x + n_y - 2)
    if se == 0.0:
        return _degenerate(mean_diff, kind, dof)
    statistic = mean_diff / se
    return TTestResult(statistic, student_t_two_tailed(statistic, dof), kind, dof)


@dataclass(frozen=True)
class AgreementResult:
    """Mean annotator-vs-rest Pearson after trimming the worst raters."""

    mean_agreement: float
    per_annotator: Mapping[str, float]
    trimmed: tuple[str, ...]
    excluded: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "mean_agreement": self.mean_agreement,
            "per_annotator": dict(self.per_annotator),
            "trimmed": list(self.trimmed),
            "excluded": list(self.excluded),
        }


def annotator_vs_rest_agreement(
    votes: VoteMatrix, trim_fraction: float = 0.10
) -> AgreementResult:
    """Per annotator, Pearson of their ratings against the mean of the
    other raters on shared rows; the worst trim_fraction are dropped and
    the rest averaged.

    Annotators with under 3 shared rows or zero rating variance cannot be
    scored and are excluded with a warning.
    """
    if len(votes.annotators) < 2:
        raise ValueError("agreement needs at least 2 annotators")
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError(f"trim_fraction must be in [0, 1), got {trim_fraction}")
    scores: dict[str, float] = {}
    excluded: list[str] = []
    for annotator in votes.annotators:
        own: list[float] = []
        rest: list[float] = []
        for row in votes.rows:
            rating = votes.entries.get((row, annotator))
            if rating is None:
                continue
            others = [r for a, r in votes.row_votes(row) if a != annotator]
            if not others:
                continue
            own.append(float(rating))
            rest.append(sum(others) / len(others))
        try:
            scores[annotator] = pearson(own, rest)
        except ValueError as exc:
            logger.warning("annotator %r excluded from agreement: %s", annotator, exc)
            excluded.append(annotator)
    if not scores:
        raise ValueError("no annotator could be scored for agreement")
    ranked = sorted(scores.items(), key=lambda item: (item[1], item[0]))
    n_trim = int(len(ranked) * trim_fraction)
    trimmed = tuple(a for a, _ in ranked[:n_trim])
    kept = ranked[n_trim:]
    mean_agreement = float(np.mean([s for _, s in kept]))
    return AgreementResult(mean_agreement, scores, trimmed, tuple(excluded))


def split_half_agreement(votes: VoteMatrix, seed: int = 42) -> float:
    """Randomly bisect the annotator pool and correlate the two halves'
    per-row mean scores over rows covered by both."""
    if len(votes.annotators) < 2:
        raise ValueError("split-half needs at least 2 annotators")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(votes.annotators))
    names = [votes.annotators[i] for i in order]
    half_a = set(names[: len(names) // 2])
    half_b = set(names[len(names) // 2 :])
    series_a: list[float] = []
    series_b: list[float] = []
    for row in votes.rows:
        row_votes = votes.row_votes(row)
        votes_a = [r for a, r in row_votes if a in half_a]
        votes_b = [r for a, r in row_votes if a in half_b]
        if votes_a and votes_b:
            series_a.append(sum(votes_a) / len(votes_a))
            series_b.append(sum(votes_b) / len(votes_b))
    if len(series_a) < 3:
        raise ValueError(
            f"only {len(series_a)} rows are covered by both halves; need at least 3"
        )
    return pearson(series_a, series_b)


def vote_convergence_curve(
    votes: VoteMatrix,
    predictions: Mapping[str, float],
    vote_counts: Sequence[int],
    resamples: int = 50,
    seed: int = 42,
) -> list[tuple[int, float]]:
    """Correlation between fixed predictions and v-vote mean scores.

    For each v, rows are resampled v votes (without replacement) and the
    Pearson against the predictions is averaged over resamples. Rows
    lacking max(vote_counts) votes or a prediction are excluded with a
    warning. At v equal to a row's full vote count the exact mean is
    used, so the curve's last point reproduces the full-vote correlation.
    """
    if not vote_counts or min(vote_counts) < 1:
        raise ValueError("vote_counts must be positive integers")
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    needed = max(vote_counts)
    eligible: list[str] = []
    skipped = 0
    for row in votes.rows:
        if row not in predictions or votes.vote_count(row) < needed:
            skipped += 1
            continue
        eligible.append(row)
    if skipped:
        logger.warning(
            "vote_convergence_curve: %d rows excluded (missing votes or predictions)", skipped
        )
    if len(eligible) < 3:
        raise ValueError(f"only {len(eligible)} usable rows; need at least 3")
    pred = np.array([predictions[row] for row in eligible], dtype=np.float64)
    ratings = [np.array([r for _, r in votes.row_votes(row)], dtype=np.float64) for row in eligible]

    # Rows are grouped by vote count so each group samples as one matrix.
    by_length: dict[int, list[int]] = {}
    for i, r in enumerate(ratings):
        by_length.setdefault(len(r), []).append(i)
    stacked = {
        length: (np.array(indices), np.vstack([ratings[i] for i in indices]))
        for length, indices in by_length.items()
    }

    rng = np.random.default_rng(seed)
    curve: list[tuple[int, float]] = []
    for v in vote_counts:
        correlations = []
        for _ in range(resamples):
            means = np.empty(len(eligible), dtype=np.float64)
            for length, (indices, matrix) in stacked.items():
                if v >= length:
                    # Full coverage: the exact mean, no sampling noise.
                    means[indices] = matrix.mean(axis=1)
                else:
                    keys = rng.random(matrix.shape)
                    picked = np.argsort(keys, axis=1)[:, :v]
                    means[indices] = np.take_along_axis(matrix, picked, axis=1).mean(axis=1)
            correlations.append(pearson(pred, means))
        curve.append((int(v), float(np.mean(correlations))))
    return curve


@dataclass(frozen=True)
class ConsistencyResult:
    """Within-group vs random-group score spread for semantic neighborhoods."""

    n_groups: int
    mean_group_std: float
    mean_random_std: float
    test: TTestResult
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "n_groups": self.n_groups,
            "mean_group_std": self.mean_group_std,
            "mean_random_std": self.mean_random_std,
            "test": self.test.to_dict(),
            "degenerate": self.degenerate,
        }


def internal_consistency(
    annotated: Sequence[AnnotatedSentence],
    embedder: Embedder,
    group_sigma: float,
    seed: int = 42,
) -> ConsistencyResult:
    """Group sentences by thresholded similarity (greedy, input order) and
    compare within-group score spread against equal-size random groups.

    A paired two-tailed t-test over (group std, random std) pairs backs
    the comparison; if the pairs carry no variance the result is flagged
    degenerate instead of failing.
    """
    if len(annotated) < 2:
        raise ValueError("internal consistency needs at least 2 sentences")
    sentences = [a.sentence for a in annotated]
    scores = np.array([a.helpfulness for a in annotated], dtype=np.float64)
    embeddings = embedder.build(sentences)
    from .rhs import _normalized_matrix  # shared row-normalization helper

    matrix = _normalized_matrix(embeddings)
    sims = matrix @ matrix.T
    if hasattr(sims, "toarray"):
        sims = sims.toarray()
    sims = np.asarray(sims)

    n = len(annotated)
    ungrouped = np.ones(n, dtype=bool)
    groups: list[np.ndarray] = []
    for i in range(n):
        if not ungrouped[i]:
            continue
        members = np.flatnonzero(ungrouped & (sims[i] > group_sigma))
        members = np.concatenate(([i], members[members != i]))
        ungrouped[members] = False
        if members.size >= 2:
            groups.append(members)
    if not groups:
        raise ValueError("no non-singleton similarity groups at this threshold")

    rng = np.random.default_rng(seed)
    group_stds = np.array([float(scores[g].std()) for g in groups])
    random_stds = np.array(
        [float(scores[rng.choice(n, size=g.size, replace=False)].std()) for g in groups]
    )
    diffs = group_stds - random_stds
    degenerate = len(groups) < 2 or float(np.std(diffs, ddof=1)) == 0.0
    if len(groups) < 2:
        test = _degenerate(float(diffs.mean()), "paired-two-tailed", float(len(groups)))
    else:
        test = t_test(group_stds, random_stds, kind="paired")
    return ConsistencyResult(
        n_groups=len(groups),
        mean_group_std=float(group_stds.mean()),
        mean_random_std=float(random_stds.mean()),
        test=test,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class ContrastSetStats:
    n_reviews: int
    n_sentences: int
    mean_sentences_per_review: float
    n_sampled: int
    mean_score: float
    above: Mapping[float, float]

    def to_dict(self) -> dict:
        return {
            "n_reviews": self.n_reviews,
            "n_sentences": self.n_sentences,
            "mean_sentences_per_review": self.mean_sentences_per_review,
            "n_sampled": self.n_sampled,
            "mean_score": self.mean_score,
            "ratio_above": {str(t): v for t, v in self.above.items()},
        }


@dataclass(frozen=True)
class ContrastResult:
    helpful: ContrastSetStats
    unhelpful: ContrastSetStats
    student: TTestResult
    welch: TTestResult

    def to_dict(self) -> dict:
        return {
            "helpful": self.helpful.to_dict(),
            "unhelpful": self.unhelpful.to_dict(),
            "student": self.student.to_dict(),
            "welch": self.welch.to_dict(),
        }


def contrast_sets(
    reviews: Sequence[Review],
    score_fn: Callable[[Sentence], float],
    *,
    helpful_floor: int = 50,
    sample_size: int = 500,
    score_thresholds: Sequence[float] = (1.0, 1.5),
    bounds: LengthBounds | None = None,
    seed: int = 42,
) -> ContrastResult:
    """Contrast sentence scores of heavily-voted reviews against reviews
    with no helpful votes.

    Reviews with at least helpful_floor votes form one set, reviews with
    exactly zero the other; anything in between (or without vote data) is
    out of scope, so the sets stay disjoint. Per-set sentence samples are
    drawn with a seeded generator and compared with Student and Welch
    t-tests.
    """
    if helpful_floor < 1:
        raise ValueError(f"helpful_floor must be >= 1, got {helpful_floor}")
    if sample_size < 2:
        raise ValueError(f"sample_size must be >= 2, got {sample_size}")
    bounds = bounds or LengthBounds()
    helpful_reviews = [r for r in reviews if r.helpful_votes is not None and r.helpful_votes >= helpful_floor]
    unhelpful_reviews = [r for r in reviews if r.helpful_votes == 0]
    if not helpful_reviews or not unhelpful_reviews:
        raise ValueError(
            f"empty partition: {len(helpful_reviews)} reviews with >= {helpful_floor} votes, "
            f"{len(unhelpful_reviews)} with zero"
        )
    rng = np.random.default_rng(seed)

    def build(set_reviews: list[Review]) -> tuple[ContrastSetStats, np.ndarray]:
        sentences: list[Sentence] = []
        for review in set_reviews:
            sentences.extend(preprocess_review(review, bounds))
        if not sentences:
            raise ValueError("a contrast set has no sentences after preprocessing")
        n_sampled = min(sample_size, len(sentences))
        if n_sampled < sample_size:
            logger.warning(
                "contrast set has only %d sentences; sampling them all", len(sentences)
            )
        picked = rng.choice(len(sentences), size=n_sampled, replace=False)
        values = np.array([score_fn(sentences[i]) for i in picked], dtype=np.float64)
        stats = ContrastSetStats(
            n_reviews=len(set_reviews),
            n_sentences=len(sentences),
            mean_sentences_per_review=len(sentences) / len(set_reviews),
            n_sampled=n_sampled,
            mean_score=float(values.mean()),
            above={float(t): float(np.mean(values > t)) for t in score_thresholds},
        )
        return stats, values

    helpful_stats, helpful_scores = build(helpful_reviews)
    unhelpful_stats, unhelpful_scores = build(unhelpful_reviews)
    return ContrastResult(
        helpful=helpful_stats,
        unhelpful=unhelpful_stats,
        student=t_test(helpful_scores, unhelpful_scores, kind="student"),
        welch=t_test(helpful_scores, unhelpful_scores, kind="welch"),
    )


def length_helpfulness_correlation(annotated: Sequence[AnnotatedSentence]) -> float:
    """Pearson between sentence character length and gold helpfulness."""
    lengths = [float(a.sentence.char_len) for a in annotated]
    scores = [a.helpfulness for a in annotated]
    return pearson(lengths, scores)


@dataclass(frozen=True)
class SentimentHelpfulnessProbs:
    """Conditional frequencies linking polarity and helpfulness.

    A probability is None when its conditioning event never occurs;
    downstream reporting shows that as undefined rather than a number.
    """

    n: int
    n_helpful: int
    n_sentiment: int
    n_both: int
    p_helpful_given_sentiment: float | None
    p_sentiment_given_helpful: float | None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_helpful": self.n_helpful,
            "n_sentiment": self.n_sentiment,
            "n_both": self.n_both,
            "p_helpful_given_sentiment": self.p_helpful_given_sentiment,
            "p_sentiment_given_helpful": self.p_sentiment_given_helpful,
            "undefined": {
                "p_helpful_given_sentiment": self.p_helpful_given_sentiment is None,
                "p_sentiment_given_helpful": self.p_sentiment_given_helpful is None,
            },
        }


def sentiment_helpfulness_probs(
    annotated: Sequence[AnnotatedSentence], provider, helpful_floor: float = 1.5
) -> SentimentHelpfulnessProbs:
    """P(helpful | has sentiment) and P(has sentiment | helpful).

    "Helpful" is gold score >= helpful_floor; "has sentiment" is any
    label other than neutral.
    """
    if not annotated:
        raise ValueError("sentiment_helpfulness_probs needs a nonempty input")
    results = provider.classify_batch([a.sentence.text for a in annotated])
    n_helpful = n_sentiment = n_both = 0
    for item, result in zip(annotated, results):
        helpful = item.helpfulness >= helpful_floor
        sentiment = result.label != "neutral"
        n_helpful += helpful
        n_sentiment += sentiment
        n_both += helpful and sentiment
    return SentimentHelpfulnessProbs(
        n=len(annotated),
        n_helpful=n_helpful,
        n_sentiment=n_sentiment,
        n_both=n_both,
        p_helpful_given_sentiment=(n_both / n_sentiment) if n_sentiment else None,
        p_sentiment_given_helpful=(n_both / n_helpful) if n_helpful else None,
    )


@dataclass(frozen=True)
class Histogram:
    """Fixed-width histogram over the [0, 2] score range."""

    bin_width: float
    bin_starts: tuple[float, ...]
    counts: tuple[int, ...]
    mode_bin: float
    n: int

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "bins": [
                {"bin": start, "count": count}
                for start, count in zip(self.bin_starts, self.counts)
            ],
            "mode_bin": self.mode_bin,
            "n": self.n,
        }


def score_distribution(scores: Sequence[float], bin_width: float = 0.1) -> Histogram:
    """Bin scores over [0, 2] and report the mode bin (ties go low).

    Bins are [start, start+width) with the top bin closed at 2.0. A tiny
    epsilon guards the floor division against values like 1.3 landing a
    hair under their bin boundary in binary floating point.
    """
    if not 0 < bin_width <= 2.0:
        raise ValueError(f"bin_width must be in (0, 2], got {bin_width}")
    values = np.asarray(list(scores), dtype=np.float64)
    if values.size == 0:
        raise ValueError("score_distribution needs a nonempty input")
    if values.min() < 0.0 or values.max() > 2.0:
        raise ValueError("scores must lie in [0, 2]")
    n_bins = max(1, int(math.ceil(2.0 / bin_width - 1e-9)))
    indices = np.minimum(n_bins - 1, (values / bin_width + 1e-9).astype(np.int64))
    counts = np.bincount(indices, minlength=n_bins)
    starts = tuple(round(i * bin_width, 10) for i in range(n_bins))
    mode_bin = starts[int(np.argmax(counts))]
    return Histogram(
        bin_width=bin_width,
        bin_starts=starts,
        counts=tuple(int(c) for c in counts),
        mode_bin=mode_bin,
        n=int(values.size),
    )
