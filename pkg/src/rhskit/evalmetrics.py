"""Evaluation metrics: MSE, Pearson, NDCG@K, ROUGE-1/2/L, precision@K
curves, and a percentile-bootstrap confidence interval.

These are the reference implementations the rest of the package (and its
tests) lean on, so they stay dependency-light and fully deterministic.
ROUGE uses the simplest reproducible convention: lowercase alphanumeric
tokens, no stemming, no stopword removal. Absolute ROUGE values are
sensitive to that choice; comparisons within one configuration are not.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .textvec import TokenizerConfig, tokenize

# ROUGE keeps single-character tokens ("a", "I") that the vector spaces drop.
_ROUGE_TOKENS = TokenizerConfig(lowercase=True, min_token_chars=1)


@dataclass(frozen=True)
class MetricReport:
    """One metric value with its sample size and optional CI halfwidth."""

    name: str
    value: float
    n: int
    k: int | None = None
    ci_halfwidth: float | None = None

    def to_dict(self) -> dict:
        return {
            "metric": self.name,
            "value": self.value,
            "n": self.n,
            "k": self.k,
            "ci_halfwidth": self.ci_halfwidth,
        }


def reports_to_csv(reports: Sequence[MetricReport]) -> str:
    """Render reports as plot-ready CSV rows (metric,k,value,ci,n)."""
    lines = ["metric,k,value,ci,n"]
    for r in reports:
        k = "" if r.k is None else str(r.k)
        ci = "" if r.ci_halfwidth is None else repr(r.ci_halfwidth)
        lines.append(f"{r.name},{k},{repr(r.value)},{ci},{r.n}")
    return "\n".join(lines) + "\n"


def mse(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Mean squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(
            f"mse needs two equal-length nonempty series, got {pred.shape} and {gold.shape}"
        )
    return float(np.mean((pred - gold) ** 2))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; requires n >= 3 and nonzero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs two equal-length series, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise ValueError(f"pearson needs at least 3 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson is undefined for a zero-variance series")
    return float(np.dot(dx, dy) / (sx * sy))


def _gains(relevances: np.ndarray, exponential: bool) -> np.ndarray:
    return np.power(2.0, relevances) - 1.0 if exponential else relevances


def ndcg_at_k(relevances: Sequence[float], k: int, *, exponential: bool = True) -> float:
    """NDCG@k over gold relevances listed in predicted rank order.

    Gain is 2^rel - 1 (set exponential=False for linear), discount
    log2(i+1). The caller sorts by its predictor; see ndcg_from_scores.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rel = np.asarray(relevances, dtype=np.float64)
    if rel.size == 0:
        raise ValueError("ndcg needs at least one item")
    if rel.min() < 0:
        raise ValueError("relevances must be nonnegative")
    if rel.max() <= 0:
        raise ValueError("ndcg is undefined when every relevance is zero")
    discounts = 1.0 / np.log2(np.arange(2, rel.size + 2, dtype=np.float64))
    top = min(k, rel.size)
    dcg = float(np.sum(_gains(rel[:top], exponential) * discounts[:top]))
    ideal = np.sort(rel)[::-1]
    idcg = float(np.sum(_gains(ideal[:top], exponential) * discounts[:top]))
    return dcg / idcg


def ndcg_from_scores(
    scores: Sequence[float], relevances: Sequence[float], k: int, *, exponential: bool = True
) -> float:
    """Sort by predicted score (descending, stable) and compute NDCG@k."""
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevances, dtype=np.float64)
    if scores.shape != rel.shape:
        raise ValueError(f"scores and relevances differ in shape: {scores.shape} vs {rel.shape}")
    order = np.argsort(-scores, kind="stable")
    return ndcg_at_k(rel[order], k, exponential=exponential)


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class RougeScores:
    """ROUGE-1/2/L precision, recall and f1 for one candidate."""

    rouge1: Prf
    rouge2: Prf
    rougeL: Prf
    per_reference: tuple["RougeScores", ...] | None = None

    def to_dict(self) -> dict:
        doc = {
            "rouge1": self.rouge1.to_dict(),
            "rouge2": self.rouge2.to_dict(),
            "rougeL": self.rougeL.to_dict(),
        }
        if self.per_reference is not None:
            doc["per_reference"] = [r.to_dict() for r in self.per_reference]
        return doc


_ZERO_PRF = Prf(0.0, 0.0, 0.0)


def _prf(matches: int, n_candidate: int, n_reference: int) -> Prf:
    p = matches / n_candidate if n_candidate else 0.0
    r = matches / n_reference if n_reference else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Prf(p, r, f)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_overlap(candidate: Counter, reference: Counter) -> int:
    return sum(min(count, reference[gram]) for gram, count in candidate.items())


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def _rouge_single(cand: list[str], ref: list[str]) -> RougeScores:
    r1 = _prf(_clipped_overlap(_ngrams(cand, 1), _ngrams(ref, 1)), len(cand), len(ref))
    n2_cand = max(0, len(cand) - 1)
    n2_ref = max(0, len(ref) - 1)
    r2 = _prf(_clipped_overlap(_ngrams(cand, 2), _ngrams(ref, 2)), n2_cand, n2_ref)
    rl = _prf(_lcs_length(cand, ref), len(cand), len(ref))
    return RougeScores(r1, r2, rl)


def rouge(candidate: str, references: Sequence[str], aggregate: str = "max") -> RougeScores:
    """ROUGE-1/2/L of a candidate against one or more references.

    Multi-reference scores take, per variant, the reference with the best
    f1 (aggregate="max") or the component-wise mean ("average"); the
    per-reference scores are attached either way. An empty candidate
    scores zero everywhere; an input with no nonempty reference is an
    error.
    """
    if aggregate not in ("max", "average"):
        raise ValueError(f"aggregate must be 'max' or 'average', got {aggregate!r}")
    ref_tokens = [tokenize(r, _ROUGE_TOKENS) for r in references]
    ref_tokens = [t for t in ref_tokens if t]
    if not ref_tokens:
        raise ValueError("rouge needs at least one nonempty reference")
    cand_tokens = tokenize(candidate, _ROUGE_TOKENS)
    per_ref = tuple(_rouge_single(cand_tokens, ref) for ref in ref_tokens)
    if aggregate == "max":
        pick = lambda variant: max((getattr(r, variant) for r in per_ref), key=lambda s: s.f1)
        chosen = {v: pick(v) for v in ("rouge1", "rouge2", "rougeL")}
    else:
        chosen = {}
        for variant in ("rouge1", "rouge2", "rougeL"):
            parts = [getattr(r, variant) for r in per_ref]
            chosen[variant] = Prf(
                float(np.mean([s.precision for s in parts])),
                float(np.mean([s.recall for s in parts])),
                float(np.mean([s.f1 for s in parts])),
            )
    return RougeScores(chosen["rouge1"], chosen["rouge2"], chosen["rougeL"], per_ref)


def precision_at_k_curve(
    pairs: Sequence[tuple[Mapping[str, float], int]],
    methods: Sequence[str] | None = None,
    k_max: int | None = None,
) -> dict[str, np.ndarray]:
    """Precision@K series per scoring method over labeled pairs.

    Each pair carries one similarity score per method plus a binary gold
    label. Pairs are sorted per method by score descending with a stable
    sort, so ties keep input order.
    """
    if not pairs:
        raise ValueError("precision_at_k_curve needs at least one pair")
    labels = np.array([label for _, label in pairs], dtype=np.int64)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if methods is None:
        methods = list(pairs[0][0].keys())
    if k_max is None:
        k_max = len(pairs)
    if not 1 <= k_max <= len(pairs):
        raise ValueError(f"k_max must be in [1, {len(pairs)}], got {k_max}")
    curves: dict[str, np.ndarray] = {}
    for method in methods:
        scores = np.array([float(scores_map[method]) for scores_map, _ in pairs])
        order = np.argsort(-scores, kind="stable")
        hits = np.cumsum(labels[order][:k_max])
        curves[method] = hits / np.arange(1, k_max + 1, dtype=np.float64)
    return curves


def curve_to_csv(curves: Mapping[str, np.ndarray]) -> str:
    """Render precision@K curves as CSV: k, then one column per method."""
    methods = list(curves.keys())
    if not methods:
        raise ValueError("no curves to render")
    length = len(next(iter(curves.values())))
    lines = ["k," + ",".join(methods)]
    for i in range(length):
        row = ",".join(repr(float(curves[m][i])) for m in methods)
        lines.append(f"{i + 1},{row}")
    return "\n".join(lines) + "\n"


def bootstrap_ci(
    metric: Callable[[list], float],
    data: Sequence,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 42,
) -> float:
    """Percentile-bootstrap halfwidth of a metric over resampled data.

    ``metric`` receives a list of resampled rows. Seeded and reproducible;
    constant data gives halfwidth 0.
    """
    rows = list(data)
    if len(rows) < 10:
        raise ValueError(f"bootstrap needs >= 10 rows, got {len(rows)}")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, len(rows), size=(n_resamples, len(rows)))
    stats = np.array([metric([rows[i] for i in draw]) for draw in indices])
    lo = float(np.quantile(stats, (1 - level) / 2))
    hi = float(np.quantile(stats, (1 + level) / 2))
    return (hi - lo) / 2
