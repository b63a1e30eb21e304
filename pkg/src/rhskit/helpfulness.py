"""Sentence helpfulness regression.

A ridge regressor (intercept unpenalized) over either TF-IDF features or
externally supplied sentence embeddings. The solver is deterministic:
normal equations with a Cholesky factorization for dense feature
matrices, conjugate gradients with implicit centering for sparse ones.
Predictions are clamped to the [0, 2] rating scale for reporting while
the raw value is kept for metric work.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import InputError
from .textvec import SentenceEmbedding, TfidfModel

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

_SINGULAR_MSG = (
    "normal system is singular with lambda=0; pass a regularization strength lambda > 0"
)


class RidgeRegression(BaseEstimator, RegressorMixin):
    """Ridge regression with an unpenalized intercept.

    Minimizes sum((w.x_i + b - y_i)^2) + lam * ||w||^2. The intercept is
    handled by centering, which for sparse inputs is done implicitly so
    the feature matrix is never densified.

    Parameters
    ----------
    lam : regularization strength, >= 0.
    tol : relative residual tolerance for the sparse conjugate-gradient
        path.
    max_iter : optional iteration cap for conjugate gradients.
    """

    def __init__(self, lam: float = 1.0, tol: float = 1e-8, max_iter: int | None = None):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y) -> "RidgeRegression":
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        X, y = check_X_y(X, y, accept_sparse="csr", y_numeric=True)
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError(f"need at least 2 rows to fit, got {X.shape[0]}")
        if sp.issparse(X):
            coef = self._solve_sparse(X, y)
        else:
            coef = self._solve_dense(np.asarray(X, dtype=np.float64), y)
        self.coef_ = coef
        x_mean = np.asarray(X.mean(axis=0)).ravel()
        self.intercept_ = float(y.mean() - x_mean @ coef)
        self.n_features_in_ = X.shape[1]
        return self

    def _solve_dense(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        gram = Xc.T @ Xc
        if self.lam == 0 and self._centered_rank_deficient(X.shape, gram):
            raise ValueError(_SINGULAR_MSG)
        gram[np.diag_indices_from(gram)] += self.lam
        try:
            factor = scipy.linalg.cho_factor(gram)
        except scipy.linalg.LinAlgError as exc:
            if self.lam == 0:
                raise ValueError(_SINGULAR_MSG) from exc
            raise
        return scipy.linalg.cho_solve(factor, Xc.T @ yc)

    @staticmethod
    def _centered_rank_deficient(shape: tuple, gram: np.ndarray) -> bool:
        # Cholesky can squeak through an exactly singular gram on rounding
        # noise, so rank deficiency is checked explicitly when lam == 0.
        n, d = shape
        if d > n - 1:  # centering removes one dimension
            return True
        eigvals = np.linalg.eigvalsh(gram)
        return bool(eigvals[-1] <= 0 or eigvals[0] <= eigvals[-1] * 1e-12)

    def _solve_sparse(self, X: sp.csr_matrix, y: np.ndarray) -> np.ndarray:
        n, d = X.shape
        x_mean = np.asarray(X.mean(axis=0)).ravel()
        yc = y - y.mean()
        lam = self.lam

        def matvec(v: np.ndarray) -> np.ndarray:
            # t = Xc v; the centering never materializes Xc itself.
            t = X @ v - (x_mean @ v)
            return X.T @ t - x_mean * t.sum() + lam * v

        operator = LinearOperator((d, d), matvec=matvec, dtype=np.float64)
        # sum(yc) == 0, so the centering term of Xc^T yc vanishes.
        rhs = X.T @ yc
        solution, info = cg(operator, rhs, rtol=self.tol, atol=0.0, maxiter=self.max_iter)
        if info != 0:
            if self.lam == 0:
                raise ValueError(_SINGULAR_MSG)
            raise RuntimeError(f"conjugate gradients failed to converge (info={info})")
        return solution

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr")
        return np.asarray(X @ self.coef_).ravel() + self.intercept_


@dataclass(frozen=True)
class HelpfulnessPrediction:
    """Predicted helpfulness for one sentence; score is raw_score clamped
    to the [0, 2] rating scale."""

    sentence_id: str
    score: float
    raw_score: float


@dataclass
class RidgeModel:
    """A trained helpfulness model tied to one feature space."""

    feature_space: str
    weights: np.ndarray
    intercept: float
    lam: float
    tfidf: TfidfModel | None = None
    metadata: dict = field(default_factory=dict)


def train_ridge(
    features,
    targets: Sequence[float],
    lam: float = 1.0,
    *,
    feature_space: str = "tfidf",
    tfidf: TfidfModel | None = None,
) -> RidgeModel:
    """Fit the helpfulness ridge on feature rows and [0,2] target scores.

    ``tfidf`` must carry the fitted vectorizer when feature_space is
    "tfidf" so the model file can embed new sentences later; any other
    space takes its vectors from an embedding file at prediction time.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size and (targets.min() < 0.0 or targets.max() > 2.0):
        raise ValueError("targets must lie in [0, 2]")
    if feature_space == "tfidf":
        if tfidf is None:
            raise ValueError("feature_space 'tfidf' requires the fitted TfidfModel")
    elif tfidf is not None:
        raise ValueError("only the 'tfidf' feature space carries a TfidfModel")
    regressor = RidgeRegression(lam=lam).fit(features, targets)
    return RidgeModel(
        feature_space=feature_space,
        weights=regressor.coef_,
        intercept=regressor.intercept_,
        lam=lam,
        tfidf=tfidf,
    )


def _clamp(raw: float) -> float:
    return min(2.0, max(0.0, raw))


def predict_helpfulness(model: RidgeModel, embedding: SentenceEmbedding) -> HelpfulnessPrediction:
    """Score one embedded sentence with the trained model."""
    if embedding.space_id != model.feature_space:
        raise ValueError(
            f"embedding space {embedding.space_id!r} does not match model "
            f"feature space {model.feature_space!r}"
        )
    if embedding.dim != model.weights.shape[0]:
        raise ValueError(
            f"embedding dimension {embedding.dim} does not match model "
            f"dimension {model.weights.shape[0]}"
        )
    if sp.issparse(embedding.values):
        raw = float((embedding.values @ model.weights)[0]) + model.intercept
    else:
        raw = float(np.dot(embedding.values, model.weights)) + model.intercept
    return HelpfulnessPrediction(embedding.sentence_id, _clamp(raw), raw)


def predict_many(
    model: RidgeModel, embeddings: Iterable[SentenceEmbedding]
) -> list[HelpfulnessPrediction]:
    return [predict_helpfulness(model, e) for e in embeddings]


def predict_texts(
    model: RidgeModel, texts: Sequence[str], sentence_ids: Sequence[str] | None = None
) -> list[HelpfulnessPrediction]:
    """Convenience path for tfidf models: vectorize texts, then predict."""
    if model.tfidf is None:
        raise ValueError(
            "model has no vectorizer; embed the sentences in "
            f"{model.feature_space!r} and use predict_many"
        )
    if sentence_ids is None:
        sentence_ids = [f"t{i}" for i in range(len(texts))]
    matrix = model.tfidf.transform(texts)
    raw = np.asarray(matrix @ model.weights).ravel() + model.intercept
    return [
        HelpfulnessPrediction(sid, _clamp(float(r)), float(r))
        for sid, r in zip(sentence_ids, raw)
    ]


def filter_helpful(
    predictions: Sequence[HelpfulnessPrediction], floor: float = 1.0
) -> list[HelpfulnessPrediction]:
    """Keep predictions with score >= floor, preserving order."""
    return [p for p in predictions if p.score >= floor]


def lambda_grid(
    features,
    targets: Sequence[float],
    lams: Sequence[float],
    val_fraction: float = 0.2,
    seed: int = 42,
) -> tuple[float, list[tuple[float, float]]]:
    """Pick lambda by validation MSE on a seeded holdout split.

    Returns the best lambda (ties go to the smaller one) and the full
    (lambda, mse) table.
    """
    if not lams:
        raise ValueError("lams must be nonempty")
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[0]
    n_val = max(1, int(round(n * val_fraction)))
    if n - n_val < 2:
        raise ValueError(f"not enough rows ({n}) for a {val_fraction:.0%} validation split")
    order = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    results = []
    for lam in sorted(lams):
        regressor = RidgeRegression(lam=lam).fit(features[train_idx], targets[train_idx])
        residual = regressor.predict(features[val_idx]) - targets[val_idx]
        results.append((float(lam), float(np.mean(residual**2))))
    best = min(results, key=lambda pair: (pair[1], pair[0]))
    return best[0], results


def _timestamp() -> str:
    """Deterministic when SOURCE_DATE_EPOCH is set; 'unknown' otherwise,
    because identical invocations must produce identical bytes."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return "unknown"
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def save_model(model: RidgeModel, path: str | Path, trained_on: str = "") -> None:
    """Persist a model as versioned JSON; predictions survive the round
    trip exactly (floats are serialized at full precision)."""
    document: dict = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_space": model.feature_space,
        "lambda": model.lam,
        "intercept": model.intercept,
        "weights": [float(w) for w in model.weights],
        "metadata": {"trained_on": trained_on, "timestamp": _timestamp()},
    }
    if model.tfidf is not None:
        vocabulary = model.tfidf.vocabulary_
        document["vocabulary"] = {
            "terms": list(vocabulary.terms),
            "doc_freq": [int(c) for c in vocabulary.doc_freq],
            "n_docs": vocabulary.n_docs,
        }
        document["tokenizer"] = {
            "lowercase": model.tfidf.lowercase,
            "min_token_chars": model.tfidf.min_token_chars,
            "min_df": model.tfidf.min_df,
            "max_features": model.tfidf.max_features,
        }
    else:
        document["tokenizer"] = {
            "lowercase": True,
            "min_token_chars": 2,
            "min_df": 1,
            "max_features": None,
        }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def load_model(path: str | Path) -> RidgeModel:
    """Load a model file written by save_model."""
    with open(path, encoding="utf-8") as handle:
        try:
            document = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InputError(f"not a JSON model file: {exc.msg}", path=str(path)) from exc
    version = document.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise InputError(
            f"unsupported model format_version {version!r} "
            f"(this build reads {MODEL_FORMAT_VERSION})",
            path=str(path),
        )
    feature_space = document["feature_space"]
    tfidf = None
    if feature_space == "tfidf":
        vocabulary = document["vocabulary"]
        tokenizer = document.get("tokenizer", {})
        tfidf = TfidfModel.from_state(
            terms=vocabulary["terms"],
            doc_freq=vocabulary["doc_freq"],
            n_docs=vocabulary["n_docs"],
            params=tokenizer,
            space_id="tfidf",
        )
    return RidgeModel(
        feature_space=feature_space,
        weights=np.asarray(document["weights"], dtype=np.float64),
        intercept=float(document["intercept"]),
        lam=float(document["lambda"]),
        tfidf=tfidf,
        metadata=dict(document.get("metadata", {})),
    )
