"""rhskit: extract Representative Helpful Sentences from product reviews.

The pipeline ingests reviews, predicts per-sentence helpfulness with a
ridge regressor, gates by sentiment, computes similarity support, and
selects one positive and one negative representative sentence per
product. Evaluation metrics and annotation-reliability statistics ship
alongside, plus a `rhskit` command-line front end.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    AnnotatedSentence,
    LengthBounds,
    Review,
    Sentence,
    load_annotated_dataset,
    load_reviews,
    preprocess_review,
    split_sentences,
    strip_html,
)
from .errors import InputError, RhskitError, TransportError, UsageError
from .evalmetrics import (
    MetricReport,
    RougeScores,
    bootstrap_ci,
    mse,
    ndcg_at_k,
    ndcg_from_scores,
    pearson,
    precision_at_k_curve,
    rouge,
)
from .helpfulness import (
    HelpfulnessPrediction,
    RidgeModel,
    RidgeRegression,
    filter_helpful,
    load_model,
    predict_helpfulness,
    save_model,
    train_ridge,
)
from .rhs import (
    RhsResult,
    ScoredCandidate,
    SelectionConfig,
    SupportConfig,
    compute_support,
    fit_alpha,
    pareto_front,
    rank_candidates,
    select_rhs,
)
from .sentiment import (
    LexiconSentimentProvider,
    RemoteSentimentProvider,
    SentimentResult,
    classify_sentiment,
    partition_by_sentiment,
    sentiment_neutral_correlation,
)
from .textvec import (
    EmbeddingStore,
    SentenceEmbedding,
    TfidfModel,
    TokenizerConfig,
    build_idf_bow_embedder,
    build_tfidf_model,
    cosine_similarity,
    load_precomputed_embeddings,
    save_embeddings,
    tfidf_vectorize,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
