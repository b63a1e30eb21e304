"""Command-line entry point.

One binary, subcommand style. Outputs are machine-first (JSON or CSV,
deterministic byte-for-byte given identical inputs and flags) and every
subcommand writes a sidecar run-manifest with input/output digests next
to its output file. Exit codes: 0 success, 1 usage, 2 input or parse
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .annostats import (
    VoteMatrix,
    annotator_vs_rest_agreement,
    contrast_sets,
    internal_consistency,
    length_helpfulness_correlation,
    score_distribution,
    sentiment_helpfulness_probs,
    split_half_agreement,
    vote_convergence_curve,
)
from .corpus import (
    LengthBounds,
    load_annotated_dataset,
    load_reviews,
    preprocess_review,
)
from .errors import InputError, TransportError, UsageError
from .evalmetrics import (
    MetricReport,
    bootstrap_ci,
    curve_to_csv,
    mse,
    ndcg_from_scores,
    pearson,
    precision_at_k_curve,
    reports_to_csv,
    rouge,
)
from .helpfulness import load_model, predict_many, predict_texts, save_model, train_ridge
from .rhs import SelectionConfig, SupportConfig, fit_alpha, select_rhs
from .sentiment import LexiconSentimentProvider, RemoteSentimentProvider
from .textvec import (
    IdfBowEmbedder,
    PrefitEmbedder,
    StoreEmbedder,
    TfidfModel,
    cosine_similarity,
    load_precomputed_embeddings,
)

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exits."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# small IO helpers


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory plus atomic rename, so
    a failed run never leaves a partial output behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _dump_json(obj, pretty: bool) -> str:
    if pretty:
        return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def _dump_jsonl(objs, pretty: bool) -> str:
    # JSONL stays one-record-per-line even in pretty mode; only key order
    # and spacing inside a line are affected.
    sep = (", ", ": ") if pretty else (",", ":")
    return "".join(
        json.dumps(o, ensure_ascii=False, sort_keys=True, separators=sep) + "\n" for o in objs
    )


def _csv_sibling(path: Path) -> Path:
    return path.with_suffix(".csv") if path.suffix != ".csv" else path.with_suffix(".data.csv")


def _write_manifest(args, inputs: list[Path], outputs: list[Path]) -> None:
    """Sidecar run-manifest: flags, digests, versions. No timestamps, so
    identical runs produce identical manifests."""
    output = Path(args.output)
    options = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func", "command") and not key.startswith("_")
    }
    manifest = {
        "command": args.command,
        "package": "rhskit",
        "version": __version__,
        "options": {k: (str(v) if isinstance(v, Path) else v) for k, v in options.items()},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
    }
    _atomic_write(
        Path(str(output) + ".manifest.json"),
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )


def _errors_payload(errors) -> str:
    return "".join(
        json.dumps({"line_no": e.line_no, "reason": e.reason}, sort_keys=True) + "\n"
        for e in errors
    )


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid JSON: {exc.msg}", line_no=line_no, path=str(path))
            if not isinstance(record, dict):
                raise InputError("record is not a JSON object", line_no=line_no, path=str(path))
            records.append((line_no, record))
    return records


# ---------------------------------------------------------------------------
# shared flag groups


def _add_map_flag(parser) -> None:
    parser.add_argument(
        "--map",
        action="append",
        default=[],
        metavar="CANONICAL=ACTUAL",
        help="rename an input field (repeatable), e.g. --map text=body",
    )


def _parse_field_map(pairs: list[str]) -> dict[str, str] | None:
    if not pairs:
        return None
    mapping = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--map expects CANONICAL=ACTUAL, got {pair!r}")
        canonical, actual = pair.split("=", 1)
        if not canonical or not actual:
            raise UsageError(f"--map expects CANONICAL=ACTUAL, got {pair!r}")
        mapping[canonical] = actual
    return mapping


def _add_length_flags(parser) -> None:
    parser.add_argument("--min-chars", type=int, default=30, help="minimum sentence length")
    parser.add_argument("--max-chars", type=int, default=200, help="maximum sentence length")


def _bounds(args) -> LengthBounds:
    try:
        return LengthBounds(args.min_chars, args.max_chars)
    except ValueError as exc:
        raise UsageError(str(exc))


def _add_provider_flags(parser) -> None:
    parser.add_argument(
        "--provider", choices=("lexicon", "remote"), default="lexicon", help="sentiment source"
    )
    parser.add_argument("--remote-url", default=None, help="URL of a remote sentiment service")


def _provider(args):
    if args.provider == "remote":
        if not args.remote_url:
            raise UsageError("--provider remote requires --remote-url")
        return RemoteSentimentProvider(args.remote_url)
    return LexiconSentimentProvider()


def _add_embeddings_flag(parser, default="idf-bow") -> None:
    parser.add_argument(
        "--embeddings",
        default=default,
        help="similarity space: 'idf-bow', 'tfidf' (the model's space), or an embedding file",
    )


def _embedder(args, model=None, inputs: list[Path] | None = None):
    value = args.embeddings
    if value == "idf-bow":
        return IdfBowEmbedder()
    if value == "tfidf":
        if model is None or model.tfidf is None:
            raise UsageError("--embeddings tfidf needs a model trained in the tfidf space")
        return PrefitEmbedder(model.tfidf)
    store = load_precomputed_embeddings(value)
    if inputs is not None:
        inputs.append(Path(value))
    return StoreEmbedder(store)


def _positive_int_list(raw: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated integer list, got {raw!r}")
    if not values or min(values) < 1:
        raise UsageError(f"{flag} expects positive integers, got {raw!r}")
    return values


def _float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated number list, got {raw!r}")
    if not values:
        raise UsageError(f"{flag} expects at least one number")
    return values


def _load_annotated_or_die(path, field_map):
    annotated, errors = load_annotated_dataset(path, field_map)
    if not annotated:
        raise InputError("no usable records in the annotated dataset", path=str(path))
    return annotated, errors


def _predictions_by_id(args, texts_by_id: dict[str, str], inputs: list[Path]) -> dict[str, float]:
    """Raw model scores keyed by sentence id, from either a predictions
    file or a model applied to the given texts."""
    if getattr(args, "predictions", None):
        path = Path(args.predictions)
        inputs.append(path)
        predictions = {}
        for line_no, record in _read_jsonl(path):
            sid = record.get("sentence_id")
            value = record.get("raw_score", record.get("score"))
            if not isinstance(sid, str) or not isinstance(value, (int, float)):
                raise InputError(
                    "prediction records need sentence_id and score",
                    line_no=line_no,
                    path=str(path),
                )
            predictions[sid] = float(value)
        return predictions
    if getattr(args, "model", None):
        model_path = Path(args.model)
        inputs.append(model_path)
        model = load_model(model_path)
        ids = list(texts_by_id)
        scored = predict_texts(model, [texts_by_id[i] for i in ids], ids)
        return {p.sentence_id: p.raw_score for p in scored}
    raise UsageError("need --predictions or --model")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args) -> None:
    field_map = _parse_field_map(args.map)
    bounds = _bounds(args)
    in_path, out_path = Path(args.input), Path(args.output)
    reviews, errors = load_reviews(in_path, field_map)
    rows = []
    for review in reviews:
        for sentence in preprocess_review(review, bounds):
            rows.append(
                {
                    "sentence_id": sentence.sentence_id,
                    "review_id": sentence.review_id,
                    "product_id": sentence.product_id,
                    "text": sentence.text,
                    "char_len": sentence.char_len,
                }
            )
    errors_path = Path(str(out_path) + ".errors.jsonl")
    _atomic_write(out_path, _dump_jsonl(rows, args.pretty))
    _atomic_write(errors_path, _errors_payload(errors))
    _write_manifest(args, [in_path], [out_path, errors_path])
    logger.info("ingest: %d reviews -> %d sentences (%d bad records)", len(reviews), len(rows), len(errors))


def _cmd_train(args) -> None:
    field_map = _parse_field_map(args.map)
    in_path, out_path = Path(args.input), Path(args.output)
    if args.ridge_lambda < 0:
        raise UsageError(f"--lambda must be >= 0, got {args.ridge_lambda}")
    annotated, errors = _load_annotated_or_die(in_path, field_map)
    texts = [a.sentence.text for a in annotated]
    targets = [a.helpfulness for a in annotated]
    vectorizer = TfidfModel(space_id="tfidf").fit(texts)
    model = train_ridge(
        vectorizer.transform(texts), targets, lam=args.ridge_lambda, tfidf=vectorizer
    )
    save_model(model, out_path, trained_on=in_path.name)
    errors_path = Path(str(out_path) + ".errors.jsonl")
    _atomic_write(errors_path, _errors_payload(errors))
    _write_manifest(args, [in_path], [out_path, errors_path])
    logger.info(
        "train: %d sentences, %d features, lambda=%g",
        len(annotated),
        model.weights.shape[0],
        args.ridge_lambda,
    )


def _load_scoring_rows(path: Path, field_map) -> tuple[list[str], list[str]]:
    """Read (ids, texts) from either ingest output or an annotated file."""
    ids: list[str] = []
    texts: list[str] = []
    for line_no, record in _read_jsonl(path):
        resolved = dict(record)
        if field_map:
            for canonical, actual in field_map.items():
                if actual in record:
                    resolved[canonical] = record[actual]
        text = resolved.get("text", resolved.get("sentence"))
        if not isinstance(text, str) or not text.strip():
            raise InputError("record has no text/sentence field", line_no=line_no, path=str(path))
        sid = resolved.get("sentence_id")
        ids.append(sid if isinstance(sid, str) and sid else f"line-{line_no}")
        texts.append(text)
    if not texts:
        raise InputError("no records to score", path=str(path))
    return ids, texts


def _cmd_score(args) -> None:
    field_map = _parse_field_map(args.map)
    in_path, out_path, model_path = Path(args.input), Path(args.output), Path(args.model)
    model = load_model(model_path)
    ids, texts = _load_scoring_rows(in_path, field_map)
    inputs = [in_path, model_path]
    if model.feature_space == "tfidf":
        predictions = predict_texts(model, texts, ids)
    else:
        if args.embeddings in ("idf-bow", "tfidf"):
            raise UsageError(
                f"model in space {model.feature_space!r} needs --embeddings <file> "
                "with vectors for the scored sentences"
            )
        store = load_precomputed_embeddings(args.embeddings)
        inputs.append(Path(args.embeddings))
        if store.space_id != model.feature_space:
            raise InputError(
                f"embedding file space {store.space_id!r} does not match model "
                f"space {model.feature_space!r}"
            )
        embedder = StoreEmbedder(store)
        from .corpus import Sentence  # local: only to carry ids into the store lookup

        shells = [Sentence(i, None, None, t, len(t)) for i, t in zip(ids, texts)]
        predictions = predict_many(model, embedder.build(shells))
    rows = [
        {"sentence_id": p.sentence_id, "score": p.score, "raw_score": p.raw_score}
        for p in predictions
    ]
    _atomic_write(out_path, _dump_jsonl(rows, args.pretty))
    _write_manifest(args, inputs, [out_path])
    logger.info("score: %d sentences", len(rows))


def _cmd_extract(args) -> None:
    field_map = _parse_field_map(args.map)
    bounds = _bounds(args)
    in_path, out_path, model_path = Path(args.input), Path(args.output), Path(args.model)
    try:
        support_cfg = SupportConfig(sigma=args.sigma, min_support=args.min_support)
        selection_cfg = SelectionConfig(alpha=args.alpha)
    except ValueError as exc:
        raise UsageError(str(exc))
    model = load_model(model_path)
    provider = _provider(args)
    inputs = [in_path, model_path]
    embedder = _embedder(args, model, inputs)
    reviews, errors = load_reviews(in_path, field_map)

    by_product: dict[str, list] = {}
    for review in reviews:
        by_product.setdefault(review.product_id, []).append(review)

    def run(product_id: str):
        # Workers parallelize across products, so each product's own
        # support computation stays single-threaded.
        return select_rhs(
            by_product[product_id],
            model,
            provider,
            embedder,
            support_cfg,
            selection_cfg,
            bounds=bounds,
            helpful_floor=args.helpful_floor,
            workers=1,
            product_id=product_id,
        )

    product_ids = list(by_product)
    if args.workers > 1 and len(product_ids) > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run, product_ids))
    else:
        results = [run(pid) for pid in product_ids]
    if not results:
        # An empty review file still yields a well-formed, empty result.
        from .rhs import Diagnostics, RhsResult

        results = [RhsResult(None, None, None, Diagnostics())]
    rows = [r.to_json_dict(supporters_top_k=args.supporters) for r in results]
    errors_path = Path(str(out_path) + ".errors.jsonl")
    _atomic_write(out_path, _dump_jsonl(rows, args.pretty))
    _atomic_write(errors_path, _errors_payload(errors))
    _write_manifest(args, inputs, [out_path, errors_path])
    found = sum(1 for r in results if r.positive or r.negative)
    logger.info("extract: %d products, %d with at least one RHS", len(results), found)


def _cmd_eval_helpfulness(args) -> None:
    field_map = _parse_field_map(args.map)
    in_path, out_path = Path(args.input), Path(args.output)
    annotated, _ = _load_annotated_or_die(in_path, field_map)
    inputs = [in_path]
    texts_by_id = {a.sentence.sentence_id: a.sentence.text for a in annotated}
    predictions = _predictions_by_id(args, texts_by_id, inputs)
    missing = [a.sentence.sentence_id for a in annotated if a.sentence.sentence_id not in predictions]
    if missing:
        raise InputError(
            f"{len(missing)} gold sentences have no prediction (first: {missing[0]!r})"
        )
    gold = [a.helpfulness for a in annotated]
    pred = [predictions[a.sentence.sentence_id] for a in annotated]
    if args.clamped:
        pred = [min(2.0, max(0.0, p)) for p in pred]

    reports = []
    pairs = list(zip(pred, gold))
    mse_value = mse(pred, gold)
    pearson_value = pearson(pred, gold)
    ci_mse = ci_pearson = None
    if args.bootstrap > 0:
        ci_mse = bootstrap_ci(
            lambda rows: mse([p for p, _ in rows], [g for _, g in rows]),
            pairs,
            n_resamples=args.bootstrap,
            seed=args.seed,
        )
        ci_pearson = bootstrap_ci(
            lambda rows: pearson([p for p, _ in rows], [g for _, g in rows]),
            pairs,
            n_resamples=args.bootstrap,
            seed=args.seed,
        )
    reports.append(MetricReport("mse", mse_value, n=len(gold), ci_halfwidth=ci_mse))
    reports.append(MetricReport("pearson", pearson_value, n=len(gold), ci_halfwidth=ci_pearson))

    # NDCG per product when product ids exist; otherwise one global list.
    groups: dict = {}
    for a, p in zip(annotated, pred):
        groups.setdefault(a.sentence.product_id, []).append((p, a.helpfulness))
    ndcg_values = []
    for rows in groups.values():
        rels = [g for _, g in rows]
        if max(rels) <= 0:
            continue
        ndcg_values.append(
            ndcg_from_scores([p for p, _ in rows], rels, args.ndcg_k)
        )
    if not ndcg_values:
        raise InputError("ndcg undefined: every group has all-zero relevance")
    reports.append(
        MetricReport(
            f"ndcg@{args.ndcg_k}",
            float(sum(ndcg_values) / len(ndcg_values)),
            n=len(ndcg_values),
            k=args.ndcg_k,
        )
    )
    document = {"n": len(gold), "clamped": bool(args.clamped), "metrics": [r.to_dict() for r in reports]}
    csv_path = _csv_sibling(out_path)
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, reports_to_csv(reports))
    _write_manifest(args, inputs, [out_path, csv_path])
    for r in reports:
        logger.info("eval-helpfulness: %s = %.4f", r.name, r.value)


def _cmd_eval_ranking(args) -> None:
    in_path, out_path = Path(args.input), Path(args.output)
    k_values = _positive_int_list(args.k, "--k")
    groups: dict = {}
    for line_no, record in _read_jsonl(in_path):
        if "score" not in record or "relevance" not in record:
            raise InputError("records need score and relevance", line_no=line_no, path=str(in_path))
        groups.setdefault(record.get("group"), []).append(
            (float(record["score"]), float(record["relevance"]))
        )
    if not groups:
        raise InputError("no ranking records", path=str(in_path))
    reports = []
    for k in k_values:
        values = []
        for rows in groups.values():
            rels = [r for _, r in rows]
            if max(rels) <= 0:
                continue
            values.append(
                ndcg_from_scores([s for s, _ in rows], rels, k, exponential=not args.linear_gain)
            )
        if not values:
            raise InputError("ndcg undefined: every group has all-zero relevance")
        reports.append(
            MetricReport(f"ndcg@{k}", float(sum(values) / len(values)), n=len(values), k=k)
        )
    document = {"n_groups": len(groups), "metrics": [r.to_dict() for r in reports]}
    csv_path = _csv_sibling(out_path)
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, reports_to_csv(reports))
    _write_manifest(args, [in_path], [out_path, csv_path])


def _cmd_eval_rouge(args) -> None:
    in_path, out_path = Path(args.input), Path(args.output)
    records = []
    for line_no, record in _read_jsonl(in_path):
        candidate = record.get("candidate")
        references = record.get("references")
        if not isinstance(candidate, str) or not isinstance(references, list) or not references:
            raise InputError(
                "records need candidate and nonempty references",
                line_no=line_no,
                path=str(in_path),
            )
        records.append((candidate, [str(r) for r in references]))
    if not records:
        raise InputError("no rouge records", path=str(in_path))
    scored = [rouge(c, refs, aggregate=args.aggregate) for c, refs in records]
    variants = ("rouge1", "rouge2", "rougeL")
    means = {
        v: {
            stat: float(
                sum(getattr(getattr(s, v), stat) for s in scored) / len(scored)
            )
            for stat in ("precision", "recall", "f1")
        }
        for v in variants
    }
    document = {
        "n": len(scored),
        "aggregate": args.aggregate,
        "mean": means,
        "per_record": [s.to_dict() for s in scored],
    }
    lines = ["record,variant,precision,recall,f1"]
    for i, s in enumerate(scored):
        for v in variants:
            prf = getattr(s, v)
            lines.append(f"{i},{v},{prf.precision!r},{prf.recall!r},{prf.f1!r}")
    for v in variants:
        m = means[v]
        lines.append(f"mean,{v},{m['precision']!r},{m['recall']!r},{m['f1']!r}")
    csv_path = _csv_sibling(out_path)
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    _write_manifest(args, [in_path], [out_path, csv_path])


def _cmd_eval_similarity(args) -> None:
    in_path, out_path = Path(args.input), Path(args.output)
    pairs = []
    for line_no, record in _read_jsonl(in_path):
        label = record.get("label")
        scores = record.get("scores")
        if label not in (0, 1) or not isinstance(scores, dict) or not scores:
            raise InputError(
                "records need a 0/1 label and a scores object",
                line_no=line_no,
                path=str(in_path),
            )
        pairs.append(({k: float(v) for k, v in scores.items()}, int(label)))
    if not pairs:
        raise InputError("no labeled pairs", path=str(in_path))
    k_max = args.k_max if args.k_max else len(pairs)
    try:
        curves = precision_at_k_curve(pairs, k_max=k_max)
    except ValueError as exc:
        raise InputError(str(exc), path=str(in_path))
    document = {
        "n": len(pairs),
        "k_max": k_max,
        "precision_at_k": {m: [float(v) for v in series] for m, series in curves.items()},
    }
    json_path = Path(str(out_path) + ".json") if out_path.suffix == ".csv" else _csv_sibling(out_path)
    # The curve itself is the primary output (CSV); JSON rides sidecar.
    if out_path.suffix == ".csv":
        _atomic_write(out_path, curve_to_csv(curves))
        _atomic_write(json_path, _dump_json(document, args.pretty))
        outputs = [out_path, json_path]
    else:
        _atomic_write(out_path, _dump_json(document, args.pretty))
        _atomic_write(json_path, curve_to_csv(curves))
        outputs = [out_path, json_path]
    _write_manifest(args, [in_path], outputs)


def _cmd_fit_alpha(args) -> None:
    in_path, out_path = Path(args.input), Path(args.output)
    groups: dict = {}
    for line_no, record in _read_jsonl(in_path):
        try:
            triple = (
                float(record["support"]),
                float(record["helpfulness"]),
                float(record["annotated"]),
            )
        except (KeyError, TypeError, ValueError):
            raise InputError(
                "records need numeric support, helpfulness, annotated",
                line_no=line_no,
                path=str(in_path),
            )
        groups.setdefault(record.get("group"), []).append(triple)
    if not groups:
        raise InputError("no annotation records", path=str(in_path))
    alpha = fit_alpha(list(groups.values()))
    document = {"alpha": alpha, "n_groups": len(groups)}
    csv_path = _csv_sibling(out_path)
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, f"key,value\nalpha,{alpha!r}\nn_groups,{len(groups)}\n")
    _write_manifest(args, [in_path], [out_path, csv_path])
    logger.info("fit-alpha: alpha = %.4f over %d groups", alpha, len(groups))


def _cmd_calibrate_sigma(args) -> None:
    import numpy as np

    in_path, out_path = Path(args.input), Path(args.output)
    if not 0 < args.target_precision <= 1:
        raise UsageError(f"--target-precision must be in (0, 1], got {args.target_precision}")
    rows = []
    for line_no, record in _read_jsonl(in_path):
        a, b, label = record.get("text_a"), record.get("text_b"), record.get("label")
        if not isinstance(a, str) or not isinstance(b, str) or label not in (0, 1):
            raise InputError(
                "records need text_a, text_b and a 0/1 label",
                line_no=line_no,
                path=str(in_path),
            )
        rows.append((a, b, int(label)))
    if len(rows) < 4:
        raise InputError("need at least 4 labeled pairs to calibrate", path=str(in_path))
    inputs = [in_path]
    embedder = _embedder(args, None, inputs)
    texts = [t for a, b, _ in rows for t in (a, b)]
    embeddings = embedder.build(texts)
    sims = np.array(
        [
            cosine_similarity(embeddings[2 * i], embeddings[2 * i + 1])
            for i in range(len(rows))
        ]
    )
    labels = np.array([label for _, _, label in rows])

    order = np.random.default_rng(args.seed).permutation(len(rows))
    half = len(rows) // 2
    calib, hold = order[:half], order[half:]

    def precision_recall(indices, sigma: float) -> tuple[float, float]:
        predicted = sims[indices] > sigma
        truth = labels[indices] == 1
        tp = int(np.sum(predicted & truth))
        fp = int(np.sum(predicted & ~truth))
        fn = int(np.sum(~predicted & truth))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        return precision, recall

    candidates = sorted(set(float(s) for s in sims[calib])) + [-1.0]
    best = None
    for sigma in sorted(candidates):
        precision, recall = precision_recall(calib, sigma)
        if precision >= args.target_precision:
            best = (sigma, precision, recall)
            break
    if best is None:
        raise InputError(
            f"no threshold reaches precision {args.target_precision} on the calibration split"
        )
    sigma, calib_precision, calib_recall = best
    hold_precision, hold_recall = precision_recall(hold, sigma)
    document = {
        "sigma": sigma,
        "target_precision": args.target_precision,
        "calibration": {"n": int(half), "precision": calib_precision, "recall": calib_recall},
        "holdout": {
            "n": int(len(rows) - half),
            "precision": hold_precision,
            "recall": hold_recall,
            "met_target": hold_precision >= args.target_precision,
        },
    }
    csv_path = _csv_sibling(out_path)
    csv = (
        "key,value\n"
        f"sigma,{sigma!r}\n"
        f"calibration_precision,{calib_precision!r}\n"
        f"calibration_recall,{calib_recall!r}\n"
        f"holdout_precision,{hold_precision!r}\n"
        f"holdout_recall,{hold_recall!r}\n"
    )
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, csv)
    _write_manifest(args, inputs, [out_path, csv_path])
    logger.info(
        "calibrate-sigma: sigma=%.4f holdout precision=%.3f recall=%.3f",
        sigma,
        hold_precision,
        hold_recall,
    )


# ---------------------------------------------------------------------------
# analyze subcommands


def _analysis_output(args, document: dict, csv_text: str, inputs: list[Path]) -> None:
    out_path = Path(args.output)
    csv_path = _csv_sibling(out_path)
    _atomic_write(out_path, _dump_json(document, args.pretty))
    _atomic_write(csv_path, csv_text)
    _write_manifest(args, inputs, [out_path, csv_path])


def _cmd_analyze(args) -> None:
    handler = {
        "agreement": _analyze_agreement,
        "split-half": _analyze_split_half,
        "vote-curve": _analyze_vote_curve,
        "consistency": _analyze_consistency,
        "contrast": _analyze_contrast,
        "length": _analyze_length,
        "sentiment-probs": _analyze_sentiment_probs,
        "distribution": _analyze_distribution,
    }[args.analysis]
    handler(args)


def _votes_from_input(args, inputs: list[Path]) -> VoteMatrix:
    in_path = Path(args.input)
    inputs.append(in_path)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    votes = VoteMatrix.from_annotated(annotated)
    if not votes.rows:
        raise InputError("dataset has no per-annotator ratings", path=str(in_path))
    return votes


def _analyze_agreement(args) -> None:
    inputs: list[Path] = []
    votes = _votes_from_input(args, inputs)
    result = annotator_vs_rest_agreement(votes, trim_fraction=args.trim)
    lines = ["annotator,score,status"]
    for annotator in votes.annotators:
        if annotator in result.per_annotator:
            status = "trimmed" if annotator in result.trimmed else "kept"
            lines.append(f"{annotator},{result.per_annotator[annotator]!r},{status}")
        else:
            lines.append(f"{annotator},,excluded")
    _analysis_output(args, result.to_dict(), "\n".join(lines) + "\n", inputs)
    logger.info("agreement: mean %.4f over %d annotators", result.mean_agreement, len(result.per_annotator))


def _analyze_split_half(args) -> None:
    inputs: list[Path] = []
    votes = _votes_from_input(args, inputs)
    value = split_half_agreement(votes, seed=args.seed)
    _analysis_output(
        args,
        {"pearson": value, "seed": args.seed},
        f"key,value\npearson,{value!r}\n",
        inputs,
    )


def _analyze_vote_curve(args) -> None:
    inputs: list[Path] = []
    votes = _votes_from_input(args, inputs)
    in_path = Path(args.input)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    texts_by_id = {a.sentence.sentence_id: a.sentence.text for a in annotated}
    predictions = _predictions_by_id(args, texts_by_id, inputs)
    counts = _positive_int_list(args.votes, "--votes")
    curve = vote_convergence_curve(
        votes, predictions, counts, resamples=args.resamples, seed=args.seed
    )
    document = {
        "curve": [{"votes": v, "pearson": r} for v, r in curve],
        "resamples": args.resamples,
        "seed": args.seed,
    }
    csv_text = "votes,pearson\n" + "".join(f"{v},{r!r}\n" for v, r in curve)
    _analysis_output(args, document, csv_text, inputs)


def _analyze_consistency(args) -> None:
    inputs: list[Path] = []
    in_path = Path(args.input)
    inputs.append(in_path)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    embedder = _embedder(args, None, inputs)
    result = internal_consistency(annotated, embedder, args.group_sigma, seed=args.seed)
    csv_text = (
        "key,value\n"
        f"n_groups,{result.n_groups}\n"
        f"mean_group_std,{result.mean_group_std!r}\n"
        f"mean_random_std,{result.mean_random_std!r}\n"
        f"p_value,{result.test.p_value!r}\n"
    )
    _analysis_output(args, result.to_dict(), csv_text, inputs)


def _analyze_contrast(args) -> None:
    inputs: list[Path] = []
    in_path = Path(args.input)
    inputs.append(in_path)
    reviews, _ = load_reviews(in_path, _parse_field_map(args.map))
    if not reviews:
        raise InputError("no usable reviews", path=str(in_path))
    if args.scores:
        scores_path = Path(args.scores)
        inputs.append(scores_path)
        table = {}
        for line_no, record in _read_jsonl(scores_path):
            sid, value = record.get("sentence_id"), record.get("score")
            if not isinstance(sid, str) or not isinstance(value, (int, float)):
                raise InputError(
                    "score records need sentence_id and score",
                    line_no=line_no,
                    path=str(scores_path),
                )
            table[sid] = float(value)

        def score_fn(sentence):
            if sentence.sentence_id not in table:
                raise InputError(f"no score for sentence {sentence.sentence_id!r}")
            return table[sentence.sentence_id]

    elif args.model:
        model_path = Path(args.model)
        inputs.append(model_path)
        model = load_model(model_path)

        def score_fn(sentence):
            return predict_texts(model, [sentence.text], [sentence.sentence_id])[0].score

    else:
        raise UsageError("analyze contrast needs --model or --scores")
    thresholds = _float_list(args.thresholds, "--thresholds")
    result = contrast_sets(
        reviews,
        score_fn,
        helpful_floor=int(args.helpful_floor),
        sample_size=args.sample_size,
        score_thresholds=thresholds,
        bounds=_bounds(args),
        seed=args.seed,
    )
    lines = ["set,metric,value"]
    for name, stats in (("helpful", result.helpful), ("unhelpful", result.unhelpful)):
        lines.append(f"{name},n_reviews,{stats.n_reviews}")
        lines.append(f"{name},n_sentences,{stats.n_sentences}")
        lines.append(f"{name},mean_sentences_per_review,{stats.mean_sentences_per_review!r}")
        lines.append(f"{name},mean_score,{stats.mean_score!r}")
        for threshold, ratio in stats.above.items():
            lines.append(f"{name},ratio_above_{threshold},{ratio!r}")
    lines.append(f"test,student_p,{result.student.p_value!r}")
    lines.append(f"test,welch_p,{result.welch.p_value!r}")
    _analysis_output(args, result.to_dict(), "\n".join(lines) + "\n", inputs)


def _analyze_length(args) -> None:
    inputs: list[Path] = []
    in_path = Path(args.input)
    inputs.append(in_path)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    value = length_helpfulness_correlation(annotated)
    _analysis_output(
        args,
        {"pearson": value, "n": len(annotated)},
        f"key,value\npearson,{value!r}\n",
        inputs,
    )
    logger.info("length correlation: %.4f", value)


def _analyze_sentiment_probs(args) -> None:
    inputs: list[Path] = []
    in_path = Path(args.input)
    inputs.append(in_path)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    provider = _provider(args)
    result = sentiment_helpfulness_probs(annotated, provider, helpful_floor=args.helpful_floor)
    doc = result.to_dict()
    csv_text = (
        "key,value\n"
        f"p_helpful_given_sentiment,{'' if result.p_helpful_given_sentiment is None else repr(result.p_helpful_given_sentiment)}\n"
        f"p_sentiment_given_helpful,{'' if result.p_sentiment_given_helpful is None else repr(result.p_sentiment_given_helpful)}\n"
    )
    _analysis_output(args, doc, csv_text, inputs)


def _analyze_distribution(args) -> None:
    inputs: list[Path] = []
    in_path = Path(args.input)
    inputs.append(in_path)
    annotated, _ = _load_annotated_or_die(in_path, _parse_field_map(args.map))
    histogram = score_distribution([a.helpfulness for a in annotated], bin_width=args.bin_width)
    csv_text = "bin,count\n" + "".join(
        f"{start!r},{count}\n" for start, count in zip(histogram.bin_starts, histogram.counts)
    )
    _analysis_output(args, histogram.to_dict(), csv_text, inputs)
    logger.info("distribution: mode bin %.2f", histogram.mode_bin)


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rhskit",
        description="Representative Helpful Sentence extraction and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"rhskit {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    def common(sub, *, output=True):
        sub.add_argument("--input", required=True, help="input file")
        if output:
            sub.add_argument("--output", required=True, help="output file")
        sub.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed")
        sub.add_argument("--pretty", action="store_true", help="human-friendly JSON")

    sub = subparsers.add_parser("ingest", help="reviews -> preprocessed sentences")
    common(sub)
    _add_map_flag(sub)
    _add_length_flags(sub)
    sub.set_defaults(func=_cmd_ingest)

    sub = subparsers.add_parser("train", help="annotated dataset -> helpfulness model")
    common(sub)
    _add_map_flag(sub)
    sub.add_argument(
        "--lambda",
        dest="ridge_lambda",
        type=float,
        default=1.0,
        help="ridge regularization strength",
    )
    sub.set_defaults(func=_cmd_train)

    sub = subparsers.add_parser("score", help="model + sentences -> predictions")
    common(sub)
    _add_map_flag(sub)
    sub.add_argument("--model", required=True, help="model file from train")
    _add_embeddings_flag(sub, default="tfidf")
    sub.set_defaults(func=_cmd_score)

    sub = subparsers.add_parser("extract", help="reviews + model -> RHS per product")
    common(sub)
    _add_map_flag(sub)
    _add_length_flags(sub)
    _add_provider_flags(sub)
    _add_embeddings_flag(sub)
    sub.add_argument("--model", required=True, help="model file from train")
    sub.add_argument("--sigma", type=float, default=0.876, help="similarity threshold")
    sub.add_argument("--min-support", type=int, default=5, help="minimum support")
    sub.add_argument("--alpha", type=float, default=38.8, help="helpfulness boost exponent")
    sub.add_argument("--helpful-floor", type=float, default=1.0, help="helpfulness gate")
    sub.add_argument("--workers", type=int, default=1, help="parallel products")
    sub.add_argument("--supporters", type=int, default=5, help="supporters kept per result")
    sub.set_defaults(func=_cmd_extract)

    sub = subparsers.add_parser("eval-helpfulness", help="predictions vs gold scores")
    common(sub)
    _add_map_flag(sub)
    sub.add_argument("--model", default=None, help="model file (scores computed here)")
    sub.add_argument("--predictions", default=None, help="precomputed predictions JSONL")
    sub.add_argument("--ndcg-k", type=int, default=1, help="NDCG cutoff")
    sub.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples (0 = off)")
    sub.add_argument("--clamped", action="store_true", help="evaluate clamped scores")
    sub.set_defaults(func=_cmd_eval_helpfulness)

    sub = subparsers.add_parser("eval-ranking", help="ranked lists -> NDCG@K")
    common(sub)
    sub.add_argument("--k", default="1", help="comma-separated cutoffs, e.g. 1,10")
    sub.add_argument("--linear-gain", action="store_true", help="use linear instead of 2^rel-1")
    sub.set_defaults(func=_cmd_eval_ranking)

    sub = subparsers.add_parser("eval-rouge", help="candidates vs references -> ROUGE")
    common(sub)
    sub.add_argument("--aggregate", choices=("max", "average"), default="max")
    sub.set_defaults(func=_cmd_eval_rouge)

    sub = subparsers.add_parser("eval-similarity", help="labeled pairs -> precision@K curves")
    common(sub)
    sub.add_argument("--k-max", type=int, default=None, help="largest K (default: all pairs)")
    sub.set_defaults(func=_cmd_eval_similarity)

    sub = subparsers.add_parser("analyze", help="annotation and dataset statistics")
    sub.add_argument(
        "analysis",
        choices=(
            "agreement",
            "split-half",
            "vote-curve",
            "consistency",
            "contrast",
            "length",
            "sentiment-probs",
            "distribution",
        ),
    )
    common(sub)
    _add_map_flag(sub)
    _add_length_flags(sub)
    _add_provider_flags(sub)
    _add_embeddings_flag(sub)
    sub.add_argument("--trim", type=float, default=0.10, help="agreement: worst fraction dropped")
    sub.add_argument("--votes", default="1,5,10,20,25,30", help="vote-curve: counts to sample")
    sub.add_argument("--resamples", type=int, default=50, help="vote-curve: resamples per count")
    sub.add_argument("--predictions", default=None, help="predictions JSONL (vote-curve)")
    sub.add_argument("--model", default=None, help="model file (vote-curve, contrast)")
    sub.add_argument("--scores", default=None, help="sentence scores JSONL (contrast)")
    sub.add_argument("--group-sigma", type=float, default=0.5, help="consistency: similarity threshold")
    sub.add_argument("--helpful-floor", type=float, default=None, help="floor; default depends on analysis")
    sub.add_argument("--sample-size", type=int, default=500, help="contrast: sentences per set")
    sub.add_argument("--thresholds", default="1.0,1.5", help="contrast: score thresholds")
    sub.add_argument("--bin-width", type=float, default=0.1, help="distribution: bin width")
    sub.set_defaults(func=_cmd_analyze)

    sub = subparsers.add_parser("fit-alpha", help="annotated Pareto candidates -> alpha")
    common(sub)
    sub.set_defaults(func=_cmd_fit_alpha)

    sub = subparsers.add_parser("calibrate-sigma", help="labeled pairs -> similarity threshold")
    common(sub)
    _add_embeddings_flag(sub)
    sub.add_argument("--target-precision", type=float, default=0.9)
    sub.set_defaults(func=_cmd_calibrate_sigma)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("RHSKIT_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "analyze" and args.helpful_floor is None:
            args.helpful_floor = 50.0 if args.analysis == "contrast" else 1.5
        args.func(args)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (InputError, TransportError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - defensive
        logger.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
