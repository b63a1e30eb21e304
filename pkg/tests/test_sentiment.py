"""Lexicon scoring, negation, the four-class contract, remote transport."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from rhskit.errors import TransportError
from rhskit.sentiment import (
    CLASS_ORDER,
    LexiconSentimentProvider,
    RemoteSentimentProvider,
    SentimentResult,
    classify_sentiment,
    make_result,
    partition_by_sentiment,
)

from conftest import make_sentence


@pytest.fixture(scope="module")
def lexicon():
    return LexiconSentimentProvider()


class TestLexiconScoring:
    def test_positive(self, lexicon):
        result = lexicon.classify("this is a great product")
        assert result.label == "positive"

    def test_negative(self, lexicon):
        assert lexicon.classify("terrible quality, awful fit").label == "negative"

    def test_no_hits_is_neutral_with_full_mass(self, lexicon):
        result = lexicon.classify("the box arrived on tuesday")
        assert result.label == "neutral"
        assert result.scores["neutral"] == pytest.approx(1.0)

    def test_mixed_when_both_polarities(self, lexicon):
        result = lexicon.classify("great screen but terrible battery")
        # p=1, n=1: e_pos = e_neg = 1/3, mixed = 2/3, neutral = 1/3;
        # renormalized, mixed carries the largest share (0.4).
        assert result.label == "mixed"
        assert result.scores["mixed"] == pytest.approx(0.4, abs=1e-12)
        assert result.scores["positive"] == pytest.approx(0.2, abs=1e-12)

    def test_single_hit_formula(self, lexicon):
        result = lexicon.classify("great stuff")
        # p=1, n=0: e_pos = 1/2, neutral = 1/2, others 0.
        assert result.scores["positive"] == pytest.approx(0.5, abs=1e-12)
        assert result.scores["neutral"] == pytest.approx(0.5, abs=1e-12)
        assert result.label == "positive"

    def test_scores_sum_to_one(self, lexicon):
        for text in (
            "great",
            "terrible",
            "great terrible great",
            "nothing at all",
            "not great but not terrible either",
        ):
            assert sum(lexicon.classify(text).scores.values()) == pytest.approx(1.0)

    def test_neutral_floor_present_with_many_hits(self, lexicon):
        result = lexicon.classify("great great great great great")
        assert result.scores["neutral"] > 0.0


class TestNegation:
    def test_not_flips_positive(self, lexicon):
        assert lexicon.classify("not great at all").label == "negative"

    def test_never_flips_within_window(self, lexicon):
        assert lexicon.classify("never a great experience").label == "negative"

    def test_nt_contraction_flips(self, lexicon):
        assert lexicon.classify("isn't great honestly").label == "negative"

    def test_window_expires_after_three_tokens(self, lexicon):
        flipped = lexicon.classify("not so very great")  # distance 3: flips
        out_of_range = lexicon.classify("not at all so very great")  # distance 5
        assert flipped.label == "negative"
        assert out_of_range.label == "positive"

    def test_negated_negative_counts_positive(self, lexicon):
        assert lexicon.classify("not terrible at all").label == "positive"

    def test_one_negator_consumes_one_hit(self, lexicon):
        # "not great ... great": the first hit flips, the second stands.
        result = lexicon.classify("not great but great")
        assert result.label == "mixed"


class TestResultContract:
    def test_class_order_fixed(self):
        assert CLASS_ORDER == ("positive", "negative", "neutral", "mixed")

    def test_make_result_normalizes(self):
        result = make_result({"positive": 2.0, "negative": 1.0, "neutral": 1.0, "mixed": 0.0})
        assert sum(result.scores.values()) == pytest.approx(1.0)
        assert result.label == "positive"

    def test_tie_breaks_by_class_order(self):
        result = make_result({"positive": 1.0, "negative": 1.0, "neutral": 0.0, "mixed": 0.0})
        assert result.label == "positive"
        result = make_result({"positive": 0.0, "negative": 1.0, "neutral": 1.0, "mixed": 1.0})
        assert result.label == "negative"

    def test_invalid_mass_rejected(self):
        with pytest.raises(ValueError):
            make_result({"positive": 0.0, "negative": 0.0, "neutral": 0.0, "mixed": 0.0})
        with pytest.raises(ValueError):
            make_result({"positive": float("nan"), "negative": 1, "neutral": 0, "mixed": 0})


class TestPartition:
    def test_split_and_discard_counts(self, lexicon):
        items = [
            make_sentence("s1", "a great product"),
            make_sentence("s2", "terrible battery"),
            make_sentence("s3", "arrived on a tuesday"),
            make_sentence("s4", "great but terrible"),
        ]
        partition = partition_by_sentiment(items, lexicon, text_of=lambda s: s.text)
        assert [s.sentence_id for s, _ in partition.positive] == ["s1"]
        assert [s.sentence_id for s, _ in partition.negative] == ["s2"]
        assert partition.n_neutral == 1 and partition.n_mixed == 1
        assert partition.n_discarded == 2


class _SentimentHandler(BaseHTTPRequestHandler):
    script = []  # mutated per test: list of ("status", payload) per call
    calls = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).calls.append(body)
        status, payload = self.script[min(len(self.calls) - 1, len(self.script) - 1)]
        if callable(payload):
            payload = payload(body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def _ok_payload(body):
    return {
        "results": [
            {
                "label": "positive",
                "scores": {"positive": 0.7, "negative": 0.1, "neutral": 0.1, "mixed": 0.1},
            }
            for _ in body["texts"]
        ]
    }


@pytest.fixture
def server():
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), _SentimentHandler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    _SentimentHandler.calls = []
    _SentimentHandler.script = [(200, _ok_payload)]
    try:
        yield f"http://127.0.0.1:{httpd.server_port}/classify"
    finally:
        httpd.shutdown()


class TestRemoteProvider:
    def test_round_trip(self, server):
        provider = RemoteSentimentProvider(server)
        result = classify_sentiment(provider, "whatever text")
        assert result.label == "positive"
        assert result.scores["positive"] == pytest.approx(0.7)
        assert _SentimentHandler.calls == [{"texts": ["whatever text"]}]

    def test_batching(self, server):
        provider = RemoteSentimentProvider(server, batch_size=2)
        results = provider.classify_batch(["a", "b", "c"])
        assert len(results) == 3
        assert [len(c["texts"]) for c in _SentimentHandler.calls] == [2, 1]

    def test_retry_on_500_then_success(self, server):
        _SentimentHandler.script = [(500, {"error": "boom"}), (200, _ok_payload)]
        provider = RemoteSentimentProvider(server, retry_wait=0.01)
        assert classify_sentiment(provider, "x").label == "positive"
        assert len(_SentimentHandler.calls) == 2

    def test_retry_on_429(self, server):
        _SentimentHandler.script = [(429, {}), (200, _ok_payload)]
        provider = RemoteSentimentProvider(server, retry_wait=0.01)
        assert classify_sentiment(provider, "x").label == "positive"

    def test_non_retryable_4xx_fails_fast(self, server):
        _SentimentHandler.script = [(404, {"error": "nope"})]
        provider = RemoteSentimentProvider(server, retry_wait=0.01)
        with pytest.raises(TransportError) as err:
            classify_sentiment(provider, "x")
        assert err.value.status == 404
        assert len(_SentimentHandler.calls) == 1

    def test_exhausted_retries_report_attempts(self, server):
        _SentimentHandler.script = [(500, {})]
        provider = RemoteSentimentProvider(server, max_attempts=3, retry_wait=0.01)
        with pytest.raises(TransportError) as err:
            classify_sentiment(provider, "x")
        assert err.value.attempts == 3

    def test_connection_refused_retries_then_fails(self):
        provider = RemoteSentimentProvider(
            "http://127.0.0.1:9/classify", max_attempts=2, retry_wait=0.01
        )
        with pytest.raises(TransportError) as err:
            classify_sentiment(provider, "x")
        assert err.value.attempts == 2

    def test_malformed_payload_rejected(self, server):
        _SentimentHandler.script = [(200, {"nope": []})]
        provider = RemoteSentimentProvider(server, retry_wait=0.01)
        with pytest.raises(TransportError):
            classify_sentiment(provider, "x")

    def test_result_count_mismatch_rejected(self, server):
        _SentimentHandler.script = [(200, {"results": []})]
        provider = RemoteSentimentProvider(server, retry_wait=0.01)
        with pytest.raises(TransportError):
            classify_sentiment(provider, "x")

    def test_scores_renormalized_and_label_checked(self, server, caplog):
        _SentimentHandler.script = [
            (
                200,
                {
                    "results": [
                        {
                            "label": "negative",  # disagrees with the scores
                            "scores": {
                                "positive": 2.0,
                                "negative": 1.0,
                                "neutral": 0.5,
                                "mixed": 0.5,
                            },
                        }
                    ]
                },
            )
        ]
        provider = RemoteSentimentProvider(server)
        with caplog.at_level("WARNING"):
            result = classify_sentiment(provider, "x")
        assert result.label == "positive"
        assert sum(result.scores.values()) == pytest.approx(1.0)
        assert any("label" in r.message for r in caplog.records)


def test_result_is_frozen():
    result = SentimentResult("positive", {c: 0.25 for c in CLASS_ORDER})
    with pytest.raises(Exception):
        result.label = "negative"
