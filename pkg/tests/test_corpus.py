"""Corpus loading, HTML stripping, sentence segmentation, length gating."""

import json

import pytest

from rhskit.corpus import (
    LengthBounds,
    load_annotated_dataset,
    load_reviews,
    preprocess_review,
    segment_review,
    split_sentences,
    strip_html,
    write_error_report,
)
from rhskit.errors import InputError

from conftest import make_review, write_jsonl


class TestStripHtml:
    def test_plain_text_unchanged(self):
        assert strip_html("Works great. Battery lasts.") == "Works great. Battery lasts."

    def test_tags_removed_and_spaced(self):
        assert strip_html("good<br>value") == "good value"
        assert strip_html("<p>one</p><p>two</p>") == "one two"

    def test_entities_decoded(self):
        assert strip_html("salt &amp; pepper &lt;3") == "salt & pepper <3"
        assert strip_html("caf&eacute;") == "café"

    def test_script_and_style_content_dropped(self):
        text = "before<script>alert('x')</script>after<style>p{}</style>end"
        assert strip_html(text) == "before after end"

    def test_whitespace_collapsed(self):
        assert strip_html("a\n\n  b\tc") == "a b c"

    def test_plain_text_idempotent(self):
        once = strip_html("<b>bold</b> move &amp; more")
        assert strip_html(once) == once


class TestSplitSentences:
    def test_basic_split(self):
        assert split_sentences("First one. Second one.") == ["First one.", "Second one."]

    def test_exclamation_and_question(self):
        assert split_sentences("Wow! Really? Yes.") == ["Wow!", "Really?", "Yes."]

    def test_terminator_runs_stay_together(self):
        assert split_sentences("What?! No way.") == ["What?!", "No way."]

    def test_abbreviations_do_not_split(self):
        text = "Dr. Smith approved it. Great for the U.S. market."
        assert split_sentences(text) == [
            "Dr. Smith approved it.",
            "Great for the U.S. market.",
        ]

    def test_eg_ie_do_not_split(self):
        text = "Use it daily, e.g. For coffee. It works."
        # "e.g." never opens a boundary even before an uppercase word.
        assert split_sentences(text) == ["Use it daily, e.g. For coffee.", "It works."]

    def test_decimal_numbers_do_not_split(self):
        assert split_sentences("I rate it 4.5 stars overall. Solid.") == [
            "I rate it 4.5 stars overall.",
            "Solid.",
        ]

    def test_lowercase_continuation_does_not_split(self):
        assert split_sentences("It works vs. the cheaper one.") == [
            "It works vs. the cheaper one."
        ]

    def test_closing_quote_attached(self):
        text = 'He said "Buy it." Then he left.'
        assert split_sentences(text) == ['He said "Buy it."', "Then he left."]

    def test_no_terminator_single_sentence(self):
        assert split_sentences("no punctuation at all") == ["no punctuation at all"]

    def test_empty_input(self):
        assert split_sentences("") == []
        assert split_sentences("   ") == []


class TestSegmentation:
    def test_ids_are_review_scoped_ordinals(self):
        review = make_review(review_id="r9", text="One is fine. Two is fine.")
        sentences = segment_review(review)
        assert [s.sentence_id for s in sentences] == ["r9:0", "r9:1"]
        assert all(s.review_id == "r9" and s.product_id == "p1" for s in sentences)

    def test_ordinals_assigned_before_length_gate(self):
        # The short middle sentence keeps its slot in the numbering even
        # though the length gate later drops it.
        text = "This first sentence is comfortably long enough to pass. No. " \
               "This third sentence is also comfortably long enough to pass."
        review = make_review(text=text)
        kept = preprocess_review(review, LengthBounds(30, 200))
        assert [s.sentence_id for s in kept] == ["r1:0", "r1:2"]

    def test_length_bounds_inclusive(self):
        s30 = "X" + "x" * 28 + "."
        s200 = "Y" + "y" * 198 + "."
        s29 = "Z" + "z" * 27 + "."
        review = make_review(text=" ".join([s30, s200, s29]))
        kept = preprocess_review(review, LengthBounds(30, 200))
        assert [s.char_len for s in kept] == [30, 200]

    def test_html_stripped_before_segmentation(self):
        review = make_review(
            text="<p>This one reads perfectly well after markup removal.</p>"
        )
        kept = preprocess_review(review, LengthBounds(30, 200))
        assert kept[0].text == "This one reads perfectly well after markup removal."

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            LengthBounds(0, 200)
        with pytest.raises(ValueError):
            LengthBounds(50, 40)


class TestLoadReviews:
    def test_loads_canonical_fields(self, tmp_path):
        path = write_jsonl(
            tmp_path / "r.jsonl",
            [
                {
                    "review_id": "r1",
                    "product_id": "p1",
                    "text": "Fine.",
                    "helpful_votes": 3,
                    "star_rating": 5,
                }
            ],
        )
        reviews, errors = load_reviews(path)
        assert errors == []
        assert reviews[0].review_id == "r1"
        assert reviews[0].helpful_votes == 3

    def test_field_map_renames(self, tmp_path):
        path = write_jsonl(
            tmp_path / "r.jsonl",
            [{"rid": "r1", "asin": "p1", "body": "Fine.", "votes": 0, "stars": 4}],
        )
        reviews, errors = load_reviews(
            path,
            {
                "review_id": "rid",
                "product_id": "asin",
                "text": "body",
                "helpful_votes": "votes",
                "star_rating": "stars",
            },
        )
        assert errors == []
        assert reviews[0].product_id == "p1"

    def test_bad_records_reported_not_fatal(self, tmp_path):
        rows = [
            {"review_id": "r1", "product_id": "p1", "text": "ok", "helpful_votes": 0, "star_rating": 5},
            {"review_id": "r2", "product_id": "p1", "helpful_votes": 0, "star_rating": 5},
            {"review_id": "r3", "product_id": "p1", "text": "ok", "helpful_votes": -2, "star_rating": 5},
            {"review_id": "r4", "product_id": "p1", "text": "ok", "helpful_votes": 0, "star_rating": 9},
        ]
        path = tmp_path / "r.jsonl"
        with open(path, "w") as handle:
            for row in rows:
                handle.write(json.dumps(row) + "\n")
            handle.write("{not json\n")
        reviews, errors = load_reviews(path)
        assert [r.review_id for r in reviews] == ["r1"]
        assert sorted(e.line_no for e in errors) == [2, 3, 4, 5]
        for error in errors:
            assert error.reason

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text(
            '\n{"review_id":"r1","product_id":"p1","text":"ok","helpful_votes":0,"star_rating":1}\n\n'
        )
        reviews, errors = load_reviews(path)
        assert len(reviews) == 1 and not errors

    def test_undecodable_file_is_fatal(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_bytes(b'{"review_id": "r\xff"}\n')
        with pytest.raises(InputError):
            load_reviews(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(OSError):
            load_reviews(tmp_path / "absent.jsonl")


class TestLoadAnnotated:
    def test_ratings_mean_is_the_gold_score(self, tmp_path):
        path = write_jsonl(
            tmp_path / "a.jsonl", [{"sentence": "Nice product overall.", "ratings": [0, 1, 2]}]
        )
        annotated, errors = load_annotated_dataset(path)
        assert not errors
        assert annotated[0].helpfulness == pytest.approx(1.0)
        assert annotated[0].ratings == (("a0", 0), ("a1", 1), ("a2", 2))

    def test_annotator_keyed_ratings(self, tmp_path):
        path = write_jsonl(
            tmp_path / "a.jsonl",
            [{"sentence": "ok", "ratings": [{"annotator_id": "w7", "rating": 2}]}],
        )
        annotated, _ = load_annotated_dataset(path)
        assert annotated[0].ratings == (("w7", 2),)

    def test_stored_helpfulness_used_when_no_ratings(self, tmp_path):
        path = write_jsonl(tmp_path / "a.jsonl", [{"sentence": "ok", "helpfulness": 1.4}])
        annotated, _ = load_annotated_dataset(path)
        assert annotated[0].helpfulness == pytest.approx(1.4)
        assert annotated[0].ratings == ()

    def test_mismatched_stored_score_warns_but_ratings_win(self, tmp_path, caplog):
        path = write_jsonl(
            tmp_path / "a.jsonl",
            [{"sentence": "ok", "helpfulness": 0.2, "ratings": [2, 2]}],
        )
        with caplog.at_level("WARNING"):
            annotated, errors = load_annotated_dataset(path)
        assert not errors
        assert annotated[0].helpfulness == pytest.approx(2.0)
        assert any("helpfulness" in r.message for r in caplog.records)

    def test_invalid_rows_become_errors(self, tmp_path):
        rows = [
            {"sentence": "no score at all"},
            {"sentence": "bad rating", "ratings": [3]},
            {"sentence": "bad score", "helpfulness": 2.5},
            {"ratings": [1]},
        ]
        path = write_jsonl(tmp_path / "a.jsonl", rows)
        annotated, errors = load_annotated_dataset(path)
        assert annotated == []
        assert sorted(e.line_no for e in errors) == [1, 2, 3, 4]

    def test_sentence_ids_default_to_line_numbers(self, tmp_path):
        path = write_jsonl(
            tmp_path / "a.jsonl",
            [{"sentence": "one", "ratings": [1]}, {"sentence": "two", "ratings": [1]}],
        )
        annotated, _ = load_annotated_dataset(path)
        assert [a.sentence.sentence_id for a in annotated] == ["line-1", "line-2"]


def test_write_error_report(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [{"product_id": "p", "text": "x"}])
    _, errors = load_reviews(path)
    out = tmp_path / "errors.jsonl"
    write_error_report(errors, out)
    row = json.loads(out.read_text().splitlines()[0])
    assert set(row) == {"line_no", "reason"}
    assert row["line_no"] == 1
