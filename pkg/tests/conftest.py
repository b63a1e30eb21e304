"""Shared builders for the test suite."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rhskit.corpus import AnnotatedSentence, Review, Sentence


def make_review(review_id="r1", product_id="p1", text="", votes=0, stars=5):
    return Review(
        review_id=review_id,
        product_id=product_id,
        text=text,
        helpful_votes=votes,
        star_rating=stars,
    )


def make_sentence(sid="s1", text="a sentence", review_id="r1", product_id="p1"):
    return Sentence(
        sentence_id=sid,
        review_id=review_id,
        product_id=product_id,
        text=text,
        char_len=len(text),
    )


def make_annotated(sid, text, ratings, product_id="p1"):
    ratings = tuple((f"a{i}", r) for i, r in enumerate(ratings))
    mean = sum(r for _, r in ratings) / len(ratings)
    return AnnotatedSentence(
        sentence=make_sentence(sid, text, product_id=product_id),
        helpfulness=mean,
        ratings=ratings,
    )


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
