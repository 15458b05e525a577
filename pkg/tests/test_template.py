import datetime as dt
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftcast.template import (MalformedPrediction, format_date, parse_prediction, render_prompt,
                                render_target)

from conftest import GOLDEN_PROMPT, GOLDEN_TARGET, make_sample, samples


def test_golden_prompt(poi81):
    assert render_prompt(poi81) == GOLDEN_PROMPT


def test_verbatim_article(poi81):
    assert render_prompt(poi81, verbatim_article=True).startswith(
        "Place-of-Interest (POI) 81 is a Optical Goods Store. From")


def test_article_consonant():
    s = make_sample(3, "Bakery", "2020-01-01", [1], 2)
    assert render_prompt(s).startswith("Place-of-Interest (POI) 3 is a Bakery.")


def test_variant_b_drops_semantic_sentence(poi81):
    a, b = render_prompt(poi81, "A"), render_prompt(poi81, "B")
    assert b == a[len("Place-of-Interest (POI) 81 is an Optical Goods Store. "):]
    assert b.startswith("From August 26, 2020")


def test_unknown_variant(poi81):
    with pytest.raises(ValueError):
        render_prompt(poi81, "C")


def test_single_zero_observation():
    s = make_sample(5, "Bar", "2020-01-01", [0], 0)
    assert "there were 0 people visiting POI 5 on each day." in render_prompt(s)


def test_extra_sentences_follow_semantic(poi81):
    text = render_prompt(poi81, extra=["It is a holiday."])
    assert text.startswith("Place-of-Interest (POI) 81 is an Optical Goods Store. It is a holiday. From")


@pytest.mark.parametrize("value,poi,text", [
    (21, 81, GOLDEN_TARGET),
    (0, 0, "there will be 0 people visiting POI 0."),
    (24, 24, "there will be 24 people visiting POI 24."),
])
def test_render_target(value, poi, text):
    assert render_target(make_sample(poi, "Bar", "2020-01-01", [1], value)) == text


@pytest.mark.parametrize("day,text", [
    ("2020-08-26", "August 26, 2020, Wednesday"),
    ("2020-11-08", "November 8, 2020, Sunday"),
    ("2021-01-01", "January 1, 2021, Friday"),
])
def test_format_date(day, text):
    assert format_date(dt.date.fromisoformat(day)) == text


@pytest.mark.parametrize("text,value", [
    (GOLDEN_TARGET, 21),
    ("there will be 24 people visiting POI 24.", 24),
    ("  there will be 7 people visiting POI 2  ", 7),
])
def test_parse(text, value):
    assert parse_prediction(text) == value


@pytest.mark.parametrize("text", [
    "people visiting will maybe",
    "there will be many people visiting POI 3.",
    "there will be -4 people visiting POI 3.",
    "there will be 3 people and will be 4 people",
    "",
])
def test_parse_rejects(text):
    with pytest.raises(MalformedPrediction):
        parse_prediction(text)


@given(samples())
def test_target_round_trip(s):
    assert parse_prediction(render_target(s)) == s.target_value


@given(samples())
def test_prompt_numbers_recoverable(s):
    text = render_prompt(s)
    m = re.search(r"there were (.*) people visiting POI (\d+) on each day\.", text)
    assert [int(x) for x in m.group(1).split(", ")] == list(s.obs_values)
    assert int(m.group(2)) == s.poi_id
    assert text.startswith(f"Place-of-Interest (POI) {s.poi_id} is ")


@given(st.text())
def test_parse_is_total(text):
    try:
        assert parse_prediction(text) >= 0
    except MalformedPrediction:
        pass
