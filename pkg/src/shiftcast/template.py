"""Mobility-to-language templates and the prediction parser."""

from __future__ import annotations

import datetime as dt
import re
from typing import Sequence

from .corpus import Sample

VARIANTS = ("A", "B")

# fixed English names; strftime would follow the process locale
MONTHS = ("January", "February", "March", "April", "May", "June", "July",
          "August", "September", "October", "November", "December")
WEEKDAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")


class MalformedPrediction(ValueError):
    pass


def format_date(d: dt.date) -> str:
    """``2020-08-26`` -> ``"August 26, 2020, Wednesday"``."""
    return f"{MONTHS[d.month - 1]} {d.day}, {d.year}, {WEEKDAYS[d.weekday()]}"


def article(category: str, verbatim: bool = False) -> str:
    if verbatim:
        return "a"
    return "an" if category[:1].lower() in "aeiou" else "a"


def semantic_sentence(poi_id: int, category: str, verbatim_article: bool = False) -> str:
    return f"Place-of-Interest (POI) {poi_id} is {article(category, verbatim_article)} {category}."


def render_prompt(s: Sample, variant: str = "A", *, verbatim_article: bool = False,
                  extra: Sequence[str] = ()) -> str:
    """Source sentence for one sample.

    Variant B drops the POI semantic sentence. ``extra`` sentences (holidays,
    weather, ...) go right after the semantic sentence.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown prompt variant {variant!r}")
    parts = []
    if variant == "A":
        parts.append(semantic_sentence(s.poi_id, s.category, verbatim_article))
    parts.extend(extra)
    parts.append(f"From {format_date(s.obs_dates[0])} to {format_date(s.obs_dates[-1])},")
    counts = ", ".join(str(v) for v in s.obs_values)
    parts.append(f"there were {counts} people visiting POI {s.poi_id} on each day.")
    parts.append(f"On {format_date(s.target_date)},")
    return " ".join(parts)


def render_target(s: Sample) -> str:
    return target_sentence(s.target_value, s.poi_id)


def target_sentence(value: int, poi_id: int) -> str:
    return f"there will be {value} people visiting POI {poi_id}."


_PREDICTION = re.compile(r"will be\s+(\S+)\s+people")


def parse_prediction(text: str) -> int:
    """Extract the visit count from a generated target sentence."""
    if not isinstance(text, str):
        raise MalformedPrediction(f"expected text, got {type(text).__name__}")
    matches = _PREDICTION.findall(text.strip())
    if len(matches) != 1:
        raise MalformedPrediction(
            f"expected one 'will be <n> people' phrase, found {len(matches)}: {text!r}")
    token = matches[0]
    if not token.isascii() or not token.isdigit():
        raise MalformedPrediction(f"not a non-negative integer: {token!r}")
    return int(token)
