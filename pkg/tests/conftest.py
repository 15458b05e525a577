import datetime as dt
import os

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from shiftcast.corpus import CATEGORY_NAMES, Sample

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_sample(poi_id, category, start, values, target):
    start = dt.date.fromisoformat(start) if isinstance(start, str) else start
    dates = tuple(start + dt.timedelta(days=i) for i in range(len(values)))
    return Sample(poi_id, category, dates, tuple(values), dates[-1] + dt.timedelta(days=1), target)


@pytest.fixture
def poi81():
    """POI 81 observed Aug 26-28 2020, next day 21 visits."""
    return make_sample(81, "Optical Goods Store", "2020-08-26", [42, 32, 29], 21)


GOLDEN_PROMPT = (
    "Place-of-Interest (POI) 81 is an Optical Goods Store. From August 26, 2020, Wednesday "
    "to August 28, 2020, Friday, there were 42, 32, 29 people visiting POI 81 on each day. "
    "On August 29, 2020, Saturday,"
)
GOLDEN_TARGET = "there will be 21 people visiting POI 81."


@st.composite
def samples(draw, max_obs=20, max_count=9999):
    obs = draw(st.integers(1, max_obs))
    start = draw(st.dates(dt.date(1990, 1, 1), dt.date(2060, 12, 1)))
    return make_sample(
        draw(st.integers(0, 99999)),
        draw(st.sampled_from(CATEGORY_NAMES)),
        start,
        draw(st.lists(st.integers(0, max_count), min_size=obs, max_size=obs)),
        draw(st.integers(0, max_count)),
    )


def write_csv(path, rows):
    lines = ["poi_id,category,date,visits"] + [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)
