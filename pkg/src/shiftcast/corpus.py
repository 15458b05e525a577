"""Visit-count datasets: CSV ingestion, synthesis, filtering, windowing and splitting."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = ("poi_id", "category", "date", "visits")
DEFAULT_MAX_COUNT = 9999


class CorpusError(ValueError):
    pass


class MalformedRow(CorpusError):
    pass


class InconsistentCategory(CorpusError):
    pass


class EmptyDataset(CorpusError):
    pass


class InvalidRatios(CorpusError):
    pass


class WindowTooLong(CorpusError):
    pass


class InvalidProfile(CorpusError):
    pass


@dataclass(frozen=True)
class PoiRecord:
    poi_id: int
    category: str
    # one entry per day of the dataset range; None marks a missing day
    visits: tuple[int | None, ...]

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.visits)


@dataclass(frozen=True)
class PoiDataset:
    pois: tuple[PoiRecord, ...]
    start_date: dt.date
    end_date: dt.date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise CorpusError("start_date must not be after end_date")
        ids = [p.poi_id for p in self.pois]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate POI ids")
        for p in self.pois:
            if len(p.visits) != self.num_days:
                raise CorpusError(f"POI {p.poi_id}: {len(p.visits)} counts for {self.num_days} days")

    @property
    def num_days(self) -> int:
        return (self.end_date - self.start_date).days + 1

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(self.num_days)]

    @property
    def complete(self) -> bool:
        return all(p.complete for p in self.pois)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        dates = self.dates
        for p in self.pois:
            for day, v in zip(dates, p.visits):
                if v is not None:
                    writer.writerow((p.poi_id, p.category, day.isoformat(), v))
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass(frozen=True)
class Sample:
    poi_id: int
    category: str
    obs_dates: tuple[dt.date, ...]
    obs_values: tuple[int, ...]
    target_date: dt.date
    target_value: int

    def __post_init__(self):
        if len(self.obs_values) < 1 or len(self.obs_dates) != len(self.obs_values):
            raise CorpusError("a sample needs at least one observed day, one date per value")
        for a, b in zip(self.obs_dates, self.obs_dates[1:]):
            if (b - a).days != 1:
                raise CorpusError("observation dates must be consecutive days")
        if (self.target_date - self.obs_dates[-1]).days != 1:
            raise CorpusError("target date must follow the last observed date")

    @property
    def obs(self) -> int:
        return len(self.obs_values)


@dataclass(frozen=True)
class DatasetStats:
    avg_visits_per_day: float
    max_visits: int
    num_pois: int
    num_categories: int

    def to_json(self) -> str:
        return json.dumps({
            "avg_visits": self.avg_visits_per_day,
            "max_visits": self.max_visits,
            "num_pois": self.num_pois,
            "num_categories": self.num_categories,
        })


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def load_visits(path, format: str = "csv") -> PoiDataset:
    """Read ``poi_id,category,date,visits`` rows into a dataset.

    POIs lacking some days inside the overall date range are kept, with the
    missing days set to None; ``filter_complete`` drops them.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(CSV_HEADER)}")
        counts: dict[int, dict[dt.date, int]] = defaultdict(dict)
        categories: dict[int, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                poi = int(row[0])
                day = dt.date.fromisoformat(row[2].strip())
                visits = int(row[3])
            except ValueError as exc:
                raise MalformedRow(f"line {lineno}: {exc}") from exc
            if poi < 0 or visits < 0:
                raise MalformedRow(f"line {lineno}: negative id or count")
            category = row[1].strip()
            if categories.setdefault(poi, category) != category:
                raise InconsistentCategory(
                    f"POI {poi} listed as {categories[poi]!r} and {category!r}")
            if day in counts[poi]:
                raise MalformedRow(f"line {lineno}: duplicate day {day} for POI {poi}")
            counts[poi][day] = visits
    if not counts:
        raise EmptyDataset(f"{path}: no data rows")
    start = min(min(d) for d in counts.values())
    end = max(max(d) for d in counts.values())
    days = [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]
    pois = tuple(
        PoiRecord(poi, categories[poi], tuple(counts[poi].get(day) for day in days))
        for poi in sorted(counts)
    )
    return PoiDataset(pois, start, end)


def filter_complete(ds: PoiDataset) -> PoiDataset:
    return replace(ds, pois=tuple(p for p in ds.pois if p.complete))


def stats(ds: PoiDataset) -> DatasetStats:
    values = [v for p in ds.pois for v in p.visits if v is not None]
    if not values:
        raise EmptyDataset("no visit counts")
    return DatasetStats(
        avg_visits_per_day=sum(values) / len(values),
        max_visits=max(values),
        num_pois=len(ds.pois),
        num_categories=len({p.category for p in ds.pois}),
    )


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


def windowize(ds: PoiDataset, obs: int) -> list[Sample]:
    """Stride-1 windows of ``obs`` days plus the following day, per POI."""
    if obs < 1:
        raise WindowTooLong("obs must be at least 1")
    if ds.num_days < obs + 1:
        raise WindowTooLong(f"{ds.num_days} days cannot hold a window of {obs}+1")
    dates = ds.dates
    samples = []
    for p in ds.pois:
        if not p.complete:
            raise CorpusError(f"POI {p.poi_id} has missing days; run filter_complete first")
        for i in range(ds.num_days - obs):
            samples.append(Sample(
                poi_id=p.poi_id,
                category=p.category,
                obs_dates=tuple(dates[i:i + obs]),
                obs_values=tuple(p.visits[i:i + obs]),
                target_date=dates[i + obs],
                target_value=p.visits[i + obs],
            ))
    return samples


def _allocate(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split(samples: Sequence[Sample], ratios=(0.7, 0.1, 0.2), seed: int = 0,
          by: str = "sample") -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Shuffle deterministically and cut into train/val/test.

    Val and test get ``floor(ratio * n)`` items, train takes the remainder.
    With ``by="poi"`` whole POIs are allocated, so no POI spans two splits.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    if by == "sample":
        order = rng.permutation(len(samples))
        n_train, n_val, _ = _allocate(len(samples), ratios)
        picked = [samples[i] for i in order]
        return picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]
    if by == "poi":
        groups: dict[int, list[Sample]] = defaultdict(list)
        for s in samples:
            groups[s.poi_id].append(s)
        ids = sorted(groups)
        order = rng.permutation(len(ids))
        n_train, n_val, _ = _allocate(len(ids), ratios)
        chosen = [ids[i] for i in order]
        parts = (chosen[:n_train], chosen[n_train:n_train + n_val], chosen[n_train + n_val:])
        return tuple([s for poi in part for s in groups[poi]] for part in parts)
    raise ValueError(f"unknown split mode {by!r}")


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

CATEGORY_NAMES = (
    "Optical Goods Store", "Full-Service Restaurant", "Limited-Service Restaurant",
    "Snack and Nonalcoholic Beverage Bar", "Grocery Store", "Pharmacy and Drug Store",
    "Gasoline Station", "Office Supplies and Stationery Store", "Fitness and Recreational Sports Center",
    "Hardware Store", "Elementary and Secondary School", "Religious Organization",
    "Museum", "Nature Park", "Hotel", "Beauty Salon", "Bakery", "Bookstore",
    "Convenience Store", "Clothing Store", "Shoe Store", "Jewelry Store", "Pet Supply Store",
    "Furniture Store", "Electronics Store", "Sporting Goods Store", "Florist",
    "Dentist Office", "Physician Office", "Child Day Care Service", "Car Dealer",
    "Automotive Repair Shop", "Bank", "Post Office", "Library", "Movie Theater",
    "Art Gallery", "Bar", "Coffee Shop", "Ice Cream Parlor", "Insurance Agency",
    "Laundry Service", "Real Estate Office", "Veterinary Clinic", "Toy Store",
    "Music Store", "Gift Shop", "Liquor Store", "Department Store", "Tire Dealer",
    "Amusement Arcade", "Bowling Center", "Golf Course", "Marina", "Zoo",
    "Hospital", "Urgent Care Center", "Optometrist Office", "Chiropractor Office",
    "Tailor Shop", "Barber Shop", "Nail Salon", "Spa", "Yoga Studio", "Dance Studio",
)


@dataclass(frozen=True)
class SynthProfile:
    """Parameters of the synthetic visit-count generator.

    ``noise`` is the index of dispersion (variance / mean) of daily counts:
    0 gives deterministic rounded means, 1 Poisson, above 1 negative
    binomial, in between a binomial thinning.
    """

    num_pois: int = 479
    num_categories: int = 39
    days: int = 147
    base_rate_range: tuple[float, float] = (2.5, 55.0)
    weekly_amplitude_range: tuple[float, float] = (0.2, 0.6)
    noise: float = 1.0
    seed: int = 0
    start_date: dt.date = dt.date(2020, 6, 15)
    obs: int = 7
    max_count: int = DEFAULT_MAX_COUNT
    log_uniform_rates: bool = True

    def validate(self) -> None:
        lo, hi = self.base_rate_range
        alo, ahi = self.weekly_amplitude_range
        problems = []
        if self.num_pois < 1:
            problems.append("num_pois must be positive")
        if not 1 <= self.num_categories <= self.num_pois:
            problems.append("num_categories must lie in [1, num_pois]")
        if self.days < self.obs + 2:
            problems.append("days must be at least obs + 2")
        if not 0 <= lo <= hi:
            problems.append("base_rate_range must be a non-empty non-negative interval")
        if self.log_uniform_rates and lo <= 0 < hi:
            problems.append("log-uniform base rates need a positive lower bound")
        if not 0 <= alo <= ahi <= 1:
            problems.append("weekly_amplitude_range must be a non-empty interval in [0, 1]")
        if self.noise < 0:
            problems.append("noise must be non-negative")
        if self.max_count < 1:
            problems.append("max_count must be positive")
        if problems:
            raise InvalidProfile("; ".join(problems))

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthProfile":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise InvalidProfile(f"unknown profile fields: {sorted(unknown)}")
        kw = dict(raw)
        for key in ("base_rate_range", "weekly_amplitude_range"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        if "start_date" in kw and isinstance(kw["start_date"], str):
            kw["start_date"] = dt.date.fromisoformat(kw["start_date"])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start_date"] = self.start_date.isoformat()
        out["base_rate_range"] = list(self.base_rate_range)
        out["weekly_amplitude_range"] = list(self.weekly_amplitude_range)
        return out


def _draw_counts(rng: np.random.Generator, mu: np.ndarray, noise: float) -> np.ndarray:
    if noise == 0:
        return np.rint(mu)
    if noise == 1:
        return rng.poisson(mu).astype(float)
    if noise > 1:
        r = mu / (noise - 1.0)
        return rng.negative_binomial(np.maximum(r, 1e-9), r / (r + mu)).astype(float)
    p = 1.0 - noise
    return rng.binomial(np.rint(mu / p).astype(np.int64), p).astype(float)


def synthesize(profile: SynthProfile) -> PoiDataset:
    """Generate weekly-seasonal counts.

    POI i gets a base rate, an amplitude and a peak weekday; the daily mean is
    ``rate * (1 + amplitude * cos(2*pi*(weekday - peak)/7))``.
    """
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    lo, hi = profile.base_rate_range
    alo, ahi = profile.weekly_amplitude_range
    n = profile.num_pois

    if profile.log_uniform_rates and hi > lo:
        rates = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))
    else:
        rates = rng.uniform(lo, hi, size=n)
    amps = rng.uniform(alo, ahi, size=n)
    peaks = rng.integers(0, 7, size=n)
    cats = np.concatenate([
        np.arange(profile.num_categories),
        rng.integers(0, profile.num_categories, size=n - profile.num_categories),
    ])
    rng.shuffle(cats)

    names = list(CATEGORY_NAMES)
    while len(names) < profile.num_categories:
        names.append(f"Category {len(names) + 1}")

    weekdays = np.array([(profile.start_date + dt.timedelta(days=t)).weekday()
                         for t in range(profile.days)])
    shape = np.cos(2 * np.pi * (weekdays[None, :] - peaks[:, None]) / 7.0)
    mu = rates[:, None] * (1.0 + amps[:, None] * shape)
    counts = np.clip(_draw_counts(rng, mu, profile.noise), 0, profile.max_count).astype(int)

    pois = tuple(
        PoiRecord(i, names[cats[i]], tuple(int(c) for c in counts[i]))
        for i in range(n)
    )
    end = profile.start_date + dt.timedelta(days=profile.days - 1)
    return PoiDataset(pois, profile.start_date, end)
