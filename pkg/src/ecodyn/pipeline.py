"""Trade-data ingestion pipeline.

Turns raw export and population tables into per-country datasets: export
values are discounted by national population, activities must hold a
revealed comparative advantage above one for a minimum number of years, and
countries must retain a minimum span of usable years.  Also builds the
cross-country mean field that forces the dispersal model.

Input CSVs are headered, comma-delimited and UTF-8:

    exports:    country_code, year, activity_code, value
    population: country_code, year, population
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .inference import Dataset
from .models import GlobalField

__all__ = [
    "PipelineError",
    "FieldUnavailable",
    "ExportTable",
    "PopulationTable",
    "load_export_table",
    "load_population_table",
    "per_capita",
    "rca",
    "filter_activities",
    "assemble_datasets",
    "filter_countries",
    "build_global_field",
    "ingest",
]


class PipelineError(ValueError):
    """Malformed or inconsistent input data."""


class FieldUnavailable(PipelineError):
    """No other country reports an activity needed for the global field."""


@dataclass(frozen=True)
class ExportTable:
    """(country, year, activity) -> export value, duplicates rejected."""

    records: tuple

    def __post_init__(self):
        seen = set()
        dupes = []
        for country, year, activity, value in self.records:
            key = (country, year, activity)
            if key in seen:
                dupes.append(key)
            seen.add(key)
            if value < 0:
                raise PipelineError(f"negative export value for {key}")
        if dupes:
            raise PipelineError(f"duplicate export keys: {sorted(dupes)[:10]}")

    def as_dict(self) -> dict:
        return {(c, y, a): v for c, y, a, v in self.records}

    def without_activities(self, excluded: Iterable[str]) -> "ExportTable":
        drop = set(excluded)
        return ExportTable(
            records=tuple(r for r in self.records if r[2] not in drop)
        )


@dataclass(frozen=True)
class PopulationTable:
    """(country, year) -> population, duplicates rejected."""

    records: tuple

    def __post_init__(self):
        seen = set()
        dupes = []
        for country, year, pop in self.records:
            key = (country, year)
            if key in seen:
                dupes.append(key)
            seen.add(key)
            if pop <= 0:
                raise PipelineError(f"non-positive population for {key}")
        if dupes:
            raise PipelineError(f"duplicate population keys: {sorted(dupes)[:10]}")

    def as_dict(self) -> dict:
        return {(c, y): p for c, y, p in self.records}


def _read_csv(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PipelineError(f"{path}: empty file") from None
        if [h.strip() for h in header] != list(expected_header):
            raise PipelineError(
                f"{path}: expected header {list(expected_header)}, got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise PipelineError(f"{path}:{line_no}: expected "
                                    f"{len(expected_header)} fields, got {len(row)}")
            yield line_no, row


def load_export_table(path) -> ExportTable:
    records = []
    for line_no, row in _read_csv(path, ("country_code", "year", "activity_code", "value")):
        try:
            records.append((row[0], int(row[1]), row[2], float(row[3])))
        except ValueError as exc:
            raise PipelineError(f"{path}:{line_no}: {exc}") from None
    return ExportTable(records=tuple(records))


def load_population_table(path) -> PopulationTable:
    records = []
    for line_no, row in _read_csv(path, ("country_code", "year", "population")):
        try:
            records.append((row[0], int(row[1]), float(row[2])))
        except ValueError as exc:
            raise PipelineError(f"{path}:{line_no}: {exc}") from None
    return PopulationTable(records=tuple(records))


def per_capita(exports: ExportTable, population: PopulationTable) -> dict:
    """Per-capita export series, {country: {activity: {year: value}}}.

    Zero export values are dropped (the likelihood lives in log space);
    a missing population record for any export record is an error.
    """
    pop = population.as_dict()
    missing = sorted(
        {(c, y) for c, y, _, _ in exports.records if (c, y) not in pop}
    )
    if missing:
        raise PipelineError(
            f"missing population for {len(missing)} (country, year) keys, "
            f"first: {missing[:10]}"
        )
    series: dict = {}
    for country, year, activity, value in exports.records:
        if value <= 0:
            continue
        series.setdefault(country, {}).setdefault(activity, {})[year] = (
            value / pop[(country, year)]
        )
    return series


def rca(exports: ExportTable) -> dict:
    """Balassa revealed-comparative-advantage index per (country, year,
    activity): the country's within-year export share of the activity over
    the world's share.  Keys with zero denominators are omitted."""
    country_year_total: dict = {}
    activity_year_total: dict = {}
    year_total: dict = {}
    for country, year, activity, value in exports.records:
        country_year_total[(country, year)] = (
            country_year_total.get((country, year), 0.0) + value
        )
        activity_year_total[(activity, year)] = (
            activity_year_total.get((activity, year), 0.0) + value
        )
        year_total[year] = year_total.get(year, 0.0) + value

    out = {}
    for country, year, activity, value in exports.records:
        denom_c = country_year_total[(country, year)]
        denom_w = year_total[year]
        world_share_num = activity_year_total[(activity, year)]
        if denom_c <= 0 or denom_w <= 0 or world_share_num <= 0:
            continue
        out[(country, year, activity)] = (value / denom_c) / (
            world_share_num / denom_w
        )
    return out


def _longest_consecutive_run(years: Sequence[int]) -> int:
    if not years:
        return 0
    years = sorted(years)
    best = run = 1
    for prev, cur in zip(years, years[1:]):
        run = run + 1 if cur == prev + 1 else 1
        best = max(best, run)
    return best


def filter_activities(
    series: Mapping,
    rca_values: Mapping,
    min_years: int = 4,
    consecutive: bool = False,
) -> tuple:
    """Keep activities with RCA > 1 in at least `min_years` years.

    `consecutive` demands the qualifying years to be consecutive calendar
    years; the default counts any years.  Returns (filtered series, dropped)
    where dropped lists (country, activity, reason).
    """
    filtered: dict = {}
    dropped = []
    for country in sorted(series):
        for activity in sorted(series[country]):
            qualifying = [
                year
                for year in series[country][activity]
                if rca_values.get((country, year, activity), 0.0) > 1.0
            ]
            count = (
                _longest_consecutive_run(qualifying)
                if consecutive
                else len(qualifying)
            )
            if count >= min_years:
                filtered.setdefault(country, {})[activity] = dict(
                    series[country][activity]
                )
            else:
                dropped.append(
                    (
                        country,
                        activity,
                        f"RCA > 1 in {count} years, need {min_years}",
                    )
                )
    return filtered, dropped


def assemble_datasets(series: Mapping) -> tuple:
    """Build rectangular per-country datasets from sparse series.

    Only years where every kept activity has a positive value enter the
    matrix (gaps stay gaps; nothing is imputed).  Returns (datasets,
    dropped) with per-country exclusion reasons.
    """
    datasets = []
    dropped = []
    for country in sorted(series):
        activities = sorted(series[country])
        if not activities:
            dropped.append((country, "no activities passed the filter"))
            continue
        common_years = set(series[country][activities[0]])
        for activity in activities[1:]:
            common_years &= set(series[country][activity])
        years = sorted(common_years)
        if not years:
            dropped.append((country, "no years shared by all kept activities"))
            continue
        matrix = np.array(
            [[series[country][a][y] for a in activities] for y in years]
        )
        datasets.append(
            Dataset(
                country=country,
                years=np.asarray(years, dtype=int),
                observations=matrix,
                activity_labels=tuple(activities),
            )
        )
    return datasets, dropped


def filter_countries(datasets: Sequence[Dataset], min_years: int = 20) -> tuple:
    """Keep countries with at least `min_years` usable years."""
    kept = [d for d in datasets if d.n_years >= min_years]
    dropped = [
        (d.country, f"{d.n_years} years of data, need {min_years}")
        for d in datasets
        if d.n_years < min_years
    ]
    return kept, dropped


def build_global_field(
    datasets: Sequence[Dataset],
    target: str,
) -> GlobalField:
    """Cross-country mean of per-capita exports on the target's year grid.

    Per year and activity, countries missing that year are left out of the
    mean; years no other country reports are filled by linear interpolation
    from the nearest reported years.  An activity reported by no other
    country leaves the field undefined (FieldUnavailable).
    """
    target_ds = next((d for d in datasets if d.country == target), None)
    if target_ds is None:
        raise PipelineError(f"unknown target country {target!r}")
    others = [d for d in datasets if d.country != target]
    years = target_ds.years
    values = np.full((years.size, target_ds.n_activities), np.nan)
    unavailable = []
    for j, activity in enumerate(target_ds.activity_labels):
        sources = [
            (d, d.activity_labels.index(activity))
            for d in others
            if activity in d.activity_labels
        ]
        if not sources:
            unavailable.append(activity)
            continue
        for i, year in enumerate(years):
            samples = []
            for d, col in sources:
                pos = np.searchsorted(d.years, year)
                if pos < d.years.size and d.years[pos] == year:
                    samples.append(d.observations[pos, col])
            if samples:
                values[i, j] = float(np.mean(samples))
        col = values[:, j]
        defined = np.flatnonzero(~np.isnan(col))
        if defined.size == 0:
            unavailable.append(activity)
            continue
        values[:, j] = np.interp(
            np.arange(years.size), defined, col[defined]
        )
    if unavailable:
        raise FieldUnavailable(
            f"no other country reports {sorted(set(unavailable))} "
            f"needed by {target}"
        )
    return GlobalField(times=years.astype(float), values=values)


def ingest(
    exports: ExportTable,
    population: PopulationTable,
    exclude_activities: Iterable[str] = (),
    rca_min_years: int = 4,
    rca_consecutive: bool = False,
    min_country_years: int = 20,
) -> tuple:
    """Full pipeline: exclusions, per-capita, RCA filter, country filter.

    Returns (datasets, manifest); the manifest records every drop decision
    for auditability.
    """
    exclude = sorted(set(exclude_activities))
    table = exports.without_activities(exclude) if exclude else exports
    series = per_capita(table, population)
    rca_values = rca(table)
    filtered, dropped_activities = filter_activities(
        series, rca_values, min_years=rca_min_years, consecutive=rca_consecutive
    )
    datasets, dropped_empty = assemble_datasets(filtered)
    datasets, dropped_short = filter_countries(datasets, min_years=min_country_years)
    manifest = {
        "excluded_activity_codes": exclude,
        "rca_min_years": rca_min_years,
        "rca_consecutive": rca_consecutive,
        "min_country_years": min_country_years,
        "countries_kept": [d.country for d in datasets],
        "dropped_activities": [
            {"country": c, "activity": a, "reason": r}
            for c, a, r in dropped_activities
        ],
        "dropped_countries": [
            {"country": c, "reason": r} for c, r in dropped_empty + dropped_short
        ],
    }
    return datasets, manifest
