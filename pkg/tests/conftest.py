"""Shared fixtures: a small deterministic trade-data corpus.

Three full countries (AAA, BBB, CCC) with 25 years of data and four
activities (w, x, y, z) arranged so AAA and CCC hold a revealed comparative
advantage in two activities and BBB in three, plus:

  * AAA's activity y receives a 3-year export bump, putting its RCA above 1
    in at most 3 years (below the 4-year filter boundary);
  * activity z passes the filter only in BBB, so BBB's dispersal fit has no
    cross-country field and is skipped with a reason;
  * country DDD reports only 19 years, below the default 20-year cut but
    ingestible with a lower threshold to exercise the fit-time skip.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

BASE_SHARES = {
    "AAA": {"w": 42.0, "x": 36.0, "y": 16.0, "z": 6.0},
    "BBB": {"w": 10.0, "x": 40.0, "y": 38.0, "z": 12.0},
    "CCC": {"w": 37.0, "x": 16.0, "y": 41.0, "z": 6.0},
    "DDD": {"w": 42.0, "x": 36.0, "y": 16.0, "z": 6.0},
}
POPULATION0 = {"AAA": 10e6, "BBB": 20e6, "CCC": 5e6, "DDD": 8e6}
YEARS = range(1990, 2015)
DDD_YEARS = range(1996, 2015)
BUMP_YEARS = {1995, 1996, 1997}
GDP = {"AAA": 5e11, "BBB": 9e11, "CCC": 2e11, "DDD": 3e11}


def build_trade_fixture(root: Path) -> dict:
    rng = np.random.default_rng(20240101)
    export_rows = []
    population_rows = []
    for country, shares in BASE_SHARES.items():
        years = DDD_YEARS if country == "DDD" else YEARS
        for year in years:
            growth = 1.0 + 0.04 * (year - 1990)
            population_rows.append(
                (country, year, POPULATION0[country] * (1.0 + 0.01 * (year - 1990)))
            )
            for activity, base in shares.items():
                value = base * 1e6 * growth
                if country == "AAA" and activity == "y" and year in BUMP_YEARS:
                    value *= 4.0
                value *= float(np.exp(0.08 * rng.standard_normal()))
                export_rows.append((country, year, activity, value))

    exports_path = root / "exports.csv"
    with open(exports_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country_code", "year", "activity_code", "value"])
        writer.writerows(export_rows)

    population_path = root / "population.csv"
    with open(population_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country_code", "year", "population"])
        writer.writerows(population_rows)

    gdp_path = root / "gdp.csv"
    with open(gdp_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country_code", "gdp"])
        writer.writerows(sorted(GDP.items()))

    return {
        "exports": exports_path,
        "population": population_path,
        "gdp": gdp_path,
    }


@pytest.fixture(scope="session")
def trade_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("trade_fixture")
    return build_trade_fixture(root)


def read_artifact(path: Path):
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    with open(path, encoding="utf-8") as fh:
        return fh.read()
