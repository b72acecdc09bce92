"""
Shift-share and lagged instruments from industry-level input quantities.

A shift-share level for country c weights leave-one-out annual log growth of
each industry's aggregate by c's industry shares in its first year, and
accumulates those weighted growth terms from 0 at that base year. Differences
over any horizon are taken downstream in `build_instruments`.
"""

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ces_skill.core.errors import MissingDataError, ValidationError
from ces_skill.core.settings import settings
from ces_skill.models.instruments import (
    INDUSTRY_INPUTS,
    SHIFT_SHARE_COLUMNS,
    IndustryCell,
    IndustryInput,
    InstrumentKind,
    InstrumentSeries,
    InstrumentSet,
    lagged_columns,
)
from ces_skill.models.panel import CountryYearRecord

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndustryCube:
    """Quantities of one input as a (country, industry, year) array, NaN where absent."""

    countries: list[str]
    industries: list[str]
    years: list[int]
    values: np.ndarray

    def country_years(self, index: int) -> list[int]:
        present = np.any(~np.isnan(self.values[index]), axis=0)
        return [year for year, ok in zip(self.years, present) if ok]


def industry_cube(cells: Iterable[IndustryCell], input: IndustryInput) -> IndustryCube:
    cells = list(cells)
    if not cells:
        raise MissingDataError("no industry cells")
    countries = sorted({c.country for c in cells})
    industries = sorted({c.industry for c in cells})
    first = min(c.year for c in cells)
    years = list(range(first, max(c.year for c in cells) + 1))
    values = np.full((len(countries), len(industries), len(years)), np.nan)
    ci = {c: k for k, c in enumerate(countries)}
    di = {d: k for k, d in enumerate(industries)}
    for cell in cells:
        values[ci[cell.country], di[cell.industry], cell.year - first] = getattr(cell, input)
    cube = IndustryCube(countries, industries, years, values)
    for k, country in enumerate(countries):
        own = cube.country_years(k)
        if own != list(range(own[0], own[-1] + 1)):
            raise MissingDataError(f"industry cells of {country} are not contiguous in years")
    return cube


def base_shares(cube: IndustryCube, country: str, base_year: int | None = None) -> np.ndarray:
    """Industry shares of `country` in its base year; absent industries get share 0."""
    c = cube.countries.index(country)
    base_year = cube.country_years(c)[0] if base_year is None else base_year
    if base_year not in cube.years:
        raise MissingDataError(f"{country}: base year {base_year} outside the industry panel")
    level = np.nan_to_num(cube.values[c, :, cube.years.index(base_year)], nan=0.0)
    total = level.sum()
    if not total > 0.0:
        raise ValidationError(f"{country}: zero base-year total in {base_year}")
    return level / total


def _leave_one_out_growth(cube: IndustryCube, c: int, k: int) -> np.ndarray:
    """Per-industry log growth from year index k-1 to k of the total over other countries."""
    both = ~np.isnan(cube.values[:, :, k]) & ~np.isnan(cube.values[:, :, k - 1])
    both[c, :] = False
    others = [j for j in range(len(cube.countries)) if j != c]
    now = np.where(both, cube.values[:, :, k], 0.0)[others].sum(axis=0)
    prev = np.where(both, cube.values[:, :, k - 1], 0.0)[others].sum(axis=0)
    growth = np.full(len(cube.industries), np.nan)
    ok = both.any(axis=0)
    growth[ok] = np.log(now[ok]) - np.log(prev[ok])
    return growth


def shift_share_levels(
    cube: IndustryCube, country: str, base_year: int | None = None
) -> dict[int, float]:
    c = cube.countries.index(country)
    own_years = cube.country_years(c)
    base_year = own_years[0] if base_year is None else base_year
    shares = base_shares(cube, country, base_year)
    active = shares > 0.0
    if len(cube.countries) < 2:
        raise MissingDataError("leave-one-out totals need at least 2 countries")

    levels = {base_year: 0.0}
    level = 0.0
    for year in own_years:
        if year <= base_year:
            continue
        growth = _leave_one_out_growth(cube, c, cube.years.index(year))
        empty = active & np.isnan(growth)
        if empty.any():
            names = [d for d, e in zip(cube.industries, empty) if e]
            raise MissingDataError(
                f"{country} {year}: empty leave-one-out set for industries {names}"
            )
        level += float(np.dot(shares[active], growth[active]))
        levels[year] = level
    return levels


def shift_share_level(
    cells: Iterable[IndustryCell],
    input: IndustryInput,
    country: str,
    year: int,
    base_year: int | None = None,
) -> float:
    cube = industry_cube(cells, input)
    if country not in cube.countries:
        raise MissingDataError(f"{country} has no industry cells")
    levels = shift_share_levels(cube, country, base_year)
    if year not in levels:
        raise MissingDataError(f"{country}: no shift-share level for {year}")
    return levels[year]


def _country_totals(cube: IndustryCube, c: int) -> dict[int, float]:
    return {
        year: float(np.nansum(cube.values[c, :, k]))
        for k, year in enumerate(cube.years)
        if year in cube.country_years(c)
    }


def build_instruments(
    cells: Iterable[IndustryCell],
    kind: InstrumentKind = "shift_share",
    horizon: int | None = None,
    lags: Iterable[int] | None = None,
) -> InstrumentSet:
    cells = list(cells)
    if horizon is None:
        horizon = settings.shift_share_horizon if kind == "shift_share" else settings.lagged_horizon
    if horizon < 1:
        raise ValidationError(f"horizon must be at least 1 year, got {horizon}")
    cubes = {j: industry_cube(cells, j) for j in INDUSTRY_INPUTS}
    countries = cubes["k_i"].countries
    rows = []

    if kind == "shift_share":
        columns = SHIFT_SHARE_COLUMNS
        for country in countries:
            L = {j: shift_share_levels(cubes[j], country) for j in INDUSTRY_INPUTS}
            for year in sorted(L["l_h"]):
                if year - horizon not in L["l_h"]:
                    continue
                d = {j: L[j][year] - L[j][year - horizon] for j in INDUSTRY_INPUTS}
                rows.append(
                    InstrumentSeries(
                        country, year, {"d_lh_lu": d["l_h"] - d["l_u"], "d_ki_lh": d["k_i"] - d["l_h"]}
                    )
                )
    elif kind == "lagged":
        lags = sorted(settings.lags if lags is None else lags)
        if not lags or lags[0] < 1:
            raise ValidationError(f"lags must be positive, got {lags}")
        columns = lagged_columns(lags)
        for c, country in enumerate(countries):
            X = {j: _country_totals(cubes[j], c) for j in INDUSTRY_INPUTS}
            years = sorted(X["l_h"])
            first = years[0] + lags[-1] + horizon
            for year in years:
                if year < first:
                    continue
                values = {}
                for lag in lags:
                    past = year - lag
                    values[f"lh_lu_lag{lag}"] = float(np.log(X["l_h"][past] / X["l_u"][past]))
                    values[f"ki_lh_lag{lag}"] = float(np.log(X["k_i"][past] / X["l_h"][past]))
                rows.append(InstrumentSeries(country, year, values))
    else:
        raise ValidationError(f"unknown instrument kind {kind!r}")

    if not rows:
        raise MissingDataError(f"no country-year has enough history for {kind} instruments (horizon {horizon})")
    LOGGER.info("Built %d %s instrument rows over %d countries", len(rows), kind, len(countries))
    return InstrumentSet(kind=kind, horizon=horizon, columns=tuple(columns), rows=rows)


def panel_as_industry_cells(records: Iterable[CountryYearRecord]) -> list[IndustryCell]:
    """Each country aggregate as a single industry, enough for lagged instruments."""
    return [
        IndustryCell(
            country=r.country, industry="total", year=r.year, k_i=r.k_i, l_h=r.l_h, l_u=r.l_u
        )
        for r in records
    ]


def first_stage_condition(
    instruments: InstrumentSet, columns: Iterable[str] | None = None
) -> float:
    """Condition number of the standardised instrument matrix."""
    columns = list(columns or instruments.columns)
    X = np.array([[row.values[c] for c in columns] for row in instruments.rows])
    scale = X.std(axis=0)
    if np.any(scale == 0.0):
        return float("inf")
    return float(np.linalg.cond((X - X.mean(axis=0)) / scale))
