"""
Panel ingestion, composition adjustment and user-cost construction.

All files are UTF-8 CSV in long format with a header row. Lines starting
with '#' are comments, so files written by the CLI (which start with a
fingerprint line) read back unchanged.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd
import pydantic

from ces_skill.core.errors import DuplicateKeyError, MissingDataError, ValidationError
from ces_skill.core.settings import settings
from ces_skill.models.instruments import IndustryCell
from ces_skill.models.panel import (
    RECORD_FIELDS,
    CapitalCell,
    CountryYearRecord,
    CpiSeries,
    InvestmentCell,
    PanelData,
    RawLaborCell,
)

LOGGER = logging.getLogger(__name__)

BASE_INTEREST = 0.04

COLUMNS: dict[str, tuple[str, ...]] = {
    "labor": ("country", "year", "skill", "gender", "age", "wage", "hours"),
    "investment": ("country", "year", "asset", "q", "delta"),
    "cpi": ("country", "year", "cpi"),
    "capital": ("country", "year", "k_i", "k_o"),
    "panel": ("country", "year", *RECORD_FIELDS),
    "industry": ("country", "industry", "year", "k_i", "l_h", "l_u"),
}

KEYS: dict[str, tuple[str, ...]] = {
    "labor": ("country", "year", "skill", "gender", "age"),
    "investment": ("country", "year", "asset"),
    "cpi": ("country", "year"),
    "capital": ("country", "year"),
    "panel": ("country", "year"),
    "industry": ("country", "industry", "year"),
}

_ID_COLUMNS = {"country": str, "skill": str, "gender": str, "age": str, "asset": str, "industry": str}


# ----------------------------------------------------------------------
# Reading and writing
# ----------------------------------------------------------------------


def read_table(path: Path, table: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{path}: file not found")
    try:
        frame = pd.read_csv(
            path,
            comment="#",
            dtype={c: t for c, t in _ID_COLUMNS.items() if c in COLUMNS[table]},
            keep_default_na=False,
            float_precision="round_trip",
            encoding="utf-8",
        )
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: cannot parse CSV: {exc}") from exc
    missing = [c for c in COLUMNS[table] if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    frame = frame[list(COLUMNS[table])]

    duplicated = frame.duplicated(subset=list(KEYS[table]), keep=False)
    if duplicated.any():
        keys = sorted({tuple(row) for row in frame.loc[duplicated, list(KEYS[table])].itertuples(index=False)})
        raise DuplicateKeyError(f"{path}: duplicate keys {keys}")
    LOGGER.info("Read %d rows from %s", len(frame), path)
    return frame


def _validate_rows(frame: pd.DataFrame, model: Any, path: Path, rename: dict[str, str] | None = None) -> list:
    rows = []
    for position, raw in enumerate(frame.to_dict(orient="records")):
        data = {(rename or {}).get(k, k): v for k, v in raw.items()}
        try:
            rows.append(model.model_validate(data))
        except pydantic.ValidationError as exc:
            error = exc.errors()[0]
            column = error["loc"][0] if error["loc"] else "?"
            if rename:
                column = {v: k for k, v in rename.items()}.get(column, column)
            key = ", ".join(f"{k}={raw[k]}" for k in ("country", "year") if k in raw)
            raise ValidationError(
                f"{path} row {position + 1}, column {column!r} ({key}): {error['msg']}"
            ) from exc
    return rows


def _check_contiguous(years_by_country: dict[str, list[int]], what: str) -> None:
    for country, years in years_by_country.items():
        ordered = sorted(years)
        gaps = sorted(set(range(ordered[0], ordered[-1] + 1)) - set(ordered))
        if gaps:
            raise MissingDataError(f"{what}: {country} is missing years {gaps}")


def load_panel(
    labor: Path | None = None,
    investment: Path | None = None,
    cpi: Path | None = None,
    panel: Path | None = None,
    industry: Path | None = None,
    capital: Path | None = None,
) -> PanelData:
    tables: dict[str, Any] = {}

    if labor is not None:
        frame = read_table(labor, "labor")
        tables["labor"] = _validate_rows(frame, RawLaborCell, labor, rename={"age": "age_group"})
    if investment is not None:
        tables["investment"] = _validate_rows(read_table(investment, "investment"), InvestmentCell, investment)
    if capital is not None:
        tables["capital"] = _validate_rows(read_table(capital, "capital"), CapitalCell, capital)
    if cpi is not None:
        frame = read_table(cpi, "cpi")
        series = {}
        for country, group in frame.groupby("country", sort=True):
            try:
                series[country] = CpiSeries(
                    country=country,
                    levels={int(y): float(v) for y, v in zip(group["year"], group["cpi"])},
                )
            except (pydantic.ValidationError, ValueError) as exc:
                raise ValidationError(f"{cpi}: CPI series of {country}: {exc}") from exc
        tables["cpi"] = series
    if panel is not None:
        records = _validate_rows(read_table(panel, "panel"), CountryYearRecord, panel)
        years: dict[str, list[int]] = {}
        for record in records:
            years.setdefault(record.country, []).append(record.year)
        _check_contiguous(years, str(panel))
        tables["records"] = sorted(records, key=lambda r: (r.country, r.year))
    if industry is not None:
        cells = _validate_rows(read_table(industry, "industry"), IndustryCell, industry)
        _check_industry_sets(cells, industry)
        tables["industry"] = cells

    data = PanelData(**tables)
    for country, (first, last) in data.year_ranges().items():
        LOGGER.info("%s: records %d-%d", country, first, last)
    return data


def _check_industry_sets(cells: list[IndustryCell], path: Path) -> None:
    sets: dict[str, set[str]] = {}
    for cell in cells:
        sets.setdefault(cell.country, set()).add(cell.industry)
    distinct = {frozenset(s) for s in sets.values()}
    if len(distinct) > 1:
        union = set().union(*sets.values())
        lacking = {c: sorted(union - s) for c, s in sorted(sets.items()) if union - s}
        raise ValidationError(f"{path}: countries do not share the industry set, missing {lacking}")


def _frame(rows: Iterable[pydantic.BaseModel], table: str, rename: dict[str, str] | None = None) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in rows])
    if rename:
        frame = frame.rename(columns=rename)
    if frame.empty:
        return pd.DataFrame(columns=list(COLUMNS[table]))
    return frame[list(COLUMNS[table])].sort_values(list(KEYS[table]), kind="stable")


def records_frame(records: Iterable[CountryYearRecord]) -> pd.DataFrame:
    return _frame(records, "panel").reset_index(drop=True)


def write_table(frame: pd.DataFrame, path: Path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header:
            handle.write(f"# {header}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")


def save_panel(panel: PanelData, directory: Path, header: str | None = None) -> list[Path]:
    """Writes every non-empty table under its canonical file name."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    frames = {
        "labor": _frame(panel.labor, "labor", rename={"age_group": "age"}),
        "investment": _frame(panel.investment, "investment"),
        "capital": _frame(panel.capital, "capital"),
        "panel": _frame(panel.records, "panel"),
        "industry": _frame(panel.industry, "industry"),
        "cpi": pd.DataFrame(
            [
                {"country": s.country, "year": year, "cpi": level}
                for s in panel.cpi.values()
                for year, level in s.levels.items()
            ],
            columns=list(COLUMNS["cpi"]),
        ).sort_values(["country", "year"], kind="stable"),
    }
    for table, frame in frames.items():
        if frame.empty:
            continue
        path = directory / f"{table}.csv"
        write_table(frame, path, header)
        written.append(path)
    return written


# ----------------------------------------------------------------------
# Composition adjustment
# ----------------------------------------------------------------------


def _labor_frame(cells: Iterable[RawLaborCell], skill_class: dict[str, str]) -> pd.DataFrame:
    frame = pd.DataFrame([cell.model_dump() for cell in cells])
    if frame.empty:
        raise MissingDataError("no labor cells to adjust")
    unknown = sorted(set(frame["skill"]) - set(skill_class))
    if unknown:
        raise ValidationError(f"skill levels {unknown} have no skill-type mapping")
    frame["type"] = frame["skill"].map(skill_class)
    frame["group"] = list(zip(frame["skill"], frame["gender"], frame["age_group"]))
    frame["group_key"] = frame["skill"] + "/" + frame["gender"] + "/" + frame["age_group"]

    # every (country, type) must observe all of its groups in every year it appears
    for (country, kind), part in frame.groupby(["country", "type"], sort=True):
        groups = set(part["group"])
        for year, cells in part.groupby("year"):
            missing = groups - set(cells["group"])
            if missing:
                raise MissingDataError(
                    f"{country} {year} skill type {kind}: missing groups {sorted(missing)}"
                )
    totals = frame.groupby(["country", "year", "type"])["hours"].transform("sum")
    empty = frame.loc[totals <= 0.0, ["country", "year", "type"]].drop_duplicates()
    if not empty.empty:
        raise MissingDataError(f"zero total hours in {[tuple(r) for r in empty.itertuples(index=False)]}")
    frame["hours_share"] = frame["hours"] / totals
    return frame


def adjust_wages(
    cells: Iterable[RawLaborCell], skill_class: dict[str, str] | None = None
) -> dict[tuple[str, int, str], float]:
    """Fixed-weight wage index: group wages weighted by country-mean hours shares."""
    frame = _labor_frame(cells, skill_class or settings.skill_classes)
    frame["mean_share"] = frame.groupby(["country", "type", "group_key"])["hours_share"].transform("mean")
    frame["weighted"] = frame["mean_share"] * frame["wage"]
    wages = frame.groupby(["country", "year", "type"], sort=True)["weighted"].sum()
    return {(c, int(y), k): float(v) for (c, y, k), v in wages.items()}


def _matches(group: tuple[str, str, str], base: tuple[str, str, str]) -> bool:
    return all(g == b or g == "all" for g, b in zip(group, base))


def adjust_hours(
    cells: Iterable[RawLaborCell],
    skill_class: dict[str, str] | None = None,
    base_groups: dict[str, tuple[str, str, str]] | None = None,
) -> dict[tuple[str, int, str], float]:
    """Efficiency hours: group hours weighted by mean wages relative to the base group."""
    frame = _labor_frame(cells, skill_class or settings.skill_classes)
    base_groups = base_groups or settings.base_groups
    frame["mean_wage"] = frame.groupby(["country", "type", "group_key"])["wage"].transform("mean")

    weights = pd.Series(1.0, index=frame.index)
    for (country, kind), part in frame.groupby(["country", "type"], sort=True):
        groups = sorted(set(part["group"]))
        if len(groups) == 1:
            continue
        base = [g for g in groups if _matches(g, base_groups[kind])]
        if not base:
            raise MissingDataError(
                f"{country} skill type {kind}: base group {base_groups[kind]} not observed"
            )
        is_base = part["group"].map(lambda g: g == base[0])
        base_wage = part.loc[is_base, "mean_wage"].iloc[0]
        weights.loc[part.index] = part["mean_wage"] / base_wage

    frame["efficiency"] = weights * frame["hours"]
    hours = frame.groupby(["country", "year", "type"], sort=True)["efficiency"].sum()
    return {(c, int(y), k): float(v) for (c, y, k), v in hours.items()}


# ----------------------------------------------------------------------
# Interest rate and rental price
# ----------------------------------------------------------------------


def interest_rate(cpi: CpiSeries, t: int) -> float:
    """Base rate plus the average of five annual inflation rates centred on t."""
    needed = range(t - 3, t + 3)
    missing = [year for year in needed if year not in cpi.levels]
    if missing:
        raise MissingDataError(f"{cpi.country}: interest rate for {t} needs CPI years {missing}")
    levels = cpi.levels
    inflation = [
        (levels[t - tau] - levels[t - tau - 1]) / levels[t - tau - 1] for tau in range(-2, 3)
    ]
    return BASE_INTEREST + math.fsum(inflation) / len(inflation)


def rental_price(inv: Iterable[InvestmentCell], cpi: CpiSeries, t: int) -> float:
    """User cost of one asset: depreciation, interest and capital-gain terms."""
    by_year = {cell.year: cell for cell in inv}
    missing = [year for year in (t, t - 1, t - 2) if year not in by_year]
    if missing:
        raise MissingDataError(f"{cpi.country}: rental price for {t} needs investment prices for {missing}")
    q_t, q_1, q_2 = by_year[t].q, by_year[t - 1].q, by_year[t - 2].q
    i_t = interest_rate(cpi, t)
    return by_year[t].delta * q_t + i_t * q_1 - 0.5 * (math.log(q_t) - math.log(q_2)) * q_1


# ----------------------------------------------------------------------
# Variable construction and validation report
# ----------------------------------------------------------------------


def build_records(panel: PanelData) -> list[CountryYearRecord]:
    """CountryYearRecords for every country-year where wages, hours, user costs and capital exist."""
    if not (panel.labor and panel.investment and panel.cpi and panel.capital):
        raise MissingDataError("building records needs labor, investment, cpi and capital tables")
    wages = adjust_wages(panel.labor)
    hours = adjust_hours(panel.labor)
    capital = {(c.country, c.year): c for c in panel.capital}

    assets: dict[tuple[str, str], list[InvestmentCell]] = {}
    for cell in panel.investment:
        assets.setdefault((cell.country, cell.asset), []).append(cell)

    records = []
    for country, year in sorted(capital):
        keys = [(country, year, "h"), (country, year, "u")]
        if not all(k in wages and k in hours for k in keys) or country not in panel.cpi:
            continue
        try:
            r_i = rental_price(assets.get((country, "ict"), []), panel.cpi[country], year)
            r_o = rental_price(assets.get((country, "non_ict"), []), panel.cpi[country], year)
        except MissingDataError:
            continue
        if r_i <= 0.0 or r_o <= 0.0:
            raise ValidationError(f"{country} {year}: nonpositive rental price (r_i={r_i}, r_o={r_o})")
        records.append(
            CountryYearRecord(
                country=country,
                year=year,
                w_h=wages[keys[0]],
                w_u=wages[keys[1]],
                r_i=r_i,
                r_o=r_o,
                k_i=capital[(country, year)].k_i,
                k_o=capital[(country, year)].k_o,
                l_h=hours[keys[0]],
                l_u=hours[keys[1]],
            )
        )
    years: dict[str, list[int]] = {}
    for record in records:
        years.setdefault(record.country, []).append(record.year)
    _check_contiguous(years, "constructed records")
    LOGGER.info("Built %d country-year records for %d countries", len(records), len(years))
    return records


@dataclass(frozen=True)
class CheckResult:
    table: str
    check: str
    status: str
    detail: str


def validate_report(panel: PanelData) -> list[CheckResult]:
    """Invariant report over whatever tables were loaded."""
    report = []

    def run(table: str, check: str, fn) -> None:
        try:
            detail = fn()
            report.append(CheckResult(table, check, "ok", detail or ""))
        except ValidationError as exc:
            report.append(CheckResult(table, check, "fail", str(exc)))

    if panel.labor:
        run("labor", "rows", lambda: f"{len(panel.labor)} cells")
        run("labor", "composition-adjusted wages", lambda: f"{len(adjust_wages(panel.labor))} series points")
        run("labor", "efficiency hours", lambda: f"{len(adjust_hours(panel.labor))} series points")
    if panel.investment:
        run("investment", "rows", lambda: f"{len(panel.investment)} cells")
    if panel.cpi:
        run(
            "cpi",
            "year ranges",
            lambda: "; ".join(f"{c} {min(s.levels)}-{max(s.levels)}" for c, s in sorted(panel.cpi.items())),
        )
    if panel.labor and panel.investment and panel.cpi and panel.capital:
        run("capital", "constructed records", lambda: f"{len(build_records(panel))} records")
    if panel.records:
        run(
            "panel",
            "year ranges",
            lambda: "; ".join(f"{c} {a}-{b}" for c, (a, b) in sorted(panel.year_ranges().items())),
        )
    if panel.industry:
        industries = sorted({cell.industry for cell in panel.industry})
        run("industry", "industry set", lambda: f"{len(industries)} industries shared by all countries")
        run("industry", "positive country totals", lambda: _industry_totals_detail(panel.industry))
    return report


def _industry_totals_detail(cells: list[IndustryCell]) -> str:
    frame = pd.DataFrame([cell.model_dump() for cell in cells])
    totals = frame.groupby(["country", "year"])[["k_i", "l_h", "l_u"]].sum()
    if not np.all(totals.to_numpy() > 0.0):
        raise ValidationError("some country-year industry totals are not positive")
    return f"{len(totals)} country-years"
