"""
Row-level domain types of the ingested panel.

Values are assumed to be in comparable units already: currency conversion
and deflation are not performed anywhere in the package.
"""

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, field_validator

from ces_skill.models.instruments import IndustryCell

SkillLevel = Literal["high", "medium", "low"]
# "all" marks a country without the gender/age breakdown
Gender = Literal["male", "female", "all"]
AgeGroup = Literal["young", "middle", "old", "all"]
Asset = Literal["ict", "non_ict"]

RECORD_FIELDS = ("w_h", "w_u", "r_i", "r_o", "k_i", "k_o", "l_h", "l_u")


def _positive(value: float, name: str) -> float:
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"{name} must be positive, got {value}")
    return value


class RawLaborCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    country: str
    year: int
    skill: SkillLevel
    gender: Gender
    age_group: AgeGroup
    wage: float
    hours: float

    @field_validator("wage")
    @classmethod
    def wage_positive(cls, value: float) -> float:
        return _positive(value, "wage")

    @field_validator("hours")
    @classmethod
    def hours_nonnegative(cls, value: float) -> float:
        if not (math.isfinite(value) and value >= 0.0):
            raise ValueError(f"hours must be non-negative, got {value}")
        return value

    @property
    def group(self) -> tuple[str, str, str]:
        return (self.skill, self.gender, self.age_group)


class InvestmentCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    country: str
    year: int
    asset: Asset
    q: float
    delta: float

    @field_validator("q")
    @classmethod
    def q_positive(cls, value: float) -> float:
        return _positive(value, "q")

    @field_validator("delta")
    @classmethod
    def delta_rate(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {value}")
        return value


class CpiSeries(BaseModel):
    model_config = ConfigDict(frozen=True)

    country: str
    levels: dict[int, float]

    @field_validator("levels")
    @classmethod
    def contiguous_positive(cls, value: dict[int, float]) -> dict[int, float]:
        if not value:
            raise ValueError("CPI series is empty")
        years = sorted(value)
        gaps = sorted(set(range(years[0], years[-1] + 1)) - set(years))
        if gaps:
            raise ValueError(f"CPI years are not contiguous, missing {gaps}")
        for year in years:
            _positive(value[year], f"cpi[{year}]")
        return {year: value[year] for year in years}


class CapitalCell(BaseModel):
    """Capital service quantities used when records are built from raw tables."""

    model_config = ConfigDict(frozen=True)

    country: str
    year: int
    k_i: float
    k_o: float

    @field_validator("k_i", "k_o")
    @classmethod
    def quantity_positive(cls, value: float, info) -> float:
        return _positive(value, info.field_name)


class CountryYearRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    country: str
    year: int
    w_h: float
    w_u: float
    r_i: float
    r_o: float
    k_i: float
    k_o: float
    l_h: float
    l_u: float

    @field_validator(*RECORD_FIELDS)
    @classmethod
    def value_positive(cls, value: float, info) -> float:
        return _positive(value, info.field_name)


class PanelData(BaseModel):
    """Everything `load_panel` read; absent files leave their table empty."""

    model_config = ConfigDict(frozen=True)

    labor: list[RawLaborCell] = []
    investment: list[InvestmentCell] = []
    cpi: dict[str, CpiSeries] = {}
    capital: list[CapitalCell] = []
    records: list[CountryYearRecord] = []
    industry: list[IndustryCell] = []

    def year_ranges(self) -> dict[str, tuple[int, int]]:
        ranges: dict[str, tuple[int, int]] = {}
        for record in self.records:
            low, high = ranges.get(record.country, (record.year, record.year))
            ranges[record.country] = (min(low, record.year), max(high, record.year))
        return ranges
