import math
from dataclasses import dataclass, field
from typing import Literal

from pydantic import BaseModel, ConfigDict, field_validator

InstrumentKind = Literal["shift_share", "lagged"]
IndustryInput = Literal["k_i", "l_h", "l_u"]

INDUSTRY_INPUTS: tuple[IndustryInput, ...] = ("k_i", "l_h", "l_u")

# instrumented regressors of the two estimating equations
SHIFT_SHARE_COLUMNS = ("d_lh_lu", "d_ki_lh")


def lagged_columns(lags: list[int] | tuple[int, ...]) -> tuple[str, ...]:
    ordered = sorted(lags)
    return tuple(f"lh_lu_lag{lag}" for lag in ordered) + tuple(
        f"ki_lh_lag{lag}" for lag in ordered
    )


class IndustryCell(BaseModel):
    """Input quantities of one industry in one country-year."""

    model_config = ConfigDict(frozen=True)

    country: str
    industry: str
    year: int
    k_i: float
    l_h: float
    l_u: float

    @field_validator("k_i", "l_h", "l_u")
    @classmethod
    def quantity_positive(cls, value: float, info) -> float:
        if not (math.isfinite(value) and value > 0.0):
            raise ValueError(f"{info.field_name} must be positive, got {value}")
        return value


@dataclass(frozen=True)
class InstrumentSeries:
    country: str
    year: int
    values: dict[str, float]


@dataclass(frozen=True)
class InstrumentSet:
    kind: InstrumentKind
    horizon: int
    columns: tuple[str, ...]
    rows: list[InstrumentSeries] = field(default_factory=list)

    def lookup(self) -> dict[tuple[str, int], InstrumentSeries]:
        return {(row.country, row.year): row for row in self.rows}
