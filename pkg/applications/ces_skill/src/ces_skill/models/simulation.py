from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from ces_skill.core.errors import DomainError
from ces_skill.models.estimation import MAX_TREND_ORDER, ThetaVector
from ces_skill.models.instruments import IndustryCell
from ces_skill.models.panel import CountryYearRecord
from ces_skill.models.production import check_substitution

# elasticities 1/(1-sigma) and 1/(1-rho) of the published shift-share estimates
REFERENCE_SIGMA = 1.0 - 1.0 / 6.336
REFERENCE_RHO = 1.0 - 1.0 / 0.852


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0)
    countries: int = Field(default=14, ge=1)
    years: int = Field(default=36, ge=2)
    first_year: int = 1980
    industries: int = Field(default=10, ge=1)

    alpha: float = 1.0 / 3.0
    sigma: float = REFERENCE_SIGMA
    rho: float = REFERENCE_RHO
    A: float = 1.0
    lambda_order: int = Field(default=1, ge=0, le=MAX_TREND_ORDER)
    mu_order: int = Field(default=1, ge=0, le=MAX_TREND_ORDER)

    # annual log drifts of the country aggregates
    drift_k_i: float = 0.08
    drift_k_o: float = 0.02
    drift_l_h: float = 0.03
    drift_l_u: float = -0.01
    # sd of industry shocks common to every country, and of country-industry noise
    global_shock_sd: float = Field(default=0.05, ge=0.0)
    idiosyncratic_sd: float = Field(default=0.01, ge=0.0)
    k_o_noise_sd: float = Field(default=0.01, ge=0.0)

    # log-normal wedge shocks per market, and constant log wedge ratios
    wedge_sd: float = Field(default=0.0, ge=0.0)
    wedge_level_hu: float = 0.0
    wedge_level_hi: float = 0.0
    # wedge shocks accumulate at this lag, so their differences over it are independent
    wedge_walk_lag: int | None = Field(default=None, ge=1)

    shift_share: bool = True

    @field_validator("sigma", "rho")
    @classmethod
    def substitution(cls, value: float, info: ValidationInfo) -> float:
        try:
            check_substitution(info.field_name, value)
        except DomainError as exc:
            raise ValueError(str(exc)) from exc
        return value

    @field_validator("alpha")
    @classmethod
    def alpha_share(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def enough_countries(self) -> "SimConfig":
        if self.shift_share and self.countries < 2:
            raise ValueError("shift-share instruments need at least 2 countries")
        return self

    def country_ids(self) -> list[str]:
        return [f"C{k + 1:02d}" for k in range(self.countries)]

    def year_range(self) -> range:
        return range(self.first_year, self.first_year + self.years)


@dataclass(frozen=True)
class TruthRecord:
    theta: ThetaVector
    alpha: float
    # (country, year) -> (ln A_h/A_u, ln A_i/A_h)
    tech: dict[tuple[str, int], tuple[float, float]]
    # (country, year) -> (ln omega_h/omega_u, ln omega_h/omega_i)
    wedges: dict[tuple[str, int], tuple[float, float]]


@dataclass(frozen=True)
class SimulationResult:
    config: SimConfig
    records: list[CountryYearRecord]
    industry: list[IndustryCell]
    truth: TruthRecord
    replication: int = 0


@dataclass(frozen=True)
class MonteCarloRow:
    parameter: str
    truth: float
    mean_estimate: float
    bias: float
    rmse: float
    coverage: float
    mean_se: float
    mean_se_unclustered: float


@dataclass
class MonteCarloTable:
    rows: list[MonteCarloRow]
    replications: int
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.replications if self.replications else 0.0
