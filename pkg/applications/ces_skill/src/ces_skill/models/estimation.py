import math
from dataclasses import dataclass, field, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ces_skill.core.errors import DomainError
from ces_skill.models.instruments import InstrumentKind

MAX_TREND_ORDER = 3


class TrendOrder(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_order: int = Field(default=1, ge=0, le=MAX_TREND_ORDER)
    mu_order: int = Field(default=1, ge=0, le=MAX_TREND_ORDER)


class TrendSpec(BaseModel):
    """Polynomial trend orders per country; unlisted countries use `default`."""

    model_config = ConfigDict(frozen=True)

    default: TrendOrder = TrendOrder()
    orders: dict[str, TrendOrder] = {}

    def order_of(self, country: str) -> TrendOrder:
        return self.orders.get(country, self.default)


@dataclass(frozen=True)
class CountryTrend:
    """
    Trend coefficients of one country.

    `lam` holds the slope terms of the lambda polynomial (orders 1..S); its
    intercept `lambda_0` differences out of estimation and only matters for
    levels, so it is carried as a normalisation rather than estimated.
    `mu` holds orders 0..S of the mu polynomial.
    """

    lam: tuple[float, ...] = ()
    mu: tuple[float, ...] = (0.0,)
    lambda_0: float = 0.0

    @property
    def order(self) -> TrendOrder:
        return TrendOrder(lambda_order=len(self.lam), mu_order=len(self.mu) - 1)


@dataclass(frozen=True)
class ThetaVector:
    sigma: float
    rho: float
    trends: dict[str, CountryTrend]

    def __post_init__(self):
        for name in ("sigma", "rho"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value < 1.0):
                raise DomainError(f"{name} must be a finite real below 1, got {value}")
        for country, trend in self.trends.items():
            if not trend.mu:
                raise DomainError(f"{country}: mu polynomial needs an intercept")
            if not all(math.isfinite(v) for v in (*trend.lam, *trend.mu, trend.lambda_0)):
                raise DomainError(f"{country}: trend coefficients must be finite")

    @property
    def countries(self) -> list[str]:
        return sorted(self.trends)

    @classmethod
    def initial(
        cls, sigma: float, rho: float, spec: TrendSpec, countries
    ) -> "ThetaVector":
        trends = {}
        for country in sorted(countries):
            order = spec.order_of(country)
            trends[country] = CountryTrend(
                lam=(0.0,) * order.lambda_order, mu=(0.0,) * (order.mu_order + 1)
            )
        return cls(sigma=sigma, rho=rho, trends=trends)

    def trend_spec(self) -> TrendSpec:
        return TrendSpec(orders={c: t.order for c, t in self.trends.items()})

    def parameter_names(self) -> list[str]:
        names = ["sigma", "rho"]
        for country in self.countries:
            trend = self.trends[country]
            names += [f"lambda_{k + 1}[{country}]" for k in range(len(trend.lam))]
            names += [f"mu_{k}[{country}]" for k in range(len(trend.mu))]
        return names

    def to_array(self) -> np.ndarray:
        values = [self.sigma, self.rho]
        for country in self.countries:
            values += [*self.trends[country].lam, *self.trends[country].mu]
        return np.asarray(values, dtype=float)

    def with_array(self, values: np.ndarray) -> "ThetaVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.parameter_names()),):
            raise DomainError(
                f"expected {len(self.parameter_names())} parameters, got {values.shape}"
            )
        trends = {}
        pos = 2
        for country in self.countries:
            trend = self.trends[country]
            n_lam, n_mu = len(trend.lam), len(trend.mu)
            trends[country] = replace(
                trend,
                lam=tuple(float(v) for v in values[pos : pos + n_lam]),
                mu=tuple(float(v) for v in values[pos + n_lam : pos + n_lam + n_mu]),
            )
            pos += n_lam + n_mu
        return ThetaVector(sigma=float(values[0]), rho=float(values[1]), trends=trends)


@dataclass
class MomentSet:
    """
    Per-observation moment contributions.

    Row n of `contributions` stacks z_1 v_1 and z_2 v_2 of observation n;
    the first `n_first` columns belong to the skill-premium equation.
    """

    contributions: np.ndarray
    clusters: np.ndarray
    observations: list[tuple[str, int]]
    n_first: int

    @property
    def n_obs(self) -> int:
        return self.contributions.shape[0]

    @property
    def n_moments(self) -> int:
        return self.contributions.shape[1]

    @property
    def g(self) -> np.ndarray:
        return self.contributions.mean(axis=0)


@dataclass
class GmmOptions:
    kind: InstrumentKind = "shift_share"
    horizon: int | None = None
    multistart: int | None = None
    # (sigma, rho) starting pairs replacing the default grid
    starts: list[tuple[float, float]] | None = None
    two_step: bool = True
    # replaces the first-step weight; any positive definite matrix
    weight: np.ndarray | None = None


@dataclass
class ConvergenceReport:
    converged: bool
    gradient_norm: float
    iterations: int
    message: str
    start_index: int
    history: list[float] = field(default_factory=list)
    ridge_applied: bool = False
    few_clusters: bool = False
    weight_fallback: bool = False
    at_bound: bool = False
    # G'WG was singular and the full covariance used its pseudo-inverse
    pseudo_inverse: bool = False


@dataclass
class GmmResult:
    theta: ThetaVector
    covariance: np.ndarray
    covariance_unclustered: np.ndarray
    J: float
    J_df: int
    J_pvalue: float | None
    objective: float
    convergence: ConvergenceReport
    jacobian: np.ndarray
    weight: np.ndarray
    n_obs: int
    n_clusters: int
    n_moments: int
    kind: InstrumentKind = "shift_share"
    horizon: int = 5

    @property
    def parameter_names(self) -> list[str]:
        return self.theta.parameter_names()

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class Elasticity:
    name: str
    value: float
    se: float | None
