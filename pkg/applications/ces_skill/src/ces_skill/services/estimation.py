"""
GMM estimation of the differenced skill-premium and wage-rental equations.

Share parameters follow logistic trends in normalised time
tau = (year - first year of the country) / 10:

    lambda_ct = expit(lambda_0 + sum_s lambda_s tau^s)
    mu_ct     = expit(sum_s mu_s tau^s)

so that sigma ln(A_h/A_u) = logit(lambda) - (sigma/rho) ln(1 + e^P_mu) and
rho ln(A_i/A_h) = P_mu. Residuals are differenced over the horizon, which
removes lambda_0 and the wedge levels.
"""

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from scipy.optimize import least_squares
from scipy.special import expit
from scipy.stats import chi2

from ces_skill.core.errors import ConfigError, DomainError, EstimationError, MissingDataError
from ces_skill.core.settings import settings
from ces_skill.models.estimation import (
    MAX_TREND_ORDER,
    ConvergenceReport,
    CountryTrend,
    Elasticity,
    GmmOptions,
    GmmResult,
    MomentSet,
    ThetaVector,
    TrendOrder,
    TrendSpec,
)
from ces_skill.models.instruments import InstrumentSet
from ces_skill.models.panel import CountryYearRecord
from ces_skill.services.covariance import (
    cluster_moment_cov,
    clustered_cov,
    invert_weight,
    is_singular,
    observation_moment_cov,
    unclustered_cov,
)

LOGGER = logging.getLogger(__name__)

SIGMA_GRID = (-0.5, 0.3, 0.6, 0.9)
RHO_GRID = (-1.0, -0.2, 0.3, 0.7)

# largest share strictly below one
_ONE_BELOW = float(np.nextafter(1.0, 0.0))


def default_starts() -> list[tuple[float, float]]:
    """Checkerboard of the (sigma, rho) grid: eight deterministic starting pairs."""
    return [
        (s, r)
        for i, s in enumerate(SIGMA_GRID)
        for j, r in enumerate(RHO_GRID)
        if (i + j) % 2 == 0
    ]


# ----------------------------------------------------------------------
# Trends and share parameters
# ----------------------------------------------------------------------


def normalised_time(year, first_year: int):
    return (np.asarray(year, dtype=float) - first_year) / 10.0


def trend_values(theta: ThetaVector, country: str, tau) -> tuple[np.ndarray, np.ndarray]:
    """(lambda_0 + P_lambda, P_mu) at normalised times `tau`."""
    if country not in theta.trends:
        raise MissingDataError(f"no trend coefficients for {country}")
    trend = theta.trends[country]
    tau = np.asarray(tau, dtype=float)
    p_lambda = trend.lambda_0 + sum(c * tau ** (k + 1) for k, c in enumerate(trend.lam))
    p_mu = sum(c * tau**k for k, c in enumerate(trend.mu))
    return p_lambda + 0.0 * tau, p_mu + 0.0 * tau


def eval_share_params(
    theta: ThetaVector, country: str, year: int, first_year: int
) -> tuple[float, float]:
    p_lambda, p_mu = trend_values(theta, country, normalised_time(year, first_year))
    lam = min(max(float(expit(p_lambda)), np.finfo(float).tiny), _ONE_BELOW)
    mu = min(max(float(expit(p_mu)), np.finfo(float).tiny), _ONE_BELOW)
    return lam, mu


def tech_ratios(theta: ThetaVector, country: str, tau) -> tuple[np.ndarray, np.ndarray]:
    """(ln A_h/A_u, ln A_i/A_h) implied by the trends; A's level drops out of both."""
    p_lambda, p_mu = trend_values(theta, country, tau)
    log_ah_au = p_lambda / theta.sigma - np.logaddexp(p_mu, 0.0) / theta.rho
    log_ai_ah = p_mu / theta.rho
    return log_ah_au, log_ai_ah


# ----------------------------------------------------------------------
# Panel series and design
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CountrySeries:
    country: str
    years: np.ndarray
    log_wh_wu: np.ndarray
    log_wh_ri: np.ndarray
    log_ki_lh: np.ndarray
    log_lh_lu: np.ndarray

    @property
    def first_year(self) -> int:
        return int(self.years[0])


def country_series(records: Iterable[CountryYearRecord]) -> dict[str, CountrySeries]:
    grouped: dict[str, list[CountryYearRecord]] = {}
    for record in records:
        grouped.setdefault(record.country, []).append(record)
    series = {}
    for country, rows in sorted(grouped.items()):
        rows.sort(key=lambda r: r.year)
        years = np.array([r.year for r in rows])
        if np.any(np.diff(years) != 1):
            raise MissingDataError(f"{country}: record years are not contiguous")
        series[country] = CountrySeries(
            country=country,
            years=years,
            log_wh_wu=np.log([r.w_h / r.w_u for r in rows]),
            log_wh_ri=np.log([r.w_h / r.r_i for r in rows]),
            log_ki_lh=np.log([r.k_i / r.l_h for r in rows]),
            log_lh_lu=np.log([r.l_h / r.l_u for r in rows]),
        )
    if not series:
        raise MissingDataError("no country-year records")
    return series


@dataclass
class _Design:
    """Differenced data and trend maps of every usable observation, aligned row by row."""

    observations: list[tuple[str, int]]
    clusters: np.ndarray
    tau_now: np.ndarray
    tau_then: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray
    x_now: np.ndarray
    x_then: np.ndarray
    d_lh_lu: np.ndarray
    d_lh_ki: np.ndarray
    # rows map the full parameter array to P_lambda / P_mu at t and t-h
    lam_diff: np.ndarray
    mu_now: np.ndarray
    mu_then: np.ndarray


def _parameter_offsets(theta: ThetaVector) -> dict[str, tuple[int, int, int]]:
    """Country -> (first lambda index, first mu index, mu count) in the parameter array."""
    offsets = {}
    pos = 2
    for country in theta.countries:
        trend = theta.trends[country]
        offsets[country] = (pos, pos + len(trend.lam), len(trend.mu))
        pos += len(trend.lam) + len(trend.mu)
    return offsets


def _build_design(
    theta: ThetaVector,
    series: dict[str, CountrySeries],
    horizon: int,
    keep: set[tuple[str, int]] | None = None,
) -> _Design:
    if horizon < 1:
        raise DomainError(f"differencing horizon must be at least 1, got {horizon}")
    missing = sorted(set(series) - set(theta.trends))
    if missing:
        raise EstimationError(f"no trend coefficients for countries {missing}")
    offsets = _parameter_offsets(theta)
    n_params = len(theta.parameter_names())

    obs, clusters, now_idx, then_idx, tau_now, tau_then = [], [], [], [], [], []
    for country, s in series.items():
        for k in range(horizon, len(s.years)):
            year = int(s.years[k])
            if keep is not None and (country, year) not in keep:
                continue
            obs.append((country, year))
            clusters.append(country)
            now_idx.append((country, k))
            then_idx.append((country, k - horizon))
            tau_now.append((year - s.first_year) / 10.0)
            tau_then.append((year - horizon - s.first_year) / 10.0)
    if not obs:
        raise MissingDataError(f"no observation has a {horizon}-year difference available")

    def take(attr: str, idx: list[tuple[str, int]]) -> np.ndarray:
        return np.array([getattr(series[c], attr)[k] for c, k in idx])

    tau_now_a, tau_then_a = np.array(tau_now), np.array(tau_then)
    lam_diff = np.zeros((len(obs), n_params))
    mu_now = np.zeros((len(obs), n_params))
    mu_then = np.zeros((len(obs), n_params))
    for n, (country, _) in enumerate(obs):
        lam_start, mu_start, mu_count = offsets[country]
        for k in range(len(theta.trends[country].lam)):
            lam_diff[n, lam_start + k] = tau_now_a[n] ** (k + 1) - tau_then_a[n] ** (k + 1)
        for k in range(mu_count):
            mu_now[n, mu_start + k] = tau_now_a[n] ** k
            mu_then[n, mu_start + k] = tau_then_a[n] ** k

    return _Design(
        observations=obs,
        clusters=np.array(clusters),
        tau_now=tau_now_a,
        tau_then=tau_then_a,
        dy1=take("log_wh_wu", now_idx) - take("log_wh_wu", then_idx),
        dy2=take("log_wh_ri", now_idx) - take("log_wh_ri", then_idx),
        x_now=take("log_ki_lh", now_idx),
        x_then=take("log_ki_lh", then_idx),
        d_lh_lu=take("log_lh_lu", now_idx) - take("log_lh_lu", then_idx),
        d_lh_ki=-(take("log_ki_lh", now_idx) - take("log_ki_lh", then_idx)),
        lam_diff=lam_diff,
        mu_now=mu_now,
        mu_then=mu_then,
    )


def _complementarity_term(sigma: float, rho: float, p_mu: np.ndarray, log_ki_lh: np.ndarray) -> np.ndarray:
    """((sigma-rho)/rho) ln(1 + e^(P_mu + rho x)) - (sigma/rho) ln(1 + e^P_mu), rearranged."""
    inner = np.logaddexp(p_mu + rho * log_ki_lh, 0.0)
    return (sigma / rho) * (inner - np.logaddexp(p_mu, 0.0)) - inner


def _residuals(design: _Design, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sigma, rho = x[0], x[1]
    p_mu_now = design.mu_now @ x
    p_mu_then = design.mu_then @ x
    model1 = (
        design.lam_diff @ x
        + _complementarity_term(sigma, rho, p_mu_now, design.x_now)
        - _complementarity_term(sigma, rho, p_mu_then, design.x_then)
        - (1.0 - sigma) * design.d_lh_lu
    )
    model2 = -(p_mu_now - p_mu_then) - (1.0 - rho) * design.d_lh_ki
    return design.dy1 - model1, design.dy2 - model2


def _complementarity_slopes(
    sigma: float, rho: float, p_mu: np.ndarray, log_ki_lh: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Derivatives of the complementarity term in sigma, rho and P_mu."""
    q = p_mu + rho * log_ki_lh
    gap = np.logaddexp(q, 0.0) - np.logaddexp(p_mu, 0.0)
    s_q = expit(q)
    d_sigma = gap / rho
    d_rho = -(sigma / rho**2) * gap + (sigma / rho - 1.0) * s_q * log_ki_lh
    d_p = (sigma / rho) * (s_q - expit(p_mu)) - s_q
    return d_sigma, d_rho, d_p


def _residual_jacobian(design: _Design, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of v_1 and v_2 in x, one row per observation."""
    sigma, rho = x[0], x[1]
    s_now, r_now, p_now = _complementarity_slopes(sigma, rho, design.mu_now @ x, design.x_now)
    s_then, r_then, p_then = _complementarity_slopes(sigma, rho, design.mu_then @ x, design.x_then)
    # lam_diff, mu_now and mu_then are zero in the sigma and rho columns
    j1 = -(design.lam_diff + p_now[:, None] * design.mu_now - p_then[:, None] * design.mu_then)
    j1[:, 0] = -(s_now - s_then + design.d_lh_lu)
    j1[:, 1] = -(r_now - r_then)
    j2 = design.mu_now - design.mu_then
    j2[:, 1] = -design.d_lh_ki
    return j1, j2


@dataclass(frozen=True)
class ResidualRow:
    country: str
    year: int
    v1: float
    v2: float


def residual_system(
    theta: ThetaVector, panel: Iterable[CountryYearRecord], horizon: int
) -> list[ResidualRow]:
    if abs(theta.rho) < settings.rho_floor:
        raise DomainError(f"rho={theta.rho} is too close to zero")
    design = _build_design(theta, country_series(panel), horizon)
    v1, v2 = _residuals(design, theta.to_array())
    return [
        ResidualRow(c, y, float(a), float(b))
        for (c, y), a, b in zip(design.observations, v1, v2)
    ]


# ----------------------------------------------------------------------
# Moments
# ----------------------------------------------------------------------


@dataclass
class _MomentDesign:
    design: _Design
    series: dict[str, CountrySeries]
    z1: np.ndarray
    z2: np.ndarray

    def moments(self, x: np.ndarray) -> MomentSet:
        v1, v2 = _residuals(self.design, x)
        return MomentSet(
            contributions=np.hstack([self.z1 * v1[:, None], self.z2 * v2[:, None]]),
            clusters=self.design.clusters,
            observations=self.design.observations,
            n_first=self.z1.shape[1],
        )

    def g(self, x: np.ndarray) -> np.ndarray:
        v1, v2 = _residuals(self.design, x)
        n = len(v1)
        return np.concatenate([self.z1.T @ v1, self.z2.T @ v2]) / n

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Exact derivative of g_N in x."""
        j1, j2 = _residual_jacobian(self.design, x)
        return np.vstack([self.z1.T @ j1, self.z2.T @ j2]) / self.z1.shape[0]


def _moment_design(
    theta: ThetaVector, panel: Iterable[CountryYearRecord], instruments: InstrumentSet
) -> _MomentDesign:
    series = country_series(panel)
    lookup = instruments.lookup()
    absent = sorted({c for c, _ in lookup} - set(series))
    if absent:
        raise EstimationError(f"instruments for countries without records: {absent}")
    design = _build_design(theta, series, instruments.horizon, keep=set(lookup))
    if not design.observations:
        raise EstimationError("no observation carries both residuals and instruments")

    inst = np.array(
        [[lookup[obs].values[c] for c in instruments.columns] for obs in design.observations]
    )
    countries = theta.countries
    if instruments.kind == "shift_share":
        # each equation is paired with the instrument of its own regressor
        blocks1, blocks2 = [inst[:, :1]], [inst[:, 1:]]
    else:
        blocks1, blocks2 = [inst], [inst]
    for country in countries:
        own = (design.clusters == country).astype(float)
        blocks1.append((own * inst[:, -1])[:, None])
        trend = theta.trends[country]
        for k in range(1, len(trend.lam) + 1):
            blocks1.append((own * (design.tau_now**k - design.tau_then**k))[:, None])
        for k in range(1, len(trend.mu)):
            blocks2.append((own * (design.tau_now**k - design.tau_then**k))[:, None])
    return _MomentDesign(design=design, series=series, z1=np.hstack(blocks1), z2=np.hstack(blocks2))


def moment_vector(
    theta: ThetaVector, panel: Iterable[CountryYearRecord], instruments: InstrumentSet
) -> tuple[MomentSet, np.ndarray]:
    """
    Moment contributions and g_N.

    The skill-premium equation is paired with the relative-labor shift-share
    instrument, the last instrument column (the capital-skill ratio)
    interacted with a country indicator, and country-specific differenced
    trend powers 1..S_lambda; the wage-rental equation with the capital-skill
    shift-share instrument and powers 1..S_mu. This set is exactly
    identified. Lagged instruments enter both equations with every column.
    With a linear trend the differenced power is constant within a country,
    so it already plays the role of a country intercept.
    """
    md = _moment_design(theta, panel, instruments)
    moments = md.moments(theta.to_array())
    return moments, moments.g


# ----------------------------------------------------------------------
# Optimisation
# ----------------------------------------------------------------------

# sigma or rho within this distance of the upper bound is pinned to it
_PINNED_TOL = 1e-6
# starting values stay this far inside the upper bound
_START_MARGIN = 1e-3
# objectives below this are roots and tie; the lower start index wins
_ROOT_OBJECTIVE = 1e-20


class _Problem:
    """g_N'Wg_N written as the squared norm of C'g_N, with W = CC'."""

    def __init__(self, md: _MomentDesign, weight: np.ndarray):
        self.md = md
        self.weight = weight
        self.chol = np.linalg.cholesky(weight)
        self.upper = 1.0 - settings.bound_margin
        n_params = md.design.lam_diff.shape[1]
        high = np.full(n_params, np.inf)
        high[:2] = self.upper
        self.bounds = (np.full(n_params, -np.inf), high)

    @staticmethod
    def inside(x: np.ndarray) -> np.ndarray:
        """x with rho moved out of the zero guard band."""
        x = np.array(x, dtype=float)
        if abs(x[1]) < settings.rho_floor:
            x[1] = math.copysign(settings.rho_floor, x[1])
        return x

    def objective(self, x: np.ndarray) -> float:
        r = self.chol.T @ self.md.g(self.inside(x))
        value = float(r @ r)
        return value if math.isfinite(value) else math.inf

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = self.inside(x)
        return 2.0 * self.md.jacobian(x).T @ self.weight @ self.md.g(x)

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        r = self.chol.T @ self.md.g(self.inside(x))
        return np.where(np.isfinite(r), r, 1e10)

    def residual_jacobian(self, x: np.ndarray) -> np.ndarray:
        jac = self.chol.T @ self.md.jacobian(self.inside(x))
        return np.where(np.isfinite(jac), jac, 0.0)

    def pinned(self, x: np.ndarray) -> bool:
        return bool(np.any(x[:2] >= self.upper - _PINNED_TOL))


@dataclass
class _Branch:
    index: int
    x: np.ndarray
    objective: float
    history: list[float]
    iterations: int
    status: int
    message: str
    converged: bool
    pinned: bool

    @property
    def rank(self) -> tuple[bool, bool, float, int]:
        return (not self.converged, self.pinned, max(self.objective, _ROOT_OBJECTIVE), self.index)


def _run_branch(problem: _Problem, x0: np.ndarray, index: int) -> _Branch:
    history: list[float] = []

    def jacobian(x: np.ndarray) -> np.ndarray:
        # trf evaluates the Jacobian once per accepted iterate
        history.append(problem.objective(x))
        return problem.residual_jacobian(x)

    fit = least_squares(
        problem.residual_vector,
        x0,
        jac=jacobian,
        bounds=problem.bounds,
        method="trf",
        x_scale="jac",
        xtol=settings.step_tol,
        ftol=settings.cost_tol,
        gtol=settings.cost_tol,
        max_nfev=settings.max_nfev,
    )
    x = problem.inside(fit.x)
    objective = problem.objective(x)
    history.append(objective)
    gradient_norm = float(np.linalg.norm(problem.gradient(x)))
    branch = _Branch(
        index=index,
        x=x,
        objective=objective,
        history=history,
        iterations=int(fit.njev or 0),
        status=int(fit.status),
        message=str(fit.message),
        converged=gradient_norm < settings.gradient_tol or fit.status > 0,
        pinned=problem.pinned(x),
    )
    LOGGER.info(
        "Start %d: objective %.6e after %d iterations%s",
        index,
        objective,
        branch.iterations,
        " (at the bound)" if branch.pinned else "",
    )
    return branch


def _optimise(problem: _Problem, starts: list[np.ndarray]) -> _Branch:
    with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
        branches = list(pool.map(lambda pair: _run_branch(problem, pair[1], pair[0]), enumerate(starts)))
    best = min(branches, key=lambda b: b.rank)
    if best.pinned and best.objective > 0.0:
        LOGGER.warning("Best start ends at the sigma/rho bound")
    LOGGER.info("Start %d wins with objective %.6e", best.index, best.objective)
    return best


def _first_step_weight(md: _MomentDesign) -> tuple[np.ndarray, bool]:
    n = md.z1.shape[0]
    w1, r1 = invert_weight(md.z1.T @ md.z1 / n)
    w2, r2 = invert_weight(md.z2.T @ md.z2 / n)
    weight = np.zeros((w1.shape[0] + w2.shape[0],) * 2)
    weight[: w1.shape[0], : w1.shape[0]] = w1
    weight[w1.shape[0] :, w1.shape[0] :] = w2
    return weight, r1 or r2


def _wage_rental_fit(
    md: _MomentDesign, weight: np.ndarray, slopes: list[int], rho: float | None = None
) -> tuple[float, np.ndarray]:
    """
    Linear GMM on the wage-rental moments, which are linear in rho and the
    mu slopes. With `rho` given only the slopes are fitted. Returns rho and
    the slope values in the order of `slopes`.
    """
    d = md.design
    shift = (d.mu_now - d.mu_then)[:, slopes]
    target = d.dy2 + d.d_lh_ki
    if rho is None:
        regressors = np.hstack([d.d_lh_ki[:, None], -shift])
    else:
        target = target - rho * d.d_lh_ki
        regressors = -shift
    if regressors.shape[1] == 0:
        return float(rho), np.zeros(0)
    n = md.z2.shape[0]
    root = np.linalg.cholesky(weight).T
    coef, *_ = np.linalg.lstsq(root @ md.z2.T @ regressors / n, root @ md.z2.T @ target / n, rcond=None)
    if rho is None:
        return float(coef[0]), coef[1:]
    return float(rho), coef


def _level_start(
    md: _MomentDesign, offsets: dict[str, tuple[int, int, int]], x: np.ndarray
) -> np.ndarray:
    """Fills mu_0 and the lambda slopes from the price levels at x's sigma, rho and mu slopes."""
    x = x.copy()
    sigma, rho = x[0], x[1]
    for country, s in md.series.items():
        lam_start, mu_start, mu_count = offsets[country]
        tau = normalised_time(s.years, s.first_year)
        slope_terms = np.zeros_like(tau)
        for k in range(1, mu_count):
            slope_terms += x[mu_start + k] * tau**k
        x[mu_start] = np.mean(-s.log_wh_ri + (1.0 - rho) * s.log_ki_lh - slope_terms)
        n_lam = mu_start - lam_start
        if n_lam:
            p_mu = x[mu_start] + slope_terms
            target = (
                s.log_wh_wu
                - _complementarity_term(sigma, rho, p_mu, s.log_ki_lh)
                + (1.0 - sigma) * s.log_lh_lu
            )
            coef, *_ = np.linalg.lstsq(np.vander(tau, n_lam + 1, increasing=True), target, rcond=None)
            x[lam_start:mu_start] = coef[1:]
    return x


def _start_pair(sigma: float, rho: float) -> tuple[float, float]:
    upper = 1.0 - settings.bound_margin - _START_MARGIN
    rho = min(rho, upper)
    if abs(rho) < _START_MARGIN:
        rho = math.copysign(_START_MARGIN, rho)
    return min(sigma, upper), rho


def _starting_points(
    md: _MomentDesign, template: ThetaVector, pairs: list[tuple[float, float]]
) -> list[np.ndarray]:
    """
    Data-driven starts: the sigma grid at the instrumented rho, then the
    (sigma, rho) pairs, each with its trend coefficients filled in from the data.
    """
    offsets = _parameter_offsets(template)
    slopes = [mu_start + k for _, mu_start, count in offsets.values() for k in range(1, count)]
    n = md.z2.shape[0]
    weight, _ = invert_weight(md.z2.T @ md.z2 / n)
    n_params = len(template.parameter_names())

    candidates = []
    rho_iv, values = _wage_rental_fit(md, weight, slopes)
    if math.isfinite(rho_iv) and np.all(np.isfinite(values)):
        candidates += [(sigma, rho_iv, values) for sigma in SIGMA_GRID]
    else:
        LOGGER.warning("Wage-rental equation gives no instrumented rho; using the grid only")
    for sigma, rho in pairs:
        candidates.append((sigma, rho, _wage_rental_fit(md, weight, slopes, rho)[1]))

    starts = []
    for sigma, rho, values in candidates:
        x = np.zeros(n_params)
        x[0], x[1] = _start_pair(sigma, rho)
        x[slopes] = values
        x = _level_start(md, offsets, x)
        if np.all(np.isfinite(x)):
            starts.append(x)
    if not starts:
        raise EstimationError("no finite starting point")
    return starts


def gmm_estimate(
    panel: Iterable[CountryYearRecord],
    instruments: InstrumentSet,
    trend_spec: TrendSpec | None = None,
    options: GmmOptions | None = None,
) -> GmmResult:
    options = options or GmmOptions(kind=instruments.kind)
    trend_spec = trend_spec or TrendSpec(
        default=TrendOrder(lambda_order=settings.default_lambda_order, mu_order=settings.default_mu_order)
    )
    panel = list(panel)
    countries = sorted({r.country for r in panel})
    template = ThetaVector.initial(0.5, 0.5, trend_spec, countries)
    md = _moment_design(template, panel, instruments)

    n_obs = md.z1.shape[0]
    n_params = len(template.parameter_names())
    n_moments = md.z1.shape[1] + md.z2.shape[1]
    n_clusters = len(set(md.design.clusters.tolist()))
    if n_moments < n_params:
        raise EstimationError(f"{n_moments} moments cannot identify {n_params} parameters")
    if n_obs < n_params + n_clusters:
        raise EstimationError(
            f"{n_obs} observations are too few for {n_params} parameters and {n_clusters} clusters"
        )
    just_identified = n_moments == n_params

    pairs = options.starts or default_starts()
    starts = _starting_points(md, template, pairs[: options.multistart or settings.multistart])

    ridge_applied = weight_fallback = False
    if options.weight is not None:
        weight = np.asarray(options.weight, dtype=float)
        if weight.shape != (n_moments, n_moments):
            raise EstimationError(f"weight must be {n_moments}x{n_moments}, got {weight.shape}")
    elif just_identified:
        weight = np.eye(n_moments)
    else:
        weight, ridge_applied = _first_step_weight(md)
    best = _optimise(_Problem(md, weight), starts)

    if not just_identified and options.two_step:
        moments = md.moments(best.x)
        if n_clusters > n_moments:
            spread = cluster_moment_cov(moments)
        else:
            LOGGER.warning(
                "%d clusters for %d moments: weighting by the observation-level moment covariance",
                n_clusters,
                n_moments,
            )
            spread = observation_moment_cov(moments)
            weight_fallback = True
        weight, ridged = invert_weight(spread)
        ridge_applied = ridge_applied or ridged
        first_index = best.index
        best = _optimise(_Problem(md, weight), [best.x])
        best.index = first_index

    problem = _Problem(md, weight)
    theta = template.with_array(best.x)
    moments = md.moments(best.x)
    jacobian = md.jacobian(best.x)
    gradient_norm = float(np.linalg.norm(problem.gradient(best.x)))
    if not best.converged:
        LOGGER.warning("GMM did not converge: gradient norm %.3e (%s)", gradient_norm, best.message)
    pseudo_inverse = is_singular(jacobian.T @ weight @ jacobian)

    J = n_obs * best.objective
    J_df = n_moments - n_params
    convergence = ConvergenceReport(
        converged=best.converged,
        gradient_norm=gradient_norm,
        iterations=best.iterations,
        message=best.message,
        start_index=best.index,
        history=best.history,
        ridge_applied=ridge_applied,
        few_clusters=n_clusters < n_params,
        weight_fallback=weight_fallback,
        at_bound=best.pinned,
        pseudo_inverse=pseudo_inverse,
    )
    return GmmResult(
        theta=theta,
        covariance=clustered_cov(moments, jacobian, weight),
        covariance_unclustered=unclustered_cov(moments, jacobian, weight),
        J=J,
        J_df=J_df,
        J_pvalue=j_test(J, J_df) if J_df > 0 else None,
        objective=best.objective,
        convergence=convergence,
        jacobian=jacobian,
        weight=weight,
        n_obs=n_obs,
        n_clusters=n_clusters,
        n_moments=n_moments,
        kind=instruments.kind,
        horizon=instruments.horizon,
    )


# ----------------------------------------------------------------------
# Inference
# ----------------------------------------------------------------------


def j_test(J: float, df: int) -> float | None:
    """Upper-tail chi-square probability; None when there are no overidentifying restrictions."""
    if df == 0:
        return None
    if df < 0 or not (math.isfinite(J) and J >= 0.0):
        raise DomainError(f"J-test needs J >= 0 and df >= 1, got J={J}, df={df}")
    return float(chi2.sf(J, df))


def to_elasticities(
    sigma: float, rho: float, covariance: np.ndarray | None = None
) -> tuple[Elasticity, Elasticity]:
    """1/(1-sigma) and 1/(1-rho) with delta-method standard errors."""
    for name, value in (("sigma", sigma), ("rho", rho)):
        if not (math.isfinite(value) and value < 1.0):
            raise DomainError(f"{name} must be below 1, got {value}")
    out = []
    for k, (name, value) in enumerate((("1/(1-sigma)", sigma), ("1/(1-rho)", rho))):
        point = 1.0 / (1.0 - value)
        se = None
        if covariance is not None:
            se = point**2 * math.sqrt(max(float(covariance[k, k]), 0.0))
        out.append(Elasticity(name, point, se))
    return out[0], out[1]


# ----------------------------------------------------------------------
# Trend-order files and diagnostics
# ----------------------------------------------------------------------

_TREND_LINE = re.compile(r"^\s*([^.\s=]+)\.(lambda|mu)\s*=\s*(\S+)\s*$")


def read_trend_spec(path: Path, countries: Iterable[str] | None = None) -> TrendSpec:
    """Parses `<country|default>.<lambda|mu> = <order>` lines; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: trend-order file not found")
    values: dict[str, dict[str, int]] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _TREND_LINE.match(line)
        if not match:
            raise ConfigError(f"{path}:{number}: expected '<country>.<lambda|mu> = <order>', got {raw!r}")
        key, which, order = match.groups()
        try:
            values.setdefault(key, {})[f"{which}_order"] = int(order)
        except ValueError as exc:
            raise ConfigError(f"{path}:{number}: order must be an integer, got {order!r}") from exc

    base = {"lambda_order": settings.default_lambda_order, "mu_order": settings.default_mu_order}
    try:
        default = TrendOrder(**{**base, **values.pop("default", {})})
        orders = {c: TrendOrder(**{**default.model_dump(), **v}) for c, v in values.items()}
    except PydanticValidationError as exc:
        raise ConfigError(f"{path}: trend orders must lie in 0..{MAX_TREND_ORDER}: {exc}") from exc
    if countries is not None:
        unknown = sorted(set(orders) - set(countries))
        if unknown:
            LOGGER.warning("%s names countries absent from the panel: %s", path, unknown)
    return TrendSpec(default=default, orders=orders)


def write_trend_spec(spec: TrendSpec, path: Path) -> None:
    lines = [
        f"default.lambda = {spec.default.lambda_order}",
        f"default.mu = {spec.default.mu_order}",
    ]
    for country, order in sorted(spec.orders.items()):
        lines += [f"{country}.lambda = {order.lambda_order}", f"{country}.mu = {order.mu_order}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TrendOrderFit:
    country: str
    lambda_order: int
    mu_order: int
    rmse_v1: float
    rmse_v2: float


def trend_order_report(
    panel: Iterable[CountryYearRecord],
    sigma: float,
    rho: float,
    horizon: int,
    max_order: int = MAX_TREND_ORDER,
) -> list[TrendOrderFit]:
    """Residual RMSE per country and trend orders with sigma and rho held fixed."""
    series = country_series(panel)
    fits = []
    for country, s in series.items():
        for a in range(max_order + 1):
            for b in range(max_order + 1):
                theta = ThetaVector(
                    sigma=sigma,
                    rho=rho,
                    trends={country: CountryTrend(lam=(0.0,) * a, mu=(0.0,) * (b + 1))},
                )
                try:
                    design = _build_design(theta, {country: s}, horizon)
                except MissingDataError:
                    continue
                fixed = np.array([sigma, rho])

                def stacked(free: np.ndarray) -> np.ndarray:
                    return np.concatenate(_residuals(design, np.concatenate([fixed, free])))

                fit = least_squares(stacked, np.zeros(a + b + 1), method="trf", x_scale="jac")
                v1, v2 = _residuals(design, np.concatenate([fixed, fit.x]))
                fits.append(
                    TrendOrderFit(
                        country, a, b, float(np.sqrt(np.mean(v1**2))), float(np.sqrt(np.mean(v2**2)))
                    )
                )
    return fits


@dataclass(frozen=True)
class FittedPrices:
    country: str
    year: int
    actual_wh_wu: float
    predicted_wh_wu: float
    actual_wh_ri: float
    predicted_wh_ri: float


def model_levels(theta: ThetaVector, s: CountrySeries) -> tuple[np.ndarray, np.ndarray]:
    """Model-implied ln(w_h/w_u) and ln(w_h/r_i) with unit wedges."""
    tau = normalised_time(s.years, s.first_year)
    p_lambda, p_mu = trend_values(theta, s.country, tau)
    level1 = (
        p_lambda
        + _complementarity_term(theta.sigma, theta.rho, p_mu, s.log_ki_lh)
        - (1.0 - theta.sigma) * s.log_lh_lu
    )
    level2 = -p_mu + (1.0 - theta.rho) * s.log_ki_lh
    return level1, level2


def fitted_relative_prices(
    theta: ThetaVector, panel: Iterable[CountryYearRecord]
) -> list[FittedPrices]:
    """Actual against predicted relative prices, wedges normalised to zero in the first year."""
    rows = []
    for country, s in country_series(panel).items():
        level1, level2 = model_levels(theta, s)
        pred1 = s.log_wh_wu[0] + level1 - level1[0]
        pred2 = s.log_wh_ri[0] + level2 - level2[0]
        for k, year in enumerate(s.years):
            rows.append(
                FittedPrices(
                    country,
                    int(year),
                    float(s.log_wh_wu[k]),
                    float(pred1[k]),
                    float(s.log_wh_ri[k]),
                    float(pred2[k]),
                )
            )
    return rows
