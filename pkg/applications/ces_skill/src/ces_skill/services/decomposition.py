"""
Shapley decompositions of changes in the skill premium and in relative labor demand.

Factor values are switched from their `from_year` to their `to_year` values;
the value of a coalition is the model expression with the coalition at
`to_year` and every other factor at `from_year`. Wedges never enter a
coalition: their change closes the gap between actual and predicted changes.
"""

import itertools
import logging
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from ces_skill.core.errors import DomainError, MissingDataError, ShapleyEvaluationError
from ces_skill.models.decomposition import (
    CROSS_COUNTRY_FACTORS,
    LABOR_DEMAND_FACTORS,
    OBSERVED_FACTORS,
    SKILL_PREMIUM_FACTORS,
    CrossCountryReport,
    DecompositionReport,
    EducationEffect,
    EffectPoint,
    FactorPath,
    FactorPoint,
    LaborDemandReport,
)
from ces_skill.models.estimation import ThetaVector
from ces_skill.models.panel import CountryYearRecord
from ces_skill.services.estimation import country_series, model_levels, normalised_time, tech_ratios
from ces_skill.services.production import relative_demand_core, skill_premium_core

LOGGER = logging.getLogger(__name__)

MAX_SHAPLEY_FACTORS = 8

# below this the relative-quantity part is treated as zero
_RLQ_EPS = 1e-12


def shapley(
    evaluator: Callable[[frozenset[str]], float], factors: Sequence[str]
) -> dict[str, float]:
    """
    Exact Shapley values by enumerating every ordering of the factors.

    Each coalition is evaluated once. Marginal contributions are summed with
    `math.fsum`, so the result does not depend on the enumeration order.
    """
    factors = list(factors)
    if not 1 <= len(factors) <= MAX_SHAPLEY_FACTORS:
        raise DomainError(f"exact Shapley supports 1..{MAX_SHAPLEY_FACTORS} factors, got {len(factors)}")
    if len(set(factors)) != len(factors):
        raise DomainError(f"factor names must be distinct, got {factors}")

    values: dict[frozenset[str], float] = {}

    def value(subset: frozenset[str]) -> float:
        if subset not in values:
            try:
                values[subset] = float(evaluator(subset))
            except Exception as exc:
                raise ShapleyEvaluationError(subset, exc) from exc
        return values[subset]

    margins: dict[str, list[float]] = {f: [] for f in factors}
    n_orders = 0
    for order in itertools.permutations(factors):
        n_orders += 1
        coalition: frozenset[str] = frozenset()
        for factor in order:
            joined = coalition | {factor}
            margins[factor].append(value(joined) - value(coalition))
            coalition = joined
    return {f: math.fsum(m) / n_orders for f, m in margins.items()}


# ----------------------------------------------------------------------
# Factor paths
# ----------------------------------------------------------------------


def wedge_residuals(
    panel: Iterable[CountryYearRecord], theta: ThetaVector
) -> dict[tuple[str, int], tuple[float, float]]:
    """Levels of ln(omega_h/omega_u) and ln(omega_h/omega_i) left unexplained by the model."""
    out = {}
    for country, s in country_series(panel).items():
        level1, level2 = model_levels(theta, s)
        for k, year in enumerate(s.years):
            out[(country, int(year))] = (
                float(s.log_wh_wu[k] - level1[k]),
                float(s.log_wh_ri[k] - level2[k]),
            )
    return out


def factor_path(country: str, theta: ThetaVector, panel: Iterable[CountryYearRecord]) -> FactorPath:
    panel = [r for r in panel if r.country == country]
    if not panel:
        raise MissingDataError(f"no records for {country}")
    wedges = wedge_residuals(panel, theta)
    panel.sort(key=lambda r: r.year)
    first = panel[0].year
    log_ah_au, log_ai_ah = tech_ratios(theta, country, normalised_time([r.year for r in panel], first))
    points = {}
    for k, r in enumerate(panel):
        hu, hi = wedges[(country, r.year)]
        points[r.year] = FactorPoint(
            k_i=r.k_i,
            l_h=r.l_h,
            l_u=r.l_u,
            w_h=r.w_h,
            w_u=r.w_u,
            r_i=r.r_i,
            log_ah_au=float(log_ah_au[k]),
            log_ai_ah=float(log_ai_ah[k]),
            log_wedge_hu=hu,
            log_wedge_hi=hi,
        )
    return FactorPath(country=country, points=points)


def _window(path: FactorPath, from_year: int, to_year: int) -> tuple[FactorPoint, FactorPoint]:
    if from_year >= to_year:
        raise DomainError(f"from_year {from_year} must precede to_year {to_year}")
    missing = [y for y in (from_year, to_year) if y not in path.points]
    if missing:
        raise MissingDataError(f"{path.country}: years {missing} outside {path.years[0]}-{path.years[-1]}")
    return path.points[from_year], path.points[to_year]


def _premium_inputs(start: FactorPoint, end: FactorPoint, subset: frozenset[str]) -> dict[str, float]:
    def pick(factor: str, attr: str) -> float:
        return getattr(end if factor in subset else start, attr)

    return {
        "log_ah_au": pick("A_h/A_u", "log_ah_au"),
        "log_ai_ah": pick("A_i/A_h", "log_ai_ah"),
        "log_ki": math.log(pick("k_i", "k_i")),
        "log_lh_csc": math.log(pick("l_h_csc", "l_h")),
        "log_lh_rlq": math.log(pick("l_h_rlq", "l_h")),
        "log_lu": math.log(pick("l_u", "l_u")),
    }


def _premium_value(theta: ThetaVector, start: FactorPoint, end: FactorPoint, subset: frozenset[str]) -> float:
    return float(skill_premium_core(theta.sigma, theta.rho, **_premium_inputs(start, end, subset)))


def decompose_skill_premium(
    country: str,
    theta: ThetaVector,
    panel: Iterable[CountryYearRecord],
    from_year: int,
    to_year: int,
    path: FactorPath | None = None,
) -> DecompositionReport:
    path = path or factor_path(country, theta, panel)
    start, end = _window(path, from_year, to_year)
    contributions = shapley(lambda s: _premium_value(theta, start, end, s), SKILL_PREMIUM_FACTORS)
    predicted = _premium_value(theta, start, end, frozenset(SKILL_PREMIUM_FACTORS)) - _premium_value(
        theta, start, end, frozenset()
    )
    actual = math.log(end.w_h / end.w_u) - math.log(start.w_h / start.w_u)
    return DecompositionReport(
        country=country,
        from_year=from_year,
        to_year=to_year,
        contributions=contributions,
        predicted=predicted,
        actual=actual,
        residual=actual - predicted,
    )


def decompose_cross_country(
    base_country: str,
    other: str,
    theta: ThetaVector,
    panel: Iterable[CountryYearRecord],
    from_year: int,
    to_year: int,
) -> CrossCountryReport:
    panel = list(panel)
    reports = {}
    for country in (base_country, other):
        try:
            reports[country] = decompose_skill_premium(country, theta, panel, from_year, to_year)
        except MissingDataError as exc:
            raise MissingDataError(f"window {from_year}-{to_year} not shared: {exc}") from exc
    base, comp = reports[base_country].merged_skilled(), reports[other].merged_skilled()
    diffs = {f: base[f] - comp[f] for f in CROSS_COUNTRY_FACTORS}
    data_diff = reports[base_country].actual - reports[other].actual
    model_diff = reports[base_country].predicted - reports[other].predicted
    observed = math.fsum(diffs[f] for f in OBSERVED_FACTORS)
    return CrossCountryReport(
        base=base_country,
        other=other,
        from_year=from_year,
        to_year=to_year,
        data_difference=data_diff,
        model_difference=model_diff,
        factor_differences=diffs,
        observed_share_data=_observed_share(observed, data_diff),
        observed_share_model=_observed_share(observed, model_diff),
    )


def _observed_share(observed: float, total: float) -> float | None:
    """Percent of a difference explained by observed factors, floored at zero."""
    if abs(total) < _RLQ_EPS:
        return None
    return max(100.0 * observed / total, 0.0)


def _demand_value(theta: ThetaVector, start: FactorPoint, end: FactorPoint, subset: frozenset[str]) -> float:
    def pick(factor: str, attr: str) -> float:
        return getattr(end if factor in subset else start, attr)

    return float(
        relative_demand_core(
            theta.sigma,
            theta.rho,
            math.log(pick("r_i", "r_i")),
            math.log(pick("w_h", "w_h")),
            math.log(pick("w_u", "w_u")),
            pick("A_h/A_u", "log_ah_au"),
            pick("A_i/A_h", "log_ai_ah"),
            start.log_wedge_hu,
            start.log_wedge_hi,
        )
    )


def decompose_labor_demand(
    country: str,
    theta: ThetaVector,
    panel: Iterable[CountryYearRecord],
    from_year: int,
    to_year: int,
    path: FactorPath | None = None,
) -> LaborDemandReport:
    """Shapley split of the predicted change in ln(l_h/l_u), wedges held at from_year."""
    path = path or factor_path(country, theta, panel)
    start, end = _window(path, from_year, to_year)
    contributions = shapley(lambda s: _demand_value(theta, start, end, s), LABOR_DEMAND_FACTORS)
    predicted = _demand_value(theta, start, end, frozenset(LABOR_DEMAND_FACTORS)) - _demand_value(
        theta, start, end, frozenset()
    )
    actual = math.log(end.l_h / end.l_u) - math.log(start.l_h / start.l_u)
    return LaborDemandReport(
        country=country,
        from_year=from_year,
        to_year=to_year,
        contributions=contributions,
        predicted=predicted,
        actual=actual,
        residual=actual - predicted,
    )


def education_effect(
    country: str,
    theta: ThetaVector,
    panel: Iterable[CountryYearRecord],
    from_year: int,
    to_year: int,
) -> EducationEffect:
    report = decompose_skill_premium(country, theta, panel, from_year, to_year)
    csc = report.contributions["l_h_csc"]
    rlq = report.contributions["l_h_rlq"]
    total = csc + rlq
    amplification = total / rlq if abs(rlq) >= _RLQ_EPS else None
    if amplification is None:
        LOGGER.warning("%s %d-%d: relative-quantity part is zero, no amplification ratio", country, from_year, to_year)
    return EducationEffect(country, from_year, to_year, total, csc, rlq, amplification)


def effect_series(
    country: str, theta: ThetaVector, panel: Iterable[CountryYearRecord]
) -> list[EffectPoint]:
    """
    Cumulative effects from the first year to every year.

    `observed_at_mean_tech` is the change attributable to k_i, l_h and l_u
    alone with relative technology held at its sample mean in logs.
    """
    path = factor_path(country, theta, panel)
    years = path.years
    first = path.points[years[0]]
    mean_ah_au = float(np.mean([p.log_ah_au for p in path.points.values()]))
    mean_ai_ah = float(np.mean([p.log_ai_ah for p in path.points.values()]))

    def observed(point: FactorPoint) -> float:
        log_lh = math.log(point.l_h)
        return float(
            skill_premium_core(
                theta.sigma,
                theta.rho,
                mean_ah_au,
                mean_ai_ah,
                math.log(point.k_i),
                log_lh,
                log_lh,
                math.log(point.l_u),
            )
        )

    base_observed = observed(first)
    series = [EffectPoint(country, years[0], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)]
    for year in years[1:]:
        report = decompose_skill_premium(country, theta, panel, years[0], year, path=path)
        effects = report.effects
        series.append(
            EffectPoint(
                country=country,
                year=year,
                csc=effects["CSC"],
                rlq=effects["RLQ"],
                rlat=effects["RLAT"],
                predicted=report.predicted,
                actual=report.actual,
                observed_at_mean_tech=observed(path.points[year]) - base_observed,
            )
        )
    return series
