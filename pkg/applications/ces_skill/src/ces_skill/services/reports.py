"""
Tables and text reports written by the command-line front end.

Every writer takes the fingerprint header of the run; frames are built
separately so they can be inspected without touching the filesystem.
"""

import logging
import math
import re
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from ces_skill.core.errors import ConfigError
from ces_skill.core.settings import settings
from ces_skill.models.decomposition import (
    CROSS_COUNTRY_FACTORS,
    EFFECT_GROUP,
    CrossCountryReport,
    DecompositionReport,
    EducationEffect,
    EffectPoint,
    LaborDemandReport,
)
from ces_skill.models.estimation import CountryTrend, GmmResult, ThetaVector
from ces_skill.models.instruments import InstrumentSet
from ces_skill.models.panel import CountryYearRecord
from ces_skill.models.production import PriceBundle, ProductionParams, TechLevels, WedgeBundle
from ces_skill.services.decomposition import factor_path
from ces_skill.services.estimation import TrendOrderFit, to_elasticities
from ces_skill.services.panel import write_table
from ces_skill.services.production import morishima_delta_se, morishima_table

LOGGER = logging.getLogger(__name__)

ESTIMATE_FILES = ("estimates.csv", "covariance.csv", "diagnostics.txt")
DECOMPOSITION_FILES = ("decomposition.csv", "series.csv", "cross_country.csv", "labor_demand.csv", "education.csv")

_TREND_NAME = re.compile(r"^(lambda|mu)_(\d+)\[(.+)\]$")


# ----------------------------------------------------------------------
# Estimates
# ----------------------------------------------------------------------


def estimates_frame(result: GmmResult) -> pd.DataFrame:
    unclustered = np.sqrt(np.clip(np.diag(result.covariance_unclustered), 0.0, None))
    return pd.DataFrame(
        {
            "parameter": result.parameter_names,
            "estimate": result.theta.to_array(),
            "se": result.standard_errors,
            "se_unclustered": unclustered,
        }
    )


def covariance_frame(result: GmmResult) -> pd.DataFrame:
    names = result.parameter_names
    frame = pd.DataFrame(result.covariance, columns=names)
    frame.insert(0, "parameter", names)
    return frame


def diagnostics_text(result: GmmResult, condition: float | None = None) -> str:
    c = result.convergence
    lines = [
        f"instrument = {result.kind}",
        f"horizon = {result.horizon}",
        f"observations = {result.n_obs}",
        f"clusters = {result.n_clusters}",
        f"moments = {result.n_moments}",
        f"parameters = {len(result.parameter_names)}",
        f"objective = {result.objective!r}",
        f"J = {result.J!r}",
        f"J_df = {result.J_df}",
        f"J_pvalue = {'none' if result.J_pvalue is None else repr(result.J_pvalue)}",
        f"converged = {c.converged}",
        f"gradient_norm = {c.gradient_norm!r}",
        f"iterations = {c.iterations}",
        f"start_index = {c.start_index}",
        f"message = {c.message}",
        f"ridge_applied = {c.ridge_applied}",
        f"few_clusters = {c.few_clusters}",
        f"weight_fallback = {c.weight_fallback}",
        f"at_bound = {c.at_bound}",
        f"pseudo_inverse = {c.pseudo_inverse}",
        f"complementarity = {result.theta.sigma > result.theta.rho}",
        f"alpha = {settings.alpha!r} (calibrated, not estimated)",
    ]
    if condition is not None:
        lines.append(f"first_stage_condition = {condition!r}")
    return "\n".join(lines) + "\n"


def write_estimates(
    result: GmmResult, directory: Path, header: str, condition: float | None = None
) -> list[Path]:
    directory = Path(directory)
    paths = [directory / name for name in ESTIMATE_FILES]
    write_table(estimates_frame(result), paths[0], header)
    write_table(covariance_frame(result), paths[1], header)
    paths[2].write_text(f"# {header}\n" + diagnostics_text(result, condition), encoding="utf-8")
    return paths


def read_estimates(path: Path) -> tuple[ThetaVector, np.ndarray | None]:
    """
    Rebuild theta from an estimates.csv (or a simulated truth.csv).

    Returns:
        tuple: The parameter vector and the (sigma, rho) covariance block,
            taken from a sibling covariance.csv when present, else from the
            standard errors, else None.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"{path}: cannot read estimates: {exc}") from exc
    column = "estimate" if "estimate" in frame.columns else "value"
    if "parameter" not in frame.columns or column not in frame.columns:
        raise ConfigError(f"{path}: expected columns parameter and estimate")
    values = dict(zip(frame["parameter"].astype(str), frame[column].astype(float)))
    if "sigma" not in values or "rho" not in values:
        raise ConfigError(f"{path}: sigma and rho are required")

    coefs: dict[str, dict[str, dict[int, float]]] = {}
    for name, value in values.items():
        match = _TREND_NAME.match(name)
        if match:
            which, order, country = match.groups()
            coefs.setdefault(country, {"lambda": {}, "mu": {}})[which][int(order)] = value
    trends = {}
    for country, c in coefs.items():
        lam = [c["lambda"][k] for k in sorted(c["lambda"]) if k > 0]
        mu = [c["mu"][k] for k in sorted(c["mu"])]
        if sorted(k for k in c["lambda"] if k > 0) != list(range(1, len(lam) + 1)) or sorted(c["mu"]) != list(
            range(len(mu))
        ):
            raise ConfigError(f"{path}: trend coefficients of {country} are not contiguous in order")
        trends[country] = CountryTrend(lam=tuple(lam), mu=tuple(mu), lambda_0=c["lambda"].get(0, 0.0))
    theta = ThetaVector(sigma=values["sigma"], rho=values["rho"], trends=trends)

    covariance = None
    sibling = path.with_name("covariance.csv")
    if sibling.is_file():
        cov = pd.read_csv(sibling, comment="#").set_index("parameter")
        covariance = cov.loc[["sigma", "rho"], ["sigma", "rho"]].to_numpy(dtype=float)
    elif "se" in frame.columns:
        se = frame.set_index("parameter")["se"].astype(float)
        covariance = np.diag([se["sigma"] ** 2, se["rho"] ** 2])
    return theta, covariance


def trend_report_frame(fits: Iterable[TrendOrderFit]) -> pd.DataFrame:
    return pd.DataFrame(
        [(f.country, f.lambda_order, f.mu_order, f.rmse_v1, f.rmse_v2) for f in fits],
        columns=["country", "lambda_order", "mu_order", "rmse_premium", "rmse_wage_rental"],
    )


def instruments_frame(instruments: InstrumentSet) -> pd.DataFrame:
    rows = [
        {"country": row.country, "year": row.year, **{c: row.values[c] for c in instruments.columns}}
        for row in instruments.rows
    ]
    return pd.DataFrame(rows, columns=["country", "year", *instruments.columns])


# ----------------------------------------------------------------------
# Elasticities
# ----------------------------------------------------------------------


def sample_mean_point(
    theta: ThetaVector, panel: Iterable[CountryYearRecord]
) -> tuple[TechLevels, PriceBundle, WedgeBundle]:
    """Geometric sample means of prices, technology ratios and wedge residuals."""
    panel = list(panel)
    points = [p for c in theta.countries for p in factor_path(c, theta, panel).points.values()]
    tech = TechLevels.from_log_ratios(
        float(np.mean([p.log_ah_au for p in points])), float(np.mean([p.log_ai_ah for p in points]))
    )
    wedges = WedgeBundle.from_log_ratios(
        float(np.mean([p.log_wedge_hu for p in points])), float(np.mean([p.log_wedge_hi for p in points]))
    )
    countries = set(theta.countries)
    used = [r for r in panel if r.country in countries]
    prices = PriceBundle(
        **{name: math.exp(np.mean([math.log(getattr(r, name)) for r in used])) for name in ("w_h", "w_u", "r_i", "r_o")}
    )
    return tech, prices, wedges


def elasticities_frame(
    theta: ThetaVector, panel: Iterable[CountryYearRecord], covariance: np.ndarray | None = None
) -> pd.DataFrame:
    rows = [
        (e.name, "", "", e.value, e.se)
        for e in to_elasticities(theta.sigma, theta.rho, covariance)
    ]
    tech, prices, wedges = sample_mean_point(theta, panel)
    # share parameters do not move the demand system once tech levels are given
    params = ProductionParams(settings.alpha, theta.sigma, theta.rho, 1.0, 0.5, 0.5)
    for (a, b), value in morishima_table(params, tech, prices, wedges).items():
        se = None
        if covariance is not None:
            se = morishima_delta_se(a, b, params, tech, prices, wedges, covariance)
        rows.append(("morishima", a, b, value, se))
    return pd.DataFrame(rows, columns=["elasticity", "row", "column", "value", "se"])


# ----------------------------------------------------------------------
# Decompositions
# ----------------------------------------------------------------------


def decomposition_frame(reports: Iterable[DecompositionReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        for factor, value in r.contributions.items():
            rows.append(
                (r.country, r.from_year, r.to_year, factor, EFFECT_GROUP[factor], value, r.predicted, r.actual, r.residual)
            )
    return pd.DataFrame(
        rows,
        columns=[
            "country",
            "from_year",
            "to_year",
            "factor",
            "effect_group",
            "contribution",
            "predicted",
            "actual",
            "residual",
        ],
    )


def series_frame(points: Iterable[EffectPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (p.country, p.year, p.csc, p.rlq, p.rlat, p.predicted, p.actual, p.observed_at_mean_tech)
            for p in points
        ],
        columns=["country", "year", "csc", "rlq", "rlat", "predicted", "actual", "observed_at_mean_tech"],
    )


def cross_country_frame(reports: Iterable[CrossCountryReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        rows.append(
            {
                "base": r.base,
                "other": r.other,
                "from_year": r.from_year,
                "to_year": r.to_year,
                "data_difference": r.data_difference,
                "model_difference": r.model_difference,
                **{f: r.factor_differences[f] for f in CROSS_COUNTRY_FACTORS},
                "observed_share_data": r.observed_share_data,
                "observed_share_model": r.observed_share_model,
            }
        )
    columns = [
        "base",
        "other",
        "from_year",
        "to_year",
        "data_difference",
        "model_difference",
        *CROSS_COUNTRY_FACTORS,
        "observed_share_data",
        "observed_share_model",
    ]
    return pd.DataFrame(rows, columns=columns)


def labor_demand_frame(reports: Iterable[LaborDemandReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        for factor, value in r.contributions.items():
            rows.append((r.country, r.from_year, r.to_year, factor, value, r.predicted, r.actual, r.residual))
    return pd.DataFrame(
        rows,
        columns=["country", "from_year", "to_year", "factor", "contribution", "predicted", "actual", "residual"],
    )


def education_frame(effects: Iterable[EducationEffect]) -> pd.DataFrame:
    return pd.DataFrame(
        [(e.country, e.from_year, e.to_year, e.total, e.csc, e.rlq, e.amplification) for e in effects],
        columns=["country", "from_year", "to_year", "total", "csc", "rlq", "amplification"],
    )
