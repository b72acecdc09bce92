"""
Synthetic country-industry panels generated from known structural parameters.

Random draws come from numpy's counter-based Philox generator keyed by
SeedSequence([seed, replication, country, stream]); country 0 holds the
industry shocks shared by every country and country k+1 the draws of the
k-th country. Each stream draws its years in order, so a panel is fully
determined by (seed, replication) regardless of execution order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from ces_skill.core.errors import CesSkillError, EstimationError
from ces_skill.core.settings import settings
from ces_skill.models.estimation import CountryTrend, GmmOptions, ThetaVector, TrendOrder, TrendSpec
from ces_skill.models.instruments import INDUSTRY_INPUTS, IndustryCell
from ces_skill.models.panel import CountryYearRecord
from ces_skill.models.production import InputBundle, ProductionParams, WedgeBundle
from ces_skill.models.simulation import MonteCarloRow, MonteCarloTable, SimConfig, SimulationResult, TruthRecord
from ces_skill.services.estimation import eval_share_params, gmm_estimate, tech_ratios
from ces_skill.services.instruments import build_instruments
from ces_skill.services.panel import records_frame, write_table
from ces_skill.services.production import foc_prices

LOGGER = logging.getLogger(__name__)

STREAM_TRENDS = 0
STREAM_SHARES = 1
STREAM_NOISE = 2
STREAM_WEDGES = 3
STREAM_CAPITAL = 4
STREAM_GLOBAL = 5

# base-year country totals before the country size factor
BASE_LEVELS = {"k_i": 0.05, "l_h": 1.0, "l_u": 3.0, "k_o": 3.0}


def stream(seed: int, replication: int, country: int, kind: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replication, country, kind])))


def _random_walk(rng: np.random.Generator, sd: float, shape: tuple[int, ...]) -> np.ndarray:
    """Cumulated N(0, sd) increments along the last axis, starting at 0."""
    steps = rng.normal(0.0, sd, size=shape[:-1] + (shape[-1] - 1,))
    return np.concatenate([np.zeros(shape[:-1] + (1,)), np.cumsum(steps, axis=-1)], axis=-1)


def _draw_trend(cfg: SimConfig, rng: np.random.Generator) -> CountryTrend:
    lambda_0 = rng.uniform(-0.5, 0.5)
    lam = [rng.uniform(0.1, 0.4)] + list(rng.normal(0.0, 0.02, size=2))
    mu = [rng.uniform(-3.0, -2.0), rng.uniform(0.2, 0.6)] + list(rng.normal(0.0, 0.02, size=2))
    return CountryTrend(
        lam=tuple(float(v) for v in lam[: cfg.lambda_order]),
        mu=tuple(float(v) for v in mu[: cfg.mu_order + 1]),
        lambda_0=float(lambda_0),
    )


def simulate_panel(cfg: SimConfig, replication: int = 0) -> SimulationResult:
    years = list(cfg.year_range())
    T, D = len(years), cfg.industries
    t = np.arange(T, dtype=float)
    drifts = {"k_i": cfg.drift_k_i, "l_h": cfg.drift_l_h, "l_u": cfg.drift_l_u}

    common = _random_walk(stream(cfg.seed, replication, 0, STREAM_GLOBAL), cfg.global_shock_sd, (3, D, T))
    base_wedge = WedgeBundle.from_log_ratios(cfg.wedge_level_hu, cfg.wedge_level_hi)

    records, cells, trends = [], [], {}
    tech, wedges = {}, {}
    for c, country in enumerate(cfg.country_ids()):
        key = c + 1
        trend = _draw_trend(cfg, stream(cfg.seed, replication, key, STREAM_TRENDS))
        trends[country] = trend

        share_rng = stream(cfg.seed, replication, key, STREAM_SHARES)
        size = math.exp(share_rng.uniform(-0.5, 0.5))
        noise = _random_walk(stream(cfg.seed, replication, key, STREAM_NOISE), cfg.idiosyncratic_sd, (3, D, T))
        z = np.empty((3, D, T))
        for j, name in enumerate(INDUSTRY_INPUTS):
            base = size * BASE_LEVELS[name] * share_rng.dirichlet(np.full(D, 2.0))
            z[j] = base[:, None] * np.exp(drifts[name] * t[None, :] + common[j] + noise[j])
        totals = z.sum(axis=1)

        capital_rng = stream(cfg.seed, replication, key, STREAM_CAPITAL)
        k_o = size * BASE_LEVELS["k_o"] * np.exp(cfg.drift_k_o * t + _random_walk(capital_rng, cfg.k_o_noise_sd, (T,)))
        shocks = stream(cfg.seed, replication, key, STREAM_WEDGES).normal(0.0, cfg.wedge_sd, size=(3, T))
        if cfg.wedge_walk_lag:
            for k in range(cfg.wedge_walk_lag, T):
                shocks[:, k] += shocks[:, k - cfg.wedge_walk_lag]

        theta_c = ThetaVector(sigma=cfg.sigma, rho=cfg.rho, trends={country: trend})
        log_ah_au, log_ai_ah = tech_ratios(theta_c, country, t / 10.0)
        for k, year in enumerate(years):
            lam, mu = eval_share_params(theta_c, country, year, years[0])
            params = ProductionParams(cfg.alpha, cfg.sigma, cfg.rho, cfg.A, lam, mu)
            x = InputBundle(k_i=totals[0, k], k_o=float(k_o[k]), l_h=totals[1, k], l_u=totals[2, k])
            omega = WedgeBundle(
                omega_h=base_wedge.omega_h * math.exp(shocks[0, k]),
                omega_u=base_wedge.omega_u * math.exp(shocks[1, k]),
                omega_i=base_wedge.omega_i * math.exp(shocks[2, k]),
            )
            prices = foc_prices(params, x, omega)
            records.append(
                CountryYearRecord(
                    country=country,
                    year=year,
                    w_h=prices.w_h,
                    w_u=prices.w_u,
                    r_i=prices.r_i,
                    r_o=prices.r_o,
                    k_i=x.k_i,
                    k_o=x.k_o,
                    l_h=x.l_h,
                    l_u=x.l_u,
                )
            )
            tech[(country, year)] = (float(log_ah_au[k]), float(log_ai_ah[k]))
            wedges[(country, year)] = (
                math.log(omega.omega_h / omega.omega_u),
                math.log(omega.omega_h / omega.omega_i),
            )
            for d in range(D):
                cells.append(
                    IndustryCell(
                        country=country,
                        industry=f"D{d + 1:02d}",
                        year=year,
                        k_i=z[0, d, k],
                        l_h=z[1, d, k],
                        l_u=z[2, d, k],
                    )
                )

    truth = TruthRecord(
        theta=ThetaVector(sigma=cfg.sigma, rho=cfg.rho, trends=trends),
        alpha=cfg.alpha,
        tech=tech,
        wedges=wedges,
    )
    LOGGER.debug("Simulated replication %d: %d records, %d industry cells", replication, len(records), len(cells))
    return SimulationResult(config=cfg, records=records, industry=cells, truth=truth, replication=replication)


def truth_frame(truth: TruthRecord) -> pd.DataFrame:
    theta = truth.theta
    rows = [("sigma", theta.sigma), ("rho", theta.rho), ("alpha", truth.alpha)]
    rows += [(f"lambda_0[{c}]", theta.trends[c].lambda_0) for c in theta.countries]
    rows += list(zip(theta.parameter_names()[2:], theta.to_array()[2:]))
    return pd.DataFrame(rows, columns=["parameter", "value"])


def write_simulation(result: SimulationResult, directory: Path, header: str | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    industry = pd.DataFrame([cell.model_dump() for cell in result.industry])[
        ["country", "industry", "year", "k_i", "l_h", "l_u"]
    ]
    outputs = {
        "panel.csv": records_frame(result.records),
        "industry.csv": industry,
        "truth.csv": truth_frame(result.truth),
    }
    paths = []
    for name, frame in outputs.items():
        write_table(frame, directory / name, header)
        paths.append(directory / name)
    return paths


# ----------------------------------------------------------------------
# Monte Carlo
# ----------------------------------------------------------------------


def _replicate(
    cfg: SimConfig, replication: int, options: GmmOptions
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sim = simulate_panel(cfg, replication)
    instruments = build_instruments(sim.industry, kind=options.kind, horizon=options.horizon)
    spec = TrendSpec(default=TrendOrder(lambda_order=cfg.lambda_order, mu_order=cfg.mu_order))
    result = gmm_estimate(sim.records, instruments, spec, options)
    unclustered = np.sqrt(np.clip(np.diag(result.covariance_unclustered)[:2], 0.0, None))
    return result.theta.to_array()[:2], result.standard_errors[:2], unclustered


def monte_carlo(
    cfg: SimConfig, replications: int, options: GmmOptions | None = None, level: float = 0.95
) -> MonteCarloTable:
    """Bias, RMSE and confidence-interval coverage of sigma and rho over replications."""
    if replications < 1:
        raise EstimationError(f"need at least one replication, got {replications}")
    options = options or GmmOptions()

    def run(replication: int):
        try:
            return _replicate(cfg, replication, options)
        except (CesSkillError, np.linalg.LinAlgError) as exc:
            LOGGER.warning("Replication %d failed: %s", replication, exc)
            return exc

    with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
        outcomes = list(pool.map(run, range(replications)))

    failures = [(r, str(o)) for r, o in enumerate(outcomes) if isinstance(o, Exception)]
    done = [o for o in outcomes if not isinstance(o, Exception)]
    if not done:
        raise EstimationError(f"all {replications} replications failed")
    estimates = np.array([e for e, _, _ in done])
    errors = np.array([s for _, s, _ in done])
    errors_unclustered = np.array([u for _, _, u in done])
    truth = np.array([cfg.sigma, cfg.rho])
    z = norm.ppf(0.5 + level / 2.0)

    rows = []
    for k, name in enumerate(("sigma", "rho")):
        deviation = estimates[:, k] - truth[k]
        rows.append(
            MonteCarloRow(
                parameter=name,
                truth=float(truth[k]),
                mean_estimate=float(estimates[:, k].mean()),
                bias=float(deviation.mean()),
                rmse=float(np.sqrt(np.mean(deviation**2))),
                coverage=float(np.mean(np.abs(deviation) <= z * errors[:, k])),
                mean_se=float(errors[:, k].mean()),
                mean_se_unclustered=float(errors_unclustered[:, k].mean()),
            )
        )
    LOGGER.info("Monte Carlo: %d replications, %d failed", replications, len(failures))
    return MonteCarloTable(rows=rows, replications=replications, failures=failures)
