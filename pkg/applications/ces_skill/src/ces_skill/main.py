import argparse
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import pydantic

from ces_skill.core.errors import CesSkillError, ConfigError, MissingDataError
from ces_skill.core.settings import settings
from ces_skill.models.cli import RunConfig
from ces_skill.models.estimation import GmmOptions, GmmResult, ThetaVector
from ces_skill.models.instruments import InstrumentSet
from ces_skill.models.panel import CountryYearRecord, PanelData
from ces_skill.models.simulation import SimConfig
from ces_skill.services import reports
from ces_skill.services.decomposition import (
    decompose_cross_country,
    decompose_labor_demand,
    decompose_skill_premium,
    education_effect,
    effect_series,
)
from ces_skill.services.estimation import gmm_estimate, read_trend_spec, trend_order_report
from ces_skill.services.instruments import build_instruments, first_stage_condition, panel_as_industry_cells
from ces_skill.services.panel import build_records, load_panel, validate_report, write_table
from ces_skill.services.simulation import simulate_panel, write_simulation
from ces_skill.utils import config_fingerprint, fingerprint_header, guard_outputs

logging.basicConfig(level=logging.INFO)
LOGGER = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Pipelines
# ----------------------------------------------------------------------


def _load(config: RunConfig) -> PanelData:
    return load_panel(
        labor=config.labor,
        investment=config.investment,
        cpi=config.cpi,
        panel=config.panel,
        industry=config.industry,
        capital=config.capital,
    )


def _records(data: PanelData) -> list[CountryYearRecord]:
    if data.records:
        return list(data.records)
    if data.labor and data.investment and data.cpi and data.capital:
        return build_records(data)
    raise ConfigError("need --panel, or --labor, --investment, --cpi and --capital to build one")


def _instruments(config: RunConfig, data: PanelData, records: list[CountryYearRecord]) -> InstrumentSet:
    if data.industry:
        cells = data.industry
    elif config.instrument == "lagged":
        cells = panel_as_industry_cells(records)
    else:
        raise ConfigError("shift-share instruments need --industry")
    return build_instruments(cells, kind=config.instrument, horizon=config.horizon)


def _estimate(config: RunConfig, data: PanelData) -> tuple[GmmResult, list[CountryYearRecord], float]:
    records = _records(data)
    instruments = _instruments(config, data, records)
    countries = sorted({r.country for r in records})
    trend_spec = read_trend_spec(config.trend_config, countries) if config.trend_config else None
    result = gmm_estimate(records, instruments, trend_spec, GmmOptions(kind=config.instrument, horizon=config.horizon))
    LOGGER.info(
        "sigma = %.6f, rho = %.6f, J = %.4f (df %d)",
        result.theta.sigma,
        result.theta.rho,
        result.J,
        result.J_df,
    )
    return result, records, first_stage_condition(instruments)


def _windows(config: RunConfig, records: list[CountryYearRecord], countries: list[str]) -> dict[str, tuple[int, int]]:
    ranges: dict[str, tuple[int, int]] = {}
    for r in records:
        if r.country in countries:
            low, high = ranges.get(r.country, (r.year, r.year))
            ranges[r.country] = (min(low, r.year), max(high, r.year))
    windows = {}
    for country, (first, last) in sorted(ranges.items()):
        start = first if config.from_year is None else config.from_year
        end = last if config.to_year is None else config.to_year
        if first <= start < end <= last:
            windows[country] = (start, end)
        else:
            LOGGER.warning("%s: window %d-%d outside %d-%d, skipped", country, start, end, first, last)
    if not windows:
        raise MissingDataError("no country covers the requested decomposition window")
    return windows


def _decompose(
    config: RunConfig, theta: ThetaVector, records: list[CountryYearRecord], paths: dict[str, Path], header: str
) -> None:
    windows = _windows(config, records, theta.countries)
    premium, demand, education, series = [], [], [], []
    for country, (start, end) in windows.items():
        premium.append(decompose_skill_premium(country, theta, records, start, end))
        demand.append(decompose_labor_demand(country, theta, records, start, end))
        education.append(education_effect(country, theta, records, start, end))
        series += effect_series(country, theta, records)

    base = config.base or next(iter(windows))
    if base not in windows:
        raise ConfigError(f"--base {base} is not an estimated country with data in the window")
    start = max(w[0] for w in windows.values()) if config.from_year is None else config.from_year
    end = min(w[1] for w in windows.values()) if config.to_year is None else config.to_year
    cross = []
    if start < end:
        for other in windows:
            if other == base:
                continue
            try:
                cross.append(decompose_cross_country(base, other, theta, records, start, end))
            except MissingDataError as exc:
                LOGGER.warning("cross-country %s vs %s skipped: %s", base, other, exc)

    write_table(reports.decomposition_frame(premium), paths["decomposition.csv"], header)
    write_table(reports.series_frame(series), paths["series.csv"], header)
    write_table(reports.cross_country_frame(cross), paths["cross_country.csv"], header)
    write_table(reports.labor_demand_frame(demand), paths["labor_demand.csv"], header)
    write_table(reports.education_frame(education), paths["education.csv"], header)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_validate(config: RunConfig, header: str) -> int:
    data = _load(config)
    failed = False
    for check in validate_report(data):
        print(f"{check.table}\t{check.check}\t{check.status}\t{check.detail}")
        failed = failed or check.status != "ok"
    return 2 if failed else 0


def cmd_simulate(config: RunConfig, header: str) -> int:
    guard_outputs(config.out, ("panel.csv", "industry.csv", "truth.csv"), config.force)
    try:
        sim_config = SimConfig(
            seed=config.seed,
            countries=config.countries,
            years=config.years,
            industries=config.industries,
            wedge_sd=config.wedge_sd,
        )
    except pydantic.ValidationError as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from exc
    LOGGER.info("Simulating with config fingerprint %s", config_fingerprint(sim_config.model_dump(mode="json")))
    for path in write_simulation(simulate_panel(sim_config), config.out, header):
        print(path)
    return 0


def cmd_instruments(config: RunConfig, header: str) -> int:
    (path,) = guard_outputs(config.out, ("instruments.csv",), config.force)
    data = _load(config)
    instruments = _instruments(config, data, _records(data) if not data.industry else [])
    write_table(reports.instruments_frame(instruments), path, header)
    print(path)
    return 0


def cmd_estimate(config: RunConfig, header: str) -> int:
    names = list(reports.ESTIMATE_FILES) + (["trend_report.csv"] if config.trend_report else [])
    guard_outputs(config.out, names, config.force)
    data = _load(config)
    result, records, condition = _estimate(config, data)
    paths = reports.write_estimates(result, config.out, header, condition)
    if config.trend_report:
        fits = trend_order_report(records, result.theta.sigma, result.theta.rho, result.horizon)
        paths.append(Path(config.out) / "trend_report.csv")
        write_table(reports.trend_report_frame(fits), paths[-1], header)
    for path in paths:
        print(path)
    return 0


def cmd_elasticities(config: RunConfig, header: str) -> int:
    config.require("estimates")
    (path,) = guard_outputs(config.out, ("elasticities.csv",), config.force)
    theta, covariance = reports.read_estimates(config.estimates)
    records = _records(_load(config))
    write_table(reports.elasticities_frame(theta, records, covariance), path, header)
    print(path)
    return 0


def cmd_decompose(config: RunConfig, header: str) -> int:
    config.require("estimates")
    paths = dict(zip(reports.DECOMPOSITION_FILES, guard_outputs(config.out, reports.DECOMPOSITION_FILES, config.force)))
    theta, _ = reports.read_estimates(config.estimates)
    _decompose(config, theta, _records(_load(config)), paths, header)
    for path in paths.values():
        print(path)
    return 0


def cmd_report(config: RunConfig, header: str) -> int:
    names = [*reports.ESTIMATE_FILES, "elasticities.csv", *reports.DECOMPOSITION_FILES]
    paths = dict(zip(names, guard_outputs(config.out, names, config.force)))
    data = _load(config)
    result, records, condition = _estimate(config, data)
    reports.write_estimates(result, config.out, header, condition)
    frame = reports.elasticities_frame(result.theta, records, result.covariance[:2, :2])
    write_table(frame, paths["elasticities.csv"], header)
    _decompose(config, result.theta, records, paths, header)
    for path in paths.values():
        print(path)
    return 0


COMMANDS: dict[str, Callable[[RunConfig, str], int]] = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "instruments": cmd_instruments,
    "estimate": cmd_estimate,
    "elasticities": cmd_elasticities,
    "decompose": cmd_decompose,
    "report": cmd_report,
}


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------


def _parents() -> dict[str, argparse.ArgumentParser]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--force", action="store_true", default=None, help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", default=None)

    inputs = argparse.ArgumentParser(add_help=False)
    for name in ("panel", "industry", "labor", "investment", "cpi", "capital"):
        inputs.add_argument(f"--{name}", type=Path, help=f"{name} CSV file")

    instrument = argparse.ArgumentParser(add_help=False)
    instrument.add_argument("--instrument", choices=["shift_share", "lagged"])
    instrument.add_argument("--horizon", type=int, help="difference horizon in years")

    estimation = argparse.ArgumentParser(add_help=False)
    estimation.add_argument("--trend-config", type=Path, help="trend-order file")
    estimation.add_argument("--trend-report", action="store_true", default=None)

    estimates = argparse.ArgumentParser(add_help=False)
    estimates.add_argument("--estimates", type=Path, help="estimates.csv of a previous run")

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument("--base", help="base country of cross-country comparisons")
    window.add_argument("--from-year", type=int)
    window.add_argument("--to-year", type=int)

    simulation = argparse.ArgumentParser(add_help=False)
    simulation.add_argument("--countries", type=int)
    simulation.add_argument("--years", type=int)
    simulation.add_argument("--industries", type=int)
    simulation.add_argument("--wedge-sd", type=float)
    return {
        "common": common,
        "inputs": inputs,
        "instrument": instrument,
        "estimation": estimation,
        "estimates": estimates,
        "window": window,
        "simulation": simulation,
    }


def build_parser() -> argparse.ArgumentParser:
    p = _parents()
    layout = {
        "validate": ("common", "inputs"),
        "simulate": ("common", "simulation"),
        "instruments": ("common", "inputs", "instrument"),
        "estimate": ("common", "inputs", "instrument", "estimation"),
        "elasticities": ("common", "inputs", "estimates"),
        "decompose": ("common", "inputs", "estimates", "window"),
        "report": ("common", "inputs", "instrument", "estimation", "window"),
    }
    parser = argparse.ArgumentParser(
        prog="ces-skill",
        description="Nested CES estimation and decomposition of the skill premium.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, parents in layout.items():
        sub.add_parser(name, parents=[p[k] for k in parents])
    return parser


def run(argv: list[str] | None = None) -> int:
    """Parse `argv`, run one subcommand and map failures to exit codes."""
    try:
        namespace = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        config = RunConfig(**{k: v for k, v in vars(namespace).items() if v is not None})
    except pydantic.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code

    logging.getLogger().setLevel(logging.DEBUG if config.verbose else settings.log_level)
    try:
        config.check_inputs()
        return COMMANDS[config.subcommand](config, fingerprint_header(config.fingerprint_fields()))
    except CesSkillError as exc:
        LOGGER.error("%s failed: %s", config.subcommand, exc)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        LOGGER.error("%s failed with a numerical error: %s", config.subcommand, exc)
        return CesSkillError.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
