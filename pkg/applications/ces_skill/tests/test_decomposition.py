import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from ces_skill.core.errors import DomainError, MissingDataError, ShapleyEvaluationError
from ces_skill.models.decomposition import (
    CROSS_COUNTRY_FACTORS,
    LABOR_DEMAND_FACTORS,
    SKILL_PREMIUM_FACTORS,
    FactorPath,
    FactorPoint,
)
from ces_skill.models.estimation import ThetaVector
from ces_skill.services.decomposition import (
    decompose_cross_country,
    decompose_labor_demand,
    decompose_skill_premium,
    education_effect,
    effect_series,
    shapley,
    wedge_residuals,
)
from ces_skill.services.production import skill_premium_core

COUNTRY = "C01"


def point(**overrides) -> FactorPoint:
    values = dict(
        k_i=0.5,
        l_h=1.0,
        l_u=3.0,
        w_h=2.0,
        w_u=1.0,
        r_i=0.3,
        log_ah_au=0.2,
        log_ai_ah=-1.0,
        log_wedge_hu=0.0,
        log_wedge_hi=0.0,
    )
    values.update(overrides)
    return FactorPoint(**values)


def draw_point(rng) -> FactorPoint:
    return point(
        k_i=rng.uniform(0.05, 2.0),
        l_h=rng.uniform(0.5, 2.0),
        l_u=rng.uniform(1.0, 4.0),
        w_h=rng.uniform(1.0, 3.0),
        w_u=rng.uniform(0.5, 1.5),
        r_i=rng.uniform(0.1, 0.5),
        log_ah_au=rng.normal(0.0, 0.5),
        log_ai_ah=rng.normal(-1.0, 0.5),
    )


def premium_evaluator(sigma, rho, start: FactorPoint, end: FactorPoint):
    def value(subset):
        pick = lambda factor, attr: getattr(end if factor in subset else start, attr)  # noqa: E731
        return skill_premium_core(
            sigma,
            rho,
            pick("A_h/A_u", "log_ah_au"),
            pick("A_i/A_h", "log_ai_ah"),
            math.log(pick("k_i", "k_i")),
            math.log(pick("l_h_csc", "l_h")),
            math.log(pick("l_h_rlq", "l_h")),
            math.log(pick("l_u", "l_u")),
        )

    return value


def two_year_path(start: FactorPoint, end: FactorPoint) -> FactorPath:
    return FactorPath(country=COUNTRY, points={2000: start, 2010: end})


def theta_for(sim, **changes) -> ThetaVector:
    return replace(sim.truth.theta, **changes)


# ----------------------------------------------------------------------
# Shapley values
# ----------------------------------------------------------------------


def test_additive_evaluator():
    changes = {"a": 1.5, "b": -0.25, "c": 4.0}
    values = shapley(lambda s: sum(changes[f] for f in s), list(changes))
    for factor, change in changes.items():
        assert values[factor] == pytest.approx(change, abs=1e-15)


def test_single_factor_takes_everything():
    assert shapley(lambda s: 7.0 if s else 2.0, ["x"]) == {"x": 5.0}


def test_two_factor_multiplicative_by_hand():
    start, end = {"a": 1.0, "b": 2.0}, {"a": 3.0, "b": 5.0}

    def product(subset):
        pick = {f: (end if f in subset else start)[f] for f in ("a", "b")}
        return pick["a"] * pick["b"]

    values = shapley(product, ["a", "b"])
    assert values["a"] == pytest.approx(0.5 * ((6.0 - 2.0) + (15.0 - 5.0)), abs=1e-15)
    assert values["b"] == pytest.approx(0.5 * ((5.0 - 2.0) + (15.0 - 6.0)), abs=1e-15)


def test_skill_premium_shapley_axioms(rng):
    for _ in range(50):
        start, end = draw_point(rng), draw_point(rng)
        sigma, rho = rng.uniform(-0.5, 0.9), rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.9)
        f = premium_evaluator(sigma, rho, start, end)
        values = shapley(f, SKILL_PREMIUM_FACTORS)

        total = f(frozenset(SKILL_PREMIUM_FACTORS)) - f(frozenset())
        assert math.fsum(values.values()) == pytest.approx(total, abs=1e-10)

        reordered = shapley(f, list(reversed(SKILL_PREMIUM_FACTORS)))
        for factor in SKILL_PREMIUM_FACTORS:
            assert reordered[factor] == pytest.approx(values[factor], abs=1e-12)

        # a factor that does not move contributes nothing
        frozen = replace(end, l_u=start.l_u)
        dummy = shapley(premium_evaluator(sigma, rho, start, frozen), SKILL_PREMIUM_FACTORS)
        assert dummy["l_u"] == pytest.approx(0.0, abs=1e-12)


def test_symmetric_factors_share_equally():
    def f(subset):
        both = len(subset & {"a", "b"})
        return both**2 + (3.0 if "c" in subset else 0.0)

    values = shapley(f, ["a", "b", "c"])
    assert values["a"] == pytest.approx(values["b"], abs=1e-15)
    assert values["c"] == pytest.approx(3.0, abs=1e-15)


def test_shapley_limits():
    with pytest.raises(DomainError):
        shapley(lambda s: 0.0, [f"f{k}" for k in range(9)])
    with pytest.raises(DomainError):
        shapley(lambda s: 0.0, ["a", "a"])


def test_failing_evaluator_names_subset():
    def f(subset):
        if subset == frozenset({"b"}):
            raise ValueError("boom")
        return 0.0

    with pytest.raises(ShapleyEvaluationError) as info:
        shapley(f, ["a", "b"])
    assert info.value.subset == frozenset({"b"})


# ----------------------------------------------------------------------
# Wedges
# ----------------------------------------------------------------------


def test_wedges_vanish_on_noiseless_data(small_sim):
    for hu, hi in wedge_residuals(small_sim.records, small_sim.truth.theta).values():
        assert abs(hu) < 1e-10 and abs(hi) < 1e-10


def test_generated_wedges_are_recovered(wedged_sim):
    recovered = wedge_residuals(wedged_sim.records, wedged_sim.truth.theta)
    for key, (hu, hi) in wedged_sim.truth.wedges.items():
        assert recovered[key][0] == pytest.approx(hu, abs=1e-10)
        assert recovered[key][1] == pytest.approx(hi, abs=1e-10)
    assert np.mean([hu for hu, _ in wedged_sim.truth.wedges.values()]) == pytest.approx(0.05, abs=0.01)


def test_wedges_invariant_to_wage_rescaling(wedged_sim):
    scaled = [r.model_copy(update={"w_h": 4.0 * r.w_h, "w_u": 4.0 * r.w_u}) for r in wedged_sim.records]
    base = wedge_residuals(wedged_sim.records, wedged_sim.truth.theta)
    for key, (hu, _) in wedge_residuals(scaled, wedged_sim.truth.theta).items():
        assert hu == pytest.approx(base[key][0], abs=1e-12)


# ----------------------------------------------------------------------
# Skill premium
# ----------------------------------------------------------------------


def test_closure_on_simulated_panel(wedged_sim):
    theta = wedged_sim.truth.theta
    for country in theta.countries:
        report = decompose_skill_premium(country, theta, wedged_sim.records, 1980, 1999)
        effects = report.effects
        assert math.fsum(report.contributions.values()) == pytest.approx(report.predicted, abs=1e-10)
        assert effects["CSC"] + effects["RLQ"] + effects["RLAT"] + report.residual == pytest.approx(
            report.actual, abs=1e-10
        )


def test_no_complementarity_effect_when_sigma_equals_rho(small_sim):
    theta = theta_for(small_sim, rho=small_sim.truth.theta.sigma)
    report = decompose_skill_premium(COUNTRY, theta, small_sim.records, 1982, 1996)
    assert report.effects["CSC"] == 0.0
    assert education_effect(COUNTRY, theta, small_sim.records, 1982, 1996).amplification == 1.0


def test_only_unskilled_labor_moves():
    theta = ThetaVector(sigma=0.6, rho=-0.4, trends={})
    start = point()
    end = replace(start, l_u=4.5, w_u=0.9)
    report = decompose_skill_premium(COUNTRY, theta, [], 2000, 2010, path=two_year_path(start, end))
    expected = (1.0 - 0.6) * math.log(4.5 / 3.0)
    assert report.predicted == pytest.approx(expected, abs=1e-14)
    assert report.predicted > 0.0
    assert report.contributions["l_u"] == pytest.approx(expected, abs=1e-14)
    for factor in SKILL_PREMIUM_FACTORS:
        if factor != "l_u":
            assert report.contributions[factor] == 0.0


def test_window_errors(small_sim):
    theta = small_sim.truth.theta
    with pytest.raises(DomainError):
        decompose_skill_premium(COUNTRY, theta, small_sim.records, 1990, 1990)
    with pytest.raises(MissingDataError):
        decompose_skill_premium(COUNTRY, theta, small_sim.records, 1985, 2030)
    with pytest.raises(MissingDataError):
        decompose_skill_premium("ZZZ", theta, small_sim.records, 1985, 1990)


# ----------------------------------------------------------------------
# Cross-country, labor demand and education
# ----------------------------------------------------------------------


def test_identical_countries_do_not_differ(small_sim):
    theta = small_sim.truth.theta
    twin = [r.model_copy(update={"country": "TWIN"}) for r in small_sim.records if r.country == COUNTRY]
    theta = replace(theta, trends={**theta.trends, "TWIN": theta.trends[COUNTRY]})
    report = decompose_cross_country(COUNTRY, "TWIN", theta, small_sim.records + twin, 1981, 1995)
    assert all(report.factor_differences[f] == 0.0 for f in CROSS_COUNTRY_FACTORS)
    assert report.data_difference == 0.0
    assert report.observed_share_data is None


def test_cross_country_differences_add_up(wedged_sim):
    theta = wedged_sim.truth.theta
    report = decompose_cross_country("C01", "C03", theta, wedged_sim.records, 1980, 1999)
    assert math.fsum(report.factor_differences.values()) == pytest.approx(report.model_difference, abs=1e-10)
    for share in (report.observed_share_data, report.observed_share_model):
        assert share is None or share >= 0.0


def test_cross_country_window_must_be_shared(small_sim):
    theta = small_sim.truth.theta
    late = [r.model_copy(update={"year": r.year + 30}) for r in small_sim.records if r.country == "C02"]
    records = [r for r in small_sim.records if r.country != "C02"] + late
    with pytest.raises(MissingDataError, match="not shared"):
        decompose_cross_country("C01", "C02", theta, records, 1981, 1995)


def test_labor_demand_constant_point():
    theta = ThetaVector(sigma=0.6, rho=-0.4, trends={})
    path = two_year_path(point(), point())
    report = decompose_labor_demand(COUNTRY, theta, [], 2000, 2010, path=path)
    assert all(v == 0.0 for v in report.contributions.values())


def test_cheaper_ict_capital_raises_skilled_demand():
    theta = ThetaVector(sigma=0.6, rho=-0.4, trends={})
    path = two_year_path(point(), point(r_i=0.15))
    report = decompose_labor_demand(COUNTRY, theta, [], 2000, 2010, path=path)
    assert report.contributions["r_i"] > 0.0


def test_labor_demand_additivity(wedged_sim):
    theta = wedged_sim.truth.theta
    report = decompose_labor_demand("C04", theta, wedged_sim.records, 1981, 1998)
    assert set(report.contributions) == set(LABOR_DEMAND_FACTORS)
    assert math.fsum(report.contributions.values()) == pytest.approx(report.predicted, abs=1e-10)
    assert report.predicted + report.residual == pytest.approx(report.actual, abs=1e-12)


def test_education_parts_add_up(wedged_sim):
    effect = education_effect("C02", wedged_sim.truth.theta, wedged_sim.records, 1980, 1999)
    assert effect.csc + effect.rlq == pytest.approx(effect.total, abs=1e-10)


def test_effect_series(wedged_sim):
    series = effect_series("C05", wedged_sim.truth.theta, wedged_sim.records)
    assert [p.year for p in series] == list(wedged_sim.config.year_range())
    assert (series[0].csc, series[0].rlq, series[0].rlat) == (0.0, 0.0, 0.0)
    for p in series[1:]:
        assert p.csc + p.rlq + p.rlat == pytest.approx(p.predicted, abs=1e-10)


def test_every_window_closes(wedged_sim):
    theta = wedged_sim.truth.theta
    years = list(wedged_sim.config.year_range())
    for start, end in itertools.islice(itertools.combinations(years[::4], 2), 6):
        report = decompose_skill_premium("C06", theta, wedged_sim.records, start, end)
        assert report.predicted + report.residual == pytest.approx(report.actual, abs=1e-12)
