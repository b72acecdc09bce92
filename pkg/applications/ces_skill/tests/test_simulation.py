import math
from collections import defaultdict

import pytest

from ces_skill.core.errors import EstimationError
from ces_skill.models.estimation import GmmOptions
from ces_skill.models.simulation import REFERENCE_RHO, REFERENCE_SIGMA, SimConfig
from ces_skill.services.production import skill_premium_core, wage_rental_core
from ces_skill.services.simulation import monte_carlo, simulate_panel, truth_frame, write_simulation

# mirrors the session-scoped small_sim fixture
SMALL = SimConfig(seed=11, countries=6, years=20, industries=4)


def test_same_seed_same_panel(small_sim):
    again = simulate_panel(SMALL)
    assert again.records == small_sim.records
    assert again.industry == small_sim.industry
    assert again.truth.theta == small_sim.truth.theta


def test_replications_differ(small_sim):
    other = simulate_panel(SMALL, replication=1)
    assert other.records != small_sim.records


def test_reference_parameters():
    cfg = SimConfig()
    assert 1.0 / (1.0 - cfg.sigma) == pytest.approx(6.336, abs=1e-12)
    assert 1.0 / (1.0 - cfg.rho) == pytest.approx(0.852, abs=1e-12)
    assert (cfg.sigma, cfg.rho) == (REFERENCE_SIGMA, REFERENCE_RHO)


def test_industry_cells_add_up_to_country_totals(small_sim):
    totals = defaultdict(lambda: [0.0, 0.0, 0.0])
    for c in small_sim.industry:
        total = totals[(c.country, c.year)]
        total[0] += c.k_i
        total[1] += c.l_h
        total[2] += c.l_u
    for r in small_sim.records:
        k_i, l_h, l_u = totals[(r.country, r.year)]
        assert k_i == pytest.approx(r.k_i, rel=1e-12)
        assert l_h == pytest.approx(r.l_h, rel=1e-12)
        assert l_u == pytest.approx(r.l_u, rel=1e-12)


def test_prices_satisfy_relative_price_equations(wedged_sim):
    theta = wedged_sim.truth.theta
    for r in wedged_sim.records:
        log_ah_au, log_ai_ah = wedged_sim.truth.tech[(r.country, r.year)]
        hu, hi = wedged_sim.truth.wedges[(r.country, r.year)]
        log_lh = math.log(r.l_h)
        premium = skill_premium_core(
            theta.sigma, theta.rho, log_ah_au, log_ai_ah, math.log(r.k_i), log_lh, log_lh, math.log(r.l_u)
        )
        assert math.log(r.w_h / r.w_u) == pytest.approx(premium + hu, abs=1e-10)
        rental = wage_rental_core(theta.rho, log_ai_ah, math.log(r.k_i), log_lh)
        assert math.log(r.w_h / r.r_i) == pytest.approx(rental + hi, abs=1e-10)


@pytest.mark.parametrize("sigma, rho", [(REFERENCE_SIGMA, REFERENCE_RHO), (-0.5, 0.4)])
def test_premium_follows_ict_capital(sigma, rho):
    slow = simulate_panel(SMALL.model_copy(update={"sigma": sigma, "rho": rho}))
    fast = simulate_panel(SMALL.model_copy(update={"sigma": sigma, "rho": rho, "drift_k_i": 0.12}))
    direction = math.copysign(1.0, sigma - rho)
    for a, b in zip(slow.records, fast.records):
        assert (a.l_h, a.l_u) == (b.l_h, b.l_u)
        if a.year == SMALL.first_year:
            continue
        change = math.log(b.w_h / b.w_u) - math.log(a.w_h / a.w_u)
        assert math.copysign(1.0, change) == direction


def test_wedge_walk_makes_lagged_differences_independent():
    cfg = SMALL.model_copy(update={"wedge_sd": 0.02, "wedge_walk_lag": 5})
    iid = simulate_panel(cfg.model_copy(update={"wedge_walk_lag": None}))
    walk = simulate_panel(cfg)
    for country in cfg.country_ids():
        for year in cfg.year_range():
            if year - 5 < cfg.first_year:
                continue
            hu = walk.truth.wedges[(country, year)][0] - walk.truth.wedges[(country, year - 5)][0]
            # the lagged difference of the walk is the fresh shock of the iid draw
            fresh = iid.truth.wedges[(country, year)][0] - cfg.wedge_level_hu
            assert hu == pytest.approx(fresh, abs=1e-12)


def test_written_files_are_byte_identical(tmp_path):
    first = write_simulation(simulate_panel(SMALL), tmp_path / "a", header="config-fingerprint: abc")
    second = write_simulation(simulate_panel(SMALL), tmp_path / "b", header="config-fingerprint: abc")
    assert [p.name for p in first] == ["panel.csv", "industry.csv", "truth.csv"]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
    assert first[0].read_text().startswith("# config-fingerprint: abc\n")


def test_truth_frame_lists_every_parameter(small_sim):
    frame = truth_frame(small_sim.truth)
    names = list(frame["parameter"])
    assert names[:3] == ["sigma", "rho", "alpha"]
    assert "lambda_0[C01]" in names
    assert len(names) == 3 + SMALL.countries + len(small_sim.truth.theta.parameter_names()) - 2


@pytest.mark.parametrize(
    "update",
    [
        {"sigma": 1.0},
        {"rho": 2.0},
        {"sigma": 0.0},
        {"rho": -1e-12},
        {"alpha": 1.0},
        {"countries": 1},
        {"years": 1},
        {"wedge_sd": -0.1},
        {"wedge_walk_lag": 0},
    ],
)
def test_invalid_configs(update):
    with pytest.raises(ValueError):
        SimConfig(**update)


def test_guard_band_is_rejected_before_simulating():
    with pytest.raises(ValueError, match="guard band"):
        SimConfig(rho=1e-11)


def test_single_country_without_shift_share():
    assert SimConfig(countries=1, shift_share=False).country_ids() == ["C01"]


def test_noiseless_monte_carlo_is_unbiased():
    table = monte_carlo(SMALL, replications=1, options=GmmOptions(multistart=2))
    assert table.failures == []
    for row in table.rows:
        assert abs(row.bias) < 1e-6
        assert row.rmse == pytest.approx(abs(row.bias), abs=1e-15)


def test_monte_carlo_needs_replications():
    with pytest.raises(EstimationError):
        monte_carlo(SMALL, replications=0)


@pytest.mark.slow
def test_monte_carlo_with_wedges():
    cfg = SimConfig(seed=2024, wedge_sd=0.01)
    table = monte_carlo(cfg, replications=200)
    assert table.failure_rate < 0.05
    for row in table.rows:
        assert abs(row.bias) < 0.02
        assert 0.85 <= row.coverage <= 0.99


@pytest.mark.slow
def test_clustered_and_unclustered_errors_agree_under_independent_shocks():
    cfg = SimConfig(seed=7, wedge_sd=0.01, wedge_walk_lag=5)
    table = monte_carlo(cfg, replications=100)
    assert table.failure_rate < 0.05
    for row in table.rows:
        assert abs(row.mean_se / row.mean_se_unclustered - 1.0) < 0.25
