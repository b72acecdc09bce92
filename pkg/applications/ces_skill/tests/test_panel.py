import math

import pytest

from ces_skill.core.errors import DuplicateKeyError, MissingDataError, ValidationError
from ces_skill.models.panel import CpiSeries, InvestmentCell, RawLaborCell
from ces_skill.services.panel import (
    adjust_hours,
    adjust_wages,
    build_records,
    interest_rate,
    load_panel,
    rental_price,
    save_panel,
    validate_report,
)

PANEL_HEADER = "country,year,w_h,w_u,r_i,r_o,k_i,k_o,l_h,l_u\n"


def write(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


def labor(country, year, skill, gender, age, wage, hours) -> RawLaborCell:
    return RawLaborCell(
        country=country, year=year, skill=skill, gender=gender, age_group=age, wage=wage, hours=hours
    )


def flat_cpi(first: int = 1990, last: int = 2010, level: float = 100.0) -> CpiSeries:
    return CpiSeries(country="AAA", levels={year: level for year in range(first, last + 1)})


def investment(q_by_year: dict[int, float], delta: float) -> list[InvestmentCell]:
    return [InvestmentCell(country="AAA", year=y, asset="ict", q=q, delta=delta) for y, q in q_by_year.items()]


# ----------------------------------------------------------------------
# Reading
# ----------------------------------------------------------------------


def test_minimal_panel(tmp_path):
    path = write(
        tmp_path / "panel.csv",
        PANEL_HEADER + "AAA,2000,2,1,0.2,0.1,1,3,1,2\nAAA,2001,2.1,1,0.2,0.1,1.1,3,1,2\n",
    )
    panel = load_panel(panel=path)
    assert len(panel.records) == 2
    assert panel.year_ranges() == {"AAA": (2000, 2001)}


def test_fingerprint_comment_is_ignored(tmp_path):
    path = write(tmp_path / "panel.csv", "# config-fingerprint: abc\n" + PANEL_HEADER + "AAA,2000,2,1,0.2,0.1,1,3,1,2\n")
    assert len(load_panel(panel=path).records) == 1


def test_nonpositive_wage_is_located(tmp_path):
    path = write(tmp_path / "panel.csv", PANEL_HEADER + "AAA,2000,2,1,0.2,0.1,1,3,1,2\nBBB,2001,-2,1,0.2,0.1,1,3,1,2\n")
    with pytest.raises(ValidationError) as info:
        load_panel(panel=path)
    message = str(info.value)
    assert "w_h" in message and "BBB" in message and "2001" in message and "row 2" in message


def test_duplicate_key(tmp_path):
    path = write(tmp_path / "panel.csv", PANEL_HEADER + "AAA,2000,2,1,0.2,0.1,1,3,1,2\nAAA,2000,2,1,0.2,0.1,1,3,1,2\n")
    with pytest.raises(DuplicateKeyError):
        load_panel(panel=path)


def test_missing_column(tmp_path):
    path = write(tmp_path / "panel.csv", "country,year,w_h\nAAA,2000,2\n")
    with pytest.raises(ValidationError, match="missing columns"):
        load_panel(panel=path)


def test_gap_in_years(tmp_path):
    path = write(tmp_path / "panel.csv", PANEL_HEADER + "AAA,2000,2,1,0.2,0.1,1,3,1,2\nAAA,2002,2,1,0.2,0.1,1,3,1,2\n")
    with pytest.raises(MissingDataError, match="2001"):
        load_panel(panel=path)


def test_industry_sets_must_match(tmp_path):
    path = write(
        tmp_path / "industry.csv",
        "country,industry,year,k_i,l_h,l_u\nAAA,D1,2000,1,1,1\nAAA,D2,2000,1,1,1\nBBB,D1,2000,1,1,1\n",
    )
    with pytest.raises(ValidationError, match="industry set"):
        load_panel(industry=path)


def test_save_then_load(tmp_path, small_sim):
    from ces_skill.models.panel import PanelData

    original = PanelData(records=small_sim.records, industry=small_sim.industry)
    save_panel(original, tmp_path, header="config-fingerprint: test")
    loaded = load_panel(panel=tmp_path / "panel.csv", industry=tmp_path / "industry.csv")
    assert loaded.records == original.records
    assert sorted(loaded.industry, key=lambda c: (c.country, c.industry, c.year)) == sorted(
        original.industry, key=lambda c: (c.country, c.industry, c.year)
    )


# ----------------------------------------------------------------------
# Composition adjustment
# ----------------------------------------------------------------------


def test_adjusted_wage_two_equal_groups():
    cells = [
        labor("AAA", 2000, "high", "male", "middle", 10.0, 50.0),
        labor("AAA", 2000, "high", "female", "middle", 20.0, 50.0),
    ]
    assert adjust_wages(cells, {"high": "h"}) == {("AAA", 2000, "h"): pytest.approx(15.0, rel=1e-14)}


def test_adjusted_wage_with_shifting_shares():
    cells = []
    for year, (h1, h2), (w1, w2) in [
        (2000, (50.0, 50.0), (10.0, 20.0)),
        (2001, (60.0, 40.0), (12.0, 22.0)),
        (2002, (70.0, 30.0), (14.0, 24.0)),
    ]:
        cells.append(labor("AAA", year, "high", "male", "middle", w1, h1))
        cells.append(labor("AAA", year, "high", "female", "middle", w2, h2))
    wages = adjust_wages(cells, {"high": "h"})
    # mean shares 0.6 and 0.4
    assert wages[("AAA", 2000, "h")] == pytest.approx(14.0, rel=1e-12)
    assert wages[("AAA", 2001, "h")] == pytest.approx(16.0, rel=1e-12)
    assert wages[("AAA", 2002, "h")] == pytest.approx(18.0, rel=1e-12)


def test_adjusted_wage_within_group_range():
    cells = [
        labor("AAA", 2000, "high", "male", "middle", 10.0, 10.0),
        labor("AAA", 2000, "high", "female", "young", 30.0, 90.0),
        labor("AAA", 2001, "high", "male", "middle", 11.0, 80.0),
        labor("AAA", 2001, "high", "female", "young", 25.0, 20.0),
    ]
    for (_, year, _), value in adjust_wages(cells, {"high": "h"}).items():
        wages = [c.wage for c in cells if c.year == year]
        assert min(wages) <= value <= max(wages)


def test_adjust_wages_missing_group():
    cells = [
        labor("AAA", 2000, "high", "male", "middle", 10.0, 50.0),
        labor("AAA", 2000, "high", "female", "middle", 20.0, 50.0),
        labor("AAA", 2001, "high", "male", "middle", 10.0, 50.0),
    ]
    with pytest.raises(MissingDataError, match="missing groups"):
        adjust_wages(cells, {"high": "h"})


def test_efficiency_hours_base_group_alone():
    cells = [labor("AAA", 2000, "high", "male", "middle", 10.0, 120.0)]
    assert adjust_hours(cells, {"high": "h"}) == {("AAA", 2000, "h"): 120.0}


def test_efficiency_hours_half_wage_group():
    cells = [
        labor("AAA", 2000, "high", "male", "middle", 20.0, 100.0),
        labor("AAA", 2000, "high", "female", "middle", 10.0, 100.0),
    ]
    assert adjust_hours(cells, {"high": "h"}) == {("AAA", 2000, "h"): pytest.approx(150.0, rel=1e-14)}


def test_efficiency_hours_invariant_to_wage_scale():
    cells = [
        labor("AAA", 2000, "high", "male", "middle", 20.0, 100.0),
        labor("AAA", 2000, "high", "female", "old", 13.0, 70.0),
        labor("AAA", 2001, "high", "male", "middle", 22.0, 90.0),
        labor("AAA", 2001, "high", "female", "old", 15.0, 80.0),
    ]
    scaled = [c.model_copy(update={"wage": 3.0 * c.wage}) for c in cells]
    base = adjust_hours(cells, {"high": "h"})
    for key, value in adjust_hours(scaled, {"high": "h"}).items():
        assert value == pytest.approx(base[key], rel=1e-13)


def test_efficiency_hours_missing_base_group():
    cells = [
        labor("AAA", 2000, "high", "female", "middle", 20.0, 100.0),
        labor("AAA", 2000, "high", "female", "old", 10.0, 100.0),
    ]
    with pytest.raises(MissingDataError, match="base group"):
        adjust_hours(cells, {"high": "h"})


def test_degenerate_all_groups():
    cells = [
        labor("AAA", 2000, "high", "all", "all", 20.0, 100.0),
        labor("AAA", 2000, "medium", "all", "all", 12.0, 300.0),
    ]
    hours = adjust_hours(cells)
    assert hours[("AAA", 2000, "h")] == 100.0
    assert hours[("AAA", 2000, "u")] == 300.0


# ----------------------------------------------------------------------
# Interest rate and rental price
# ----------------------------------------------------------------------


def test_interest_rate_constant_cpi():
    assert interest_rate(flat_cpi(), 2000) == 0.04


def test_interest_rate_steady_inflation():
    cpi = CpiSeries(country="AAA", levels={1990 + k: 100.0 * 1.02**k for k in range(21)})
    assert interest_rate(cpi, 2000) == pytest.approx(0.06, abs=1e-12)


def test_interest_rate_hand_case():
    levels = [100.0, 102.0, 105.0, 105.0, 103.0, 106.0, 110.0]
    cpi = CpiSeries(country="AAA", levels={2000 + k: v for k, v in enumerate(levels)})
    expected = 0.04 + (3 / 103 - 2 / 105 + 0.0 + 3 / 102 + 2 / 100) / 5
    assert interest_rate(cpi, 2003) == pytest.approx(expected, abs=1e-15)
    assert interest_rate(cpi, 2003) == pytest.approx(0.0518981, abs=1e-7)


def test_interest_rate_needs_window():
    with pytest.raises(MissingDataError):
        interest_rate(flat_cpi(1998, 2010), 2000)


def test_rental_price_constant_q():
    cells = investment({1998: 1.0, 1999: 1.0, 2000: 1.0}, delta=0.1)
    assert rental_price(cells, flat_cpi(), 2000) == pytest.approx(0.14, abs=1e-15)


def test_rental_price_falling_q():
    g = -0.05
    cells = investment({1998: math.exp(-g), 1999: 1.0, 2000: math.exp(g)}, delta=0.1)
    expected = 0.1 * math.exp(g) + 0.04 - g
    assert rental_price(cells, flat_cpi(), 2000) == pytest.approx(expected, abs=1e-14)


def test_rental_price_mixed_case():
    cells = investment({1998: 1.0, 1999: 0.9, 2000: 0.85}, delta=0.12)
    assert rental_price(cells, flat_cpi(), 2000) == pytest.approx(0.2113, abs=1e-4)


def test_rental_price_needs_two_lags():
    cells = investment({1999: 1.0, 2000: 1.0}, delta=0.1)
    with pytest.raises(MissingDataError):
        rental_price(cells, flat_cpi(), 2000)


# ----------------------------------------------------------------------
# Variable construction
# ----------------------------------------------------------------------


@pytest.fixture
def raw_files(tmp_path):
    rows = ["country,year,skill,gender,age,wage,hours"]
    for year in (2000, 2001):
        rows += [f"AAA,{year},high,all,all,{20 + year - 2000},100", f"AAA,{year},medium,all,all,10,300"]
    write(tmp_path / "labor.csv", "\n".join(rows) + "\n")

    rows = ["country,year,asset,q,delta"]
    for year in range(1998, 2002):
        rows += [f"AAA,{year},ict,1.0,0.2", f"AAA,{year},non_ict,1.0,0.05"]
    write(tmp_path / "investment.csv", "\n".join(rows) + "\n")

    write(tmp_path / "cpi.csv", "country,year,cpi\n" + "".join(f"AAA,{y},100\n" for y in range(1995, 2006)))
    write(tmp_path / "capital.csv", "country,year,k_i,k_o\nAAA,2000,0.5,3\nAAA,2001,0.6,3.1\n")
    return tmp_path


def test_build_records_from_raw_tables(raw_files):
    panel = load_panel(
        labor=raw_files / "labor.csv",
        investment=raw_files / "investment.csv",
        cpi=raw_files / "cpi.csv",
        capital=raw_files / "capital.csv",
    )
    records = build_records(panel)
    assert [(r.country, r.year) for r in records] == [("AAA", 2000), ("AAA", 2001)]
    first = records[0]
    assert first.w_h == 20.0 and first.w_u == 10.0
    assert first.l_h == 100.0 and first.l_u == 300.0
    assert first.r_i == pytest.approx(0.24, abs=1e-15)
    assert first.r_o == pytest.approx(0.09, abs=1e-15)
    assert all(check.status == "ok" for check in validate_report(panel))
