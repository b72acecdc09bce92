from dataclasses import dataclass

# skilled labor enters the skill-premium equation twice and each slot is its own factor
SKILL_PREMIUM_FACTORS = ("k_i", "l_h_csc", "l_h_rlq", "l_u", "A_h/A_u", "A_i/A_h")
LABOR_DEMAND_FACTORS = ("r_i", "w_h", "w_u", "A_h/A_u", "A_i/A_h")
CROSS_COUNTRY_FACTORS = ("k_i", "l_h", "l_u", "A_h/A_u", "A_i/A_h")
OBSERVED_FACTORS = ("k_i", "l_h", "l_u")

EFFECT_GROUP = {
    "k_i": "CSC",
    "l_h_csc": "CSC",
    "l_h_rlq": "RLQ",
    "l_u": "RLQ",
    "A_h/A_u": "RLAT",
    "A_i/A_h": "RLAT",
}
EFFECTS = ("CSC", "RLQ", "RLAT")


@dataclass(frozen=True)
class FactorPoint:
    """Determinants of relative prices and demands in one year; tech and wedges in logs."""

    k_i: float
    l_h: float
    l_u: float
    w_h: float
    w_u: float
    r_i: float
    log_ah_au: float
    log_ai_ah: float
    log_wedge_hu: float
    log_wedge_hi: float


@dataclass(frozen=True)
class FactorPath:
    country: str
    points: dict[int, FactorPoint]

    @property
    def years(self) -> list[int]:
        return sorted(self.points)


@dataclass(frozen=True)
class DecompositionReport:
    country: str
    from_year: int
    to_year: int
    contributions: dict[str, float]
    predicted: float
    actual: float
    residual: float

    @property
    def effects(self) -> dict[str, float]:
        totals = dict.fromkeys(EFFECTS, 0.0)
        for factor, value in self.contributions.items():
            totals[EFFECT_GROUP[factor]] += value
        return totals

    def merged_skilled(self) -> dict[str, float]:
        """Contributions with the two skilled-labor slots summed."""
        c = self.contributions
        return {
            "k_i": c["k_i"],
            "l_h": c["l_h_csc"] + c["l_h_rlq"],
            "l_u": c["l_u"],
            "A_h/A_u": c["A_h/A_u"],
            "A_i/A_h": c["A_i/A_h"],
        }


@dataclass(frozen=True)
class CrossCountryReport:
    base: str
    other: str
    from_year: int
    to_year: int
    data_difference: float
    model_difference: float
    factor_differences: dict[str, float]
    observed_share_data: float | None
    observed_share_model: float | None


@dataclass(frozen=True)
class LaborDemandReport:
    country: str
    from_year: int
    to_year: int
    contributions: dict[str, float]
    predicted: float
    actual: float
    residual: float


@dataclass(frozen=True)
class EducationEffect:
    country: str
    from_year: int
    to_year: int
    total: float
    csc: float
    rlq: float
    # None when the relative-quantity part is numerically zero
    amplification: float | None


@dataclass(frozen=True)
class EffectPoint:
    country: str
    year: int
    csc: float
    rlq: float
    rlat: float
    predicted: float
    actual: float
    observed_at_mean_tech: float
