import math
from dataclasses import dataclass, fields, replace
from typing import Literal

from ces_skill.core.errors import DomainError

InputId = Literal["k_i", "k_o", "l_h", "l_u"]

INPUT_IDS: tuple[InputId, ...] = ("k_i", "k_o", "l_h", "l_u")

# price attached to each input
PRICE_OF: dict[InputId, str] = {"k_i": "r_i", "k_o": "r_o", "l_h": "w_h", "l_u": "w_u"}
WEDGE_OF: dict[InputId, str] = {
    "k_i": "omega_i",
    "k_o": "omega_o",
    "l_h": "omega_h",
    "l_u": "omega_u",
}

# |sigma| and |rho| below this are the Cobb-Douglas limits
COBB_DOUGLAS_BAND = 1e-10


def check_substitution(name: str, value: float) -> None:
    if not math.isfinite(value) or value >= 1.0:
        raise DomainError(f"{name} must be a finite real below 1, got {value}")
    if abs(value) < COBB_DOUGLAS_BAND:
        raise DomainError(
            f"{name}={value} lies in the Cobb-Douglas guard band |{name}| < {COBB_DOUGLAS_BAND}"
        )


def _check_positive(obj: object) -> None:
    for f in fields(obj):  # type: ignore[arg-type]
        value = getattr(obj, f.name)
        if not (math.isfinite(value) and value > 0.0):
            raise DomainError(
                f"{type(obj).__name__}.{f.name} must be positive and finite, got {value}"
            )


@dataclass(frozen=True)
class ProductionParams:
    alpha: float
    sigma: float
    rho: float
    A: float
    lambda_share: float
    mu_share: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        check_substitution("sigma", self.sigma)
        check_substitution("rho", self.rho)
        if not (math.isfinite(self.A) and self.A > 0.0):
            raise DomainError(f"A must be positive, got {self.A}")
        for name in ("lambda_share", "mu_share"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {value}")

    @property
    def complementarity(self) -> bool:
        """True when ICT capital is less substitutable with skilled labor"""
        return self.sigma > self.rho


@dataclass(frozen=True)
class TechLevels:
    A_i: float
    A_h: float
    A_u: float

    def __post_init__(self):
        _check_positive(self)

    @classmethod
    def from_log_ratios(cls, log_ah_au: float, log_ai_ah: float) -> "TechLevels":
        """Levels with A_h normalised to one; only the two ratios matter."""
        return cls(A_i=math.exp(log_ai_ah), A_h=1.0, A_u=math.exp(-log_ah_au))


@dataclass(frozen=True)
class InputBundle:
    k_i: float
    k_o: float
    l_h: float
    l_u: float

    def __post_init__(self):
        _check_positive(self)

    def get(self, name: InputId) -> float:
        return getattr(self, name)

    def scaled(self, c: float) -> "InputBundle":
        return InputBundle(self.k_i * c, self.k_o * c, self.l_h * c, self.l_u * c)

    def with_value(self, name: InputId, value: float) -> "InputBundle":
        return replace(self, **{name: value})


@dataclass(frozen=True)
class PriceBundle:
    w_h: float
    w_u: float
    r_i: float
    r_o: float

    def __post_init__(self):
        _check_positive(self)

    def price_of(self, name: InputId) -> float:
        return getattr(self, PRICE_OF[name])

    def with_price_of(self, name: InputId, value: float) -> "PriceBundle":
        return replace(self, **{PRICE_OF[name]: value})

    def scaled(self, c: float) -> "PriceBundle":
        return PriceBundle(self.w_h * c, self.w_u * c, self.r_i * c, self.r_o * c)


@dataclass(frozen=True)
class WedgeBundle:
    omega_h: float = 1.0
    omega_u: float = 1.0
    omega_i: float = 1.0
    omega_o: float = 1.0

    def __post_init__(self):
        _check_positive(self)

    def wedge_of(self, name: InputId) -> float:
        return getattr(self, WEDGE_OF[name])

    def scaled(self, c: float) -> "WedgeBundle":
        return WedgeBundle(
            self.omega_h * c, self.omega_u * c, self.omega_i * c, self.omega_o * c
        )

    @classmethod
    def from_log_ratios(cls, log_hu: float, log_hi: float) -> "WedgeBundle":
        """Wedges with omega_u = omega_o = 1 reproducing the two observable ratios."""
        return cls(
            omega_h=math.exp(log_hu),
            omega_u=1.0,
            omega_i=math.exp(log_hu - log_hi),
            omega_o=1.0,
        )
