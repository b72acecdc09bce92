"""
Closed-form evaluation of the four-factor nested CES technology.

Output is y = A k_o^a {lam [mu k_i^rho + (1-mu) l_h^rho]^(sigma/rho) + (1-lam) l_u^sigma}^((1-a)/sigma),
equivalently k_o^a {[(A_i k_i)^rho + (A_h l_h)^rho]^(sigma/rho) + (A_u l_u)^sigma}^((1-a)/sigma)
with factor-augmenting levels from `tech_from_shares`. Everything is evaluated in
logs; the array-level helpers accept numpy arrays so estimation and
decomposition can reuse them without building bundles.
"""

import logging
import math
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from ces_skill.core.errors import DomainError, NumericalOverflowError
from ces_skill.core.settings import settings
from ces_skill.models.production import (
    InputBundle,
    InputId,
    PriceBundle,
    ProductionParams,
    TechLevels,
    WedgeBundle,
    check_substitution,
)

LOGGER = logging.getLogger(__name__)

# largest log that still exponentiates to a finite double
_MAX_LOG = math.log(np.finfo(float).max)


def _exp(value: float, what: str) -> float:
    if not math.isfinite(value) or value > _MAX_LOG:
        raise NumericalOverflowError(f"{what} overflows (log value {value})")
    return math.exp(value)


def _log_positive(value: float, what: str) -> float:
    if not (math.isfinite(value) and value > 0.0):
        raise DomainError(f"{what} must be positive, got {value}")
    return math.log(value)


def check_complementarity(params: ProductionParams) -> bool:
    if not params.complementarity:
        LOGGER.warning(
            "sigma=%s <= rho=%s: no capital-skill complementarity",
            params.sigma,
            params.rho,
        )
    return params.complementarity


# ----------------------------------------------------------------------
# Production and technology
# ----------------------------------------------------------------------


def produce_output(params: ProductionParams, x: InputBundle) -> float:
    a, s, r = params.alpha, params.sigma, params.rho
    log_inner = logsumexp(
        [r * math.log(x.k_i), r * math.log(x.l_h)],
        b=[params.mu_share, 1.0 - params.mu_share],
    )
    log_middle = logsumexp(
        [(s / r) * log_inner, s * math.log(x.l_u)],
        b=[params.lambda_share, 1.0 - params.lambda_share],
    )
    log_y = math.log(params.A) + a * math.log(x.k_o) + ((1.0 - a) / s) * log_middle
    return _exp(float(log_y), "output")


def log_tech_from_shares(
    alpha: float, sigma: float, rho: float, A: float, lambda_share, mu_share
):
    """Logs of (A_i, A_h, A_u); share arguments may be numpy arrays."""
    base = math.log(A) / (1.0 - alpha)
    lam = np.log(lambda_share)
    mu = np.log(mu_share)
    log_ai = base + lam / sigma + mu / rho
    log_ah = base + lam / sigma + np.log1p(-np.asarray(mu_share)) / rho
    log_au = base + np.log1p(-np.asarray(lambda_share)) / sigma
    return log_ai, log_ah, log_au


def tech_from_shares(params: ProductionParams) -> TechLevels:
    log_ai, log_ah, log_au = log_tech_from_shares(
        params.alpha,
        params.sigma,
        params.rho,
        params.A,
        params.lambda_share,
        params.mu_share,
    )
    return TechLevels(
        A_i=_exp(float(log_ai), "A_i"),
        A_h=_exp(float(log_ah), "A_h"),
        A_u=_exp(float(log_au), "A_u"),
    )


def log_marginal_products(
    alpha: float, sigma: float, rho: float, tech: TechLevels, x: InputBundle
) -> dict[str, float]:
    """Log output and log marginal products under the factor-augmenting form."""
    lai, lah, lau = math.log(tech.A_i), math.log(tech.A_h), math.log(tech.A_u)
    lki, lko, llh, llu = (math.log(v) for v in (x.k_i, x.k_o, x.l_h, x.l_u))

    log_q = float(np.logaddexp(rho * (lai + lki), rho * (lah + llh)))
    log_x = float(np.logaddexp((sigma / rho) * log_q, sigma * (lau + llu)))
    log_f = alpha * lko + ((1.0 - alpha) / sigma) * log_x

    common = log_f + math.log(1.0 - alpha) - log_x
    nest = (sigma / rho - 1.0) * log_q
    return {
        "y": log_f,
        "l_h": common + nest + rho * lah + (rho - 1.0) * llh,
        "k_i": common + nest + rho * lai + (rho - 1.0) * lki,
        "l_u": common + sigma * lau + (sigma - 1.0) * llu,
        "k_o": math.log(alpha) + log_f - lko,
    }


def foc_prices(
    params: ProductionParams, x: InputBundle, wedges: WedgeBundle = WedgeBundle()
) -> PriceBundle:
    tech = tech_from_shares(params)
    logs = log_marginal_products(params.alpha, params.sigma, params.rho, tech, x)
    return PriceBundle(
        w_h=wedges.omega_h * _exp(logs["l_h"], "w_h"),
        w_u=wedges.omega_u * _exp(logs["l_u"], "w_u"),
        r_i=wedges.omega_i * _exp(logs["k_i"], "r_i"),
        r_o=wedges.omega_o * _exp(logs["k_o"], "r_o"),
    )


# ----------------------------------------------------------------------
# Relative price equations
# ----------------------------------------------------------------------


def skill_premium_core(
    sigma, rho, log_ah_au, log_ai_ah, log_ki, log_lh_csc, log_lh_rlq, log_lu
):
    """
    ln(w_h/w_u) net of the wedge.

    The skilled-labor quantity enters twice: once inside the complementarity
    bracket (`log_lh_csc`) and once in the relative quantity term
    (`log_lh_rlq`). Evaluating them separately is what lets the Shapley
    decomposition split the two channels. Accepts numpy arrays.
    """
    bracket = np.logaddexp(rho * (log_ai_ah + log_ki - log_lh_csc), 0.0)
    return (
        sigma * log_ah_au
        + ((sigma - rho) / rho) * bracket
        - (1.0 - sigma) * (log_lh_rlq - log_lu)
    )


def skill_premium_log(
    sigma: float,
    rho: float,
    tech: TechLevels,
    x: InputBundle,
    wedge_ratio_hu: float = 1.0,
) -> float:
    check_substitution("sigma", sigma)
    check_substitution("rho", rho)
    log_wedge = _log_positive(wedge_ratio_hu, "wedge ratio omega_h/omega_u")
    log_lh = math.log(x.l_h)
    value = skill_premium_core(
        sigma,
        rho,
        math.log(tech.A_h / tech.A_u),
        math.log(tech.A_i / tech.A_h),
        math.log(x.k_i),
        log_lh,
        log_lh,
        math.log(x.l_u),
    )
    return float(value) + log_wedge


def wage_rental_core(rho, log_ai_ah, log_ki, log_lh):
    return -rho * log_ai_ah - (1.0 - rho) * (log_lh - log_ki)


def wage_rental_log(
    rho: float, tech: TechLevels, x: InputBundle, wedge_ratio_hi: float = 1.0
) -> float:
    if not (math.isfinite(rho) and rho < 1.0):
        raise DomainError(f"rho must be a finite real below 1, got {rho}")
    log_wedge = _log_positive(wedge_ratio_hi, "wedge ratio omega_h/omega_i")
    value = wage_rental_core(
        rho, math.log(tech.A_i / tech.A_h), math.log(x.k_i), math.log(x.l_h)
    )
    return float(value) + log_wedge


# ----------------------------------------------------------------------
# Factor demands
# ----------------------------------------------------------------------


def _log_composites(
    sigma: float,
    rho: float,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle,
) -> tuple[float, float]:
    """Logs of the unit-cost composites B (k_i/l_h nest) and C (with l_u)."""
    er = rho / (1.0 - rho)
    es = sigma / (1.0 - sigma)
    log_b = -(1.0 / er) * float(
        np.logaddexp(
            er * math.log(wedges.omega_i * tech.A_i / prices.r_i),
            er * math.log(wedges.omega_h * tech.A_h / prices.w_h),
        )
    )
    log_c = -(1.0 / es) * float(
        np.logaddexp(
            -es * log_b,
            es * math.log(wedges.omega_u * tech.A_u / prices.w_u),
        )
    )
    if not (math.isfinite(log_b) and math.isfinite(log_c)):
        raise DomainError(
            f"cost composites are not computable (log B={log_b}, log C={log_c})"
        )
    return log_b, log_c


def log_factor_demands(
    params: ProductionParams,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle,
    y: float,
) -> dict[InputId, float]:
    a, s, r = params.alpha, params.sigma, params.rho
    log_y = _log_positive(y, "output y")
    log_b, log_c = _log_composites(s, r, tech, prices, wedges)

    log_outer = math.log((1.0 - a) * prices.r_o / (wedges.omega_o * a))
    common = log_y + a * log_outer
    c_exp = (1.0 - a + a * s) / (1.0 - s)
    b_exp = -(s - r) / ((1.0 - r) * (1.0 - s))

    def nest_demand(omega: float, price: float, level: float) -> float:
        return (
            common
            + math.log(omega / price) / (1.0 - r)
            + (r / (1.0 - r)) * math.log(level)
            + b_exp * log_b
            + c_exp * log_c
        )

    return {
        "l_h": nest_demand(wedges.omega_h, prices.w_h, tech.A_h),
        "k_i": nest_demand(wedges.omega_i, prices.r_i, tech.A_i),
        "l_u": common
        + math.log(wedges.omega_u / prices.w_u) / (1.0 - s)
        + (s / (1.0 - s)) * math.log(tech.A_u)
        + c_exp * log_c,
        "k_o": log_y + (a - 1.0) * log_outer + (1.0 - a) * log_c,
    }


def factor_demands(
    params: ProductionParams,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle,
    y: float,
) -> InputBundle:
    logs = log_factor_demands(params, tech, prices, wedges, y)
    return InputBundle(**{name: _exp(v, f"demand for {name}") for name, v in logs.items()})


def relative_demand_core(
    sigma, rho, log_ri, log_wh, log_wu, log_ah_au, log_ai_ah, log_whu, log_whi
):
    """ln(l_h/l_u) from prices, technology ratios and wedge ratios (arrays allowed)."""
    er = rho / (1.0 - rho)
    kappa = (sigma - rho) / ((1.0 - sigma) * (1.0 - rho))
    log_ah_ai = -log_ai_ah
    log_d = -(1.0 / er) * np.logaddexp(
        -er * log_ri, er * (log_whi + log_ah_ai - log_wh)
    )
    return (
        -log_wh / (1.0 - rho)
        + log_wu / (1.0 - sigma)
        - kappa * log_d
        + (sigma * log_ah_au + log_whu) / (1.0 - sigma)
        - kappa * (log_ah_ai + log_whi)
    )


def relative_labor_demand_log(
    sigma: float,
    rho: float,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle = WedgeBundle(),
) -> float:
    check_substitution("sigma", sigma)
    check_substitution("rho", rho)
    value = relative_demand_core(
        sigma,
        rho,
        math.log(prices.r_i),
        math.log(prices.w_h),
        math.log(prices.w_u),
        math.log(tech.A_h / tech.A_u),
        math.log(tech.A_i / tech.A_h),
        math.log(wedges.omega_h / wedges.omega_u),
        math.log(wedges.omega_h / wedges.omega_i),
    )
    if not np.isfinite(value):
        raise DomainError("relative labor demand is not computable at this point")
    return float(value)


def inner_cost_shares(
    rho: float, tech: TechLevels, prices: PriceBundle, wedges: WedgeBundle
) -> tuple[float, float]:
    """Cost shares (s_i, s_h) of k_i and l_h inside their nest."""
    er = rho / (1.0 - rho)
    terms = np.array(
        [
            er * math.log(wedges.omega_i * tech.A_i / prices.r_i),
            er * math.log(wedges.omega_h * tech.A_h / prices.w_h),
        ]
    )
    shares = np.exp(terms - logsumexp(terms))
    return float(shares[0]), float(shares[1])


# ----------------------------------------------------------------------
# Morishima elasticities
# ----------------------------------------------------------------------


def morishima(
    a: InputId,
    b: InputId,
    params: ProductionParams,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle = WedgeBundle(),
) -> float:
    """
    d ln x_a / d ln p_b - d ln x_b / d ln p_b at fixed output.

    Central differences on the log of p_b; demands are linear in y, so the
    output level is irrelevant and fixed at one.
    """
    if a == b:
        raise DomainError(f"Morishima elasticity needs two distinct inputs, got {a}")
    h = settings.fd_step
    p_b = prices.price_of(b)
    up = log_factor_demands(
        params, tech, prices.with_price_of(b, p_b * math.exp(h)), wedges, 1.0
    )
    down = log_factor_demands(
        params, tech, prices.with_price_of(b, p_b * math.exp(-h)), wedges, 1.0
    )
    return ((up[a] - down[a]) - (up[b] - down[b])) / (2.0 * h)


def morishima_table(
    params: ProductionParams,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle = WedgeBundle(),
    inputs: Iterable[InputId] = ("k_i", "l_h", "l_u"),
) -> dict[tuple[InputId, InputId], float]:
    """Entry (a, b) is the elasticity of row a with the price of column b perturbed."""
    names = list(inputs)
    return {
        (a, b): morishima(a, b, params, tech, prices, wedges)
        for a in names
        for b in names
        if a != b
    }


def morishima_delta_se(
    a: InputId,
    b: InputId,
    params: ProductionParams,
    tech: TechLevels,
    prices: PriceBundle,
    wedges: WedgeBundle,
    covariance: np.ndarray,
) -> float:
    """Delta-method standard error with respect to (sigma, rho), tech held fixed."""
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (2, 2):
        raise DomainError(f"expected a 2x2 (sigma, rho) covariance, got {cov.shape}")
    grad = np.zeros(2)
    for j, name in enumerate(("sigma", "rho")):
        value = getattr(params, name)
        step = settings.fd_step * max(1.0, abs(value))
        hi = _replace_param(params, name, value + step)
        lo = _replace_param(params, name, value - step)
        grad[j] = (
            morishima(a, b, hi, tech, prices, wedges)
            - morishima(a, b, lo, tech, prices, wedges)
        ) / (2.0 * step)
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def _replace_param(params: ProductionParams, name: str, value: float) -> ProductionParams:
    values = {
        "alpha": params.alpha,
        "sigma": params.sigma,
        "rho": params.rho,
        "A": params.A,
        "lambda_share": params.lambda_share,
        "mu_share": params.mu_share,
    }
    values[name] = value
    return ProductionParams(**values)
