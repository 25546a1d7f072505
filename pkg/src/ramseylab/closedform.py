"""
Exact formulas for the gamma = alpha case of the consumption problem.

These are the oracles the finite-difference solver and the Monte Carlo
engine are accepted against, together with the bounded-consumption
constants and the corner threshold.
"""

from dataclasses import dataclass
from typing import Optional

from .model import ModelParams, ParamError, Utility


def _require_gamma_eq_alpha(params: ModelParams, utility: Optional[Utility]):
    if utility is not None and utility.gamma != params.alpha:
        raise ParamError(
            f"closed form requires gamma = alpha, got gamma={utility.gamma}, alpha={params.alpha}"
        )


def zeta_constant(params: ModelParams) -> float:
    """Scale constant zeta = (alpha / (beta + mu(1-a) + sigma^2 a (1-a)/2))^alpha."""
    a = params.alpha
    denom = params.beta + params.mu * (1.0 - a) + 0.5 * params.sigma ** 2 * a * (1.0 - a)
    return (a / denom) ** a


def constant_consumption(params: ModelParams) -> float:
    """Optimal constant consumption rate beta/a + (1-a)(mu/a + sigma^2/2)."""
    a = params.alpha
    return params.beta / a + (1.0 - a) * (params.mu / a + 0.5 * params.sigma ** 2)


@dataclass(frozen=True)
class GammaEqAlphaSolution:
    """zeta and the constant policy / threshold of the explicit solution.

    zeta^(-1/alpha) = c_hat = L_star is an exact algebraic identity.
    """

    zeta: float
    c_hat: float
    L_star: float


def solution_constants(params: ModelParams, utility: Optional[Utility] = None) -> GammaEqAlphaSolution:
    _require_gamma_eq_alpha(params, utility)
    c = constant_consumption(params)
    return GammaEqAlphaSolution(zeta=zeta_constant(params), c_hat=c, L_star=c)


def value_gamma_eq_alpha(params: ModelParams, x, utility: Optional[Utility] = None):
    """Exact value function zeta (x^(1-a)/(1-a) + 1/beta) for gamma = alpha."""
    _require_gamma_eq_alpha(params, utility)
    a = params.alpha
    return zeta_constant(params) * (x ** (1.0 - a) / (1.0 - a) + 1.0 / params.beta)


def value_prime_gamma_eq_alpha(params: ModelParams, x, utility: Optional[Utility] = None):
    """Exact derivative zeta x^(-alpha) of the gamma = alpha value function."""
    _require_gamma_eq_alpha(params, utility)
    return zeta_constant(params) * x ** (-params.alpha)


def constant_policy_value(params: ModelParams, c: float, x) -> float:
    """Exact expected utility of the constant policy c under gamma = alpha.

    Same ansatz as the corner solution: zeta_c (x^(1-a)/(1-a) + 1/beta)
    with zeta_c = c^(1-a) / (beta + (1-a)(mu + c + a sigma^2/2)).  At
    c = c_hat this reproduces the value function.
    """
    if c < 0.0:
        raise ParamError(f"consumption rate must be nonnegative, got {c}")
    if c == 0.0:
        return 0.0 * x
    a = params.alpha
    denom = params.beta + (1.0 - a) * (params.mu + c + 0.5 * a * params.sigma ** 2)
    zeta_c = c ** (1.0 - a) / denom
    return zeta_c * (x ** (1.0 - a) / (1.0 - a) + 1.0 / params.beta)


def bounded_constant_solution(params: ModelParams, bound: float, utility: Optional[Utility] = None):
    """Constants of the bounded problem under gamma = alpha.

    Returns (zeta_L, interior candidate zeta_L^(-1/alpha), corner_active)
    where the corner c = L is active iff the interior candidate is >= L,
    equivalently iff L <= L_star.
    """
    _require_gamma_eq_alpha(params, utility)
    if not (bound > 0.0):
        raise ParamError(f"bound must be positive, got {bound}")
    a = params.alpha
    zeta_L = bound ** (1.0 - a) / (
        params.beta + (1.0 - a) * (params.mu + bound + 0.5 * a * params.sigma ** 2)
    )
    interior = zeta_L ** (-1.0 / a)
    return zeta_L, interior, interior >= bound


def corner_threshold(params: ModelParams, utility: Optional[Utility] = None) -> float:
    """Threshold L_star above which the bound never binds (gamma = alpha)."""
    _require_gamma_eq_alpha(params, utility)
    return constant_consumption(params)


@dataclass(frozen=True)
class PolicyLimits:
    """Feedback-consumption limits at the two ends of the state space.

    at_origin_kind is one of "zero" (gamma < alpha), "finite-positive"
    (gamma = alpha) or "infinite" (gamma > alpha); at_origin_value is
    filled in the finite case when the numerical value of v(0+) is known.
    """

    at_infinity: float
    at_origin_kind: str
    at_origin_value: Optional[float]


def c_hat_limits(params: ModelParams, gamma: float, v0plus: Optional[float] = None) -> PolicyLimits:
    """Classify the feedback policy limits for power utility."""
    if not (0.0 < gamma < 1.0):
        raise ParamError(f"gamma must lie in (0,1), got {gamma}")
    at_inf = params.beta / gamma + (1.0 - gamma) * (params.mu / gamma + 0.5 * params.sigma ** 2)
    if gamma < params.alpha:
        return PolicyLimits(at_inf, "zero", 0.0)
    if gamma > params.alpha:
        return PolicyLimits(at_inf, "infinite", None)
    value = None
    if v0plus is None:
        v0plus = zeta_constant(params) / params.beta
    if v0plus is not None:
        value = (params.beta * v0plus) ** (-1.0 / gamma)
    return PolicyLimits(at_inf, "finite-positive", value)


def clip_discrepancy_note(params: ModelParams, bound: float) -> str:
    """Both sides of the corner comparison for gamma = alpha, verbatim.

    The interior candidate zeta_L^(-1/alpha) and the bound are reported
    as computed; by the corner identity the candidate exceeds L exactly
    when L <= L_star, in which case the bounded optimal policy is the
    constant L and coincides with min(c_hat, L).
    """
    zeta_L, interior, corner = bounded_constant_solution(params, bound)
    lstar = corner_threshold(params)
    return (
        f"gamma=alpha corner report: zeta_L={zeta_L:.6f}, "
        f"interior candidate zeta_L^(-1/alpha)={interior:.6f}, L={bound:.6f}, "
        f"L_star={lstar:.6f}, corner_active={corner}; "
        f"with the corner active the bounded policy is identically L, "
        f"so it equals min(unbounded policy, L) for every x."
    )
