"""
Model primitives: parameter records, isoelastic utility, and the pointwise
Hamiltonian transforms used by the solver, the simulator and the diagnostics.

Everything here is a pure function of its arguments; all records are frozen
dataclasses and safe to share across threads.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


class ParamError(ValueError):
    """A model parameter violates its domain constraint."""


# guard for the Legendre transform: it blows up as the slope argument -> 0+
P_MIN = 1e-12

# safety factor applied on top of the minimal linear-bound intercept
PHI0_SAFETY = 1e-3


@dataclass(frozen=True)
class ModelParams:
    """Economic and diffusion constants of the capital-per-capita dynamics.

    mu is the derived drift constant lambda + n - sigma^2 and must be
    positive.  lam and n are optional: when the configuration supplies mu
    directly, only mu is stored.
    """

    alpha: float
    sigma: float
    beta: float
    mu: float
    lam: Optional[float] = None
    n: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ParamError(f"alpha must lie in (0,1), got {self.alpha}")
        if not (self.sigma > 0.0):
            raise ParamError(f"sigma must be positive, got {self.sigma}")
        if not (self.beta > 0.0):
            raise ParamError(f"beta must be positive, got {self.beta}")
        if self.lam is not None and self.lam < 0.0:
            raise ParamError(f"lambda must be nonnegative, got {self.lam}")
        if not (self.mu > 0.0):
            raise ParamError(
                f"mu = lambda + n - sigma^2 must be positive, got {self.mu}"
            )

    @property
    def eta(self) -> float:
        """Exponent 1/(1-alpha) of the power transform used everywhere."""
        return 1.0 / (1.0 - self.alpha)


def make_params(alpha, lam, n, sigma, beta) -> ModelParams:
    """Build ModelParams from the raw constants, deriving mu = lam + n - sigma^2."""
    if not (0.0 < alpha < 1.0):
        raise ParamError(f"alpha must lie in (0,1), got {alpha}")
    if not (sigma > 0.0):
        raise ParamError(f"sigma must be positive, got {sigma}")
    mu = lam + n - sigma * sigma
    return ModelParams(alpha=alpha, sigma=sigma, beta=beta, mu=mu, lam=lam, n=n)


def make_params_from_mu(alpha, mu, sigma, beta) -> ModelParams:
    """Build ModelParams directly from mu, bypassing the (lambda, n) split."""
    return ModelParams(alpha=alpha, sigma=sigma, beta=beta, mu=mu)


class Utility:
    """Interface of a utility function on (0, infinity).

    Subclasses provide u (utility), u_prime (marginal) and inv_marginal
    (inverse marginal).  The function must be strictly increasing, strictly
    concave, with u(0)=0, u(inf)=inf, u'(0+)=inf and u'(inf)=0.
    """

    gamma: Optional[float] = None  # set for the built-in power family

    def u(self, y):
        raise NotImplementedError

    def u_prime(self, y):
        raise NotImplementedError

    def inv_marginal(self, p):
        raise NotImplementedError


class PowerUtility(Utility):
    """Isoelastic utility u(y) = y^(1-gamma)/(1-gamma) with 0 < gamma < 1."""

    def __init__(self, gamma):
        if not (0.0 < gamma < 1.0):
            raise ParamError(f"gamma must lie in (0,1), got {gamma}")
        self.gamma = gamma

    def u(self, y):
        return np.power(y, 1.0 - self.gamma) / (1.0 - self.gamma)

    def u_prime(self, y):
        return np.power(y, -self.gamma)

    def inv_marginal(self, p):
        return np.power(p, -1.0 / self.gamma)

    def __repr__(self):
        return f"PowerUtility(gamma={self.gamma})"


def u_tilde(utility: Utility, p):
    """Legendre-type transform sup_y {u(y) - y p} for p > 0.

    Closed form for power utility; otherwise evaluated at the maximizer
    y* = inv_marginal(p).
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0):
        raise ParamError("u_tilde requires p > 0 (it diverges as p -> 0+)")
    if isinstance(utility, PowerUtility):
        g = utility.gamma
        out = (g / (1.0 - g)) * np.power(p, (g - 1.0) / g)
    else:
        ystar = utility.inv_marginal(p)
        out = utility.u(ystar) - ystar * p
    return out if out.ndim else float(out)


def u_tilde_bounded(utility: Utility, x, p, bound):
    """Constrained transform sup_{0<=c<=bound} {u(c x) - c x p}.

    The maximizer is c* = min(inv_marginal(p)/x, bound).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(x <= 0.0) or np.any(p <= 0.0) or not (bound > 0.0):
        raise ParamError("u_tilde_bounded requires x > 0, p > 0 and bound > 0")
    cstar = np.minimum(utility.inv_marginal(p) / x, bound)
    y = cstar * x
    out = utility.u(y) - y * p
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DriftPeak:
    """Maximizer x* of x^alpha - mu x and the peak value A."""

    x_star: float
    A: float


def drift_peak(params: ModelParams) -> DriftPeak:
    """Solve alpha x^(alpha-1) = mu in closed form."""
    x_star = (params.alpha / params.mu) ** (1.0 / (1.0 - params.alpha))
    A = x_star ** params.alpha - params.mu * x_star
    return DriftPeak(x_star=x_star, A=A)


def sup_u_minus_linear(utility: Utility) -> float:
    """sup_y {u(y) - y}, finite whenever u'(inf) = 0.

    Power utility has the closed form gamma/(1-gamma).  For a general
    utility the concave map y -> u(y) - y is maximized by ternary search
    on a log grid after bracketing the stationary point u'(y) = 1.
    """
    if isinstance(utility, PowerUtility):
        g = utility.gamma
        return g / (1.0 - g)
    # bracket the point where u'(y) crosses 1 on a geometric sweep
    ys = np.geomspace(1e-12, 1e12, 97)
    marg = np.array([utility.u_prime(y) for y in ys])
    above = np.nonzero(marg > 1.0)[0]
    below = np.nonzero(marg < 1.0)[0]
    if len(above) == 0 or len(below) == 0:
        raise ParamError("could not bracket sup{u(y) - y}; utility violates u'(0+)=inf or u'(inf)=0")
    lo, hi = np.log(ys[above[-1]]), np.log(ys[below[0]])
    if lo > hi:
        lo, hi = hi, lo
    f = lambda t: utility.u(np.exp(t)) - np.exp(t)
    for _ in range(200):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) < f(m2):
            lo = m1
        else:
            hi = m2
    return float(f(0.5 * (lo + hi)))


def phi0_bound(params: ModelParams, utility: Utility) -> float:
    """Intercept phi0 of the linear bound v(x) <= x + phi0.

    phi0 = (1 + delta) (A + S)/beta with A the drift peak and
    S = sup{u(y) - y}; the margin delta makes -beta phi0 + A + S < 0
    strictly.  The same phi0 works for every bound L and every x.
    """
    A = drift_peak(params).A
    S = sup_u_minus_linear(utility)
    return (1.0 + PHI0_SAFETY) * (A + S) / params.beta


MODEL_CONFIG_KEYS = {"alpha", "lambda", "n", "sigma", "beta", "gamma", "mu"}


def params_from_dict(cfg: dict):
    """Read (ModelParams, PowerUtility) from a flat config mapping.

    Accepted keys: alpha, lambda, n, sigma, beta, gamma, and alternatively
    mu in place of (lambda, n).  Unknown keys are rejected.
    """
    unknown = set(cfg) - MODEL_CONFIG_KEYS
    if unknown:
        raise ParamError(f"unknown model config keys: {sorted(unknown)}")
    for key in ("alpha", "sigma", "beta", "gamma"):
        if key not in cfg:
            raise ParamError(f"missing model config key: {key}")
    has_mu = "mu" in cfg
    has_split = "lambda" in cfg or "n" in cfg
    if has_mu and has_split:
        raise ParamError("model config must supply either mu or (lambda, n), not both")
    if has_mu:
        params = make_params_from_mu(cfg["alpha"], cfg["mu"], cfg["sigma"], cfg["beta"])
    else:
        if "lambda" not in cfg or "n" not in cfg:
            raise ParamError("model config needs both lambda and n (or mu alone)")
        params = make_params(cfg["alpha"], cfg["lambda"], cfg["n"], cfg["sigma"], cfg["beta"])
    return params, PowerUtility(cfg["gamma"])


def params_to_dict(params: ModelParams, utility: Utility) -> dict:
    """Inverse of params_from_dict, preserving the mu-vs-(lambda,n) form."""
    out = {"alpha": params.alpha, "sigma": params.sigma, "beta": params.beta}
    if params.lam is None:
        out["mu"] = params.mu
    else:
        out["lambda"] = params.lam
        out["n"] = params.n
    out["gamma"] = utility.gamma
    return out
