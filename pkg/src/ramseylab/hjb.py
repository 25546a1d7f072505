"""
Stationary HJB solver on a log-uniform grid, with policy extraction and
asymptote diagnostics at both ends of the state space.

In y = ln x the equation

    beta v = (sigma^2/2) x^2 v'' + (x^a - mu x - c x) v' + u(c x)

becomes constant-diffusion:  beta w = (sigma^2/2) w'' + B(y, c) w' + u(c x)
with B = x^(a-1) - mu - c - sigma^2/2.  Howard sweeps alternate a policy
update c_i = (u')^(-1)(max(Dv_i, p_min)) / x_i (clamped to [0, L] when
bounded) with an exact tridiagonal solve of the frozen-policy equation,
discretized with upwind first derivatives so every linear system is an
M-matrix.  No condition is imposed at x_min: the drift there points into
the domain (checked at every sweep), so forward-only upwinding closes the
system.  At x_max a ghost-node Neumann slope from the power-utility far
field is imposed, or a zero-curvature closure for general utilities.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    P_MIN,
    ModelParams,
    ParamError,
    PowerUtility,
    Utility,
    phi0_bound,
    u_tilde,
    u_tilde_bounded,
)


class GridDiagnosisError(RuntimeError):
    """The discretization lost its structural guarantees on this grid."""


class MonotonicityError(RuntimeError):
    """A value function violated strict monotonicity where it is required."""


@dataclass(frozen=True)
class GridSpec:
    """Log-uniform grid on [x_min, x_max] with n_nodes points."""

    x_min: float
    x_max: float
    n_nodes: int

    def __post_init__(self):
        if not (self.x_min > 0.0):
            raise ParamError(f"x_min must be positive, got {self.x_min}")
        if not (self.x_max > self.x_min):
            raise ParamError("x_max must exceed x_min")
        if self.n_nodes < 16:
            raise ParamError(f"need at least 16 nodes, got {self.n_nodes}")

    @property
    def nodes(self) -> np.ndarray:
        return np.geomspace(self.x_min, self.x_max, self.n_nodes)

    @property
    def log_nodes(self) -> np.ndarray:
        return np.log(self.nodes)

    @property
    def h(self) -> float:
        return (np.log(self.x_max) - np.log(self.x_min)) / (self.n_nodes - 1)

    @property
    def nodes_per_decade(self) -> float:
        return (self.n_nodes - 1) / np.log10(self.x_max / self.x_min)


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    final_residual: float
    tol_res: float
    policy_changes: list
    value_increments: list
    boundary: dict
    m_matrix_margin: float


@dataclass(frozen=True)
class ValueFunction:
    """Nodal values of a solution candidate on its grid.

    bound is the consumption cap (inf for the unconstrained equation);
    report carries the solver diagnostics when the object came from solve.
    """

    grid: GridSpec
    values: np.ndarray
    bound: float = np.inf
    report: Optional[SolveReport] = None

    @property
    def equation(self) -> str:
        return "unbounded" if np.isinf(self.bound) else f"bounded(L={self.bound})"

    def derivative(self) -> np.ndarray:
        """Nodal v'(x) by centered differences in log x (one-sided ends)."""
        w, h, x = self.values, self.grid.h, self.grid.nodes
        wp = np.empty_like(w)
        wp[1:-1] = (w[2:] - w[:-2]) / (2.0 * h)
        wp[0] = (w[1] - w[0]) / h
        wp[-1] = (w[-1] - w[-2]) / h
        return wp / x

    def second_derivative(self) -> np.ndarray:
        """Nodal v''(x); ends copied from the adjacent interior node."""
        w, h, x = self.values, self.grid.h, self.grid.nodes
        out = np.empty_like(w)
        wp = (w[2:] - w[:-2]) / (2.0 * h)
        wpp = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h ** 2
        out[1:-1] = (wpp - wp) / x[1:-1] ** 2
        out[0] = out[1]
        out[-1] = out[-2]
        return out

    def value(self, x):
        return np.interp(np.log(x), self.grid.log_nodes, self.values)

    def derivative_at(self, x):
        return np.interp(np.log(x), self.grid.log_nodes, self.derivative())


@dataclass(frozen=True)
class Policy:
    """Feedback consumption map tabulated on a grid.

    Interior values interpolate linearly in log x; beyond the table the
    map follows fitted power laws c = coef * x^exp, capped at `cap` for
    bounded problems.
    """

    x_nodes: np.ndarray
    c_values: np.ndarray
    lo_coef: float
    lo_exp: float
    hi_coef: float
    hi_exp: float
    cap: float = np.inf

    def __post_init__(self):
        if np.any(self.c_values < 0.0) or not np.all(np.isfinite(self.c_values)):
            raise ParamError("policy values must be nonnegative and finite")
        if not np.isinf(self.cap) and np.any(self.c_values > self.cap * (1 + 1e-12)):
            raise ParamError("policy values exceed the stated cap")

    @classmethod
    def constant(cls, c: float, cap: float = np.inf) -> "Policy":
        c = float(c)
        return cls(np.array([1e-8, 1e8]), np.array([c, c]), c, 0.0, c, 0.0, cap)

    @classmethod
    def from_table(cls, x, c, cap: float = np.inf) -> "Policy":
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        lo_coef, lo_exp = _fit_power_law(x, c, x <= x[0] * 10.0)
        hi_coef, hi_exp = _fit_power_law(x, c, x >= x[-1] / 10.0)
        return cls(x, c, lo_coef, lo_exp, hi_coef, hi_exp, cap)

    @property
    def is_constant(self) -> bool:
        return (self.lo_exp == 0.0 and self.hi_exp == 0.0
                and np.all(self.c_values == self.c_values[0]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lx = np.log(x)
        logn = np.log(self.x_nodes)
        out = np.interp(lx, logn, self.c_values)
        lo = lx < logn[0]
        hi = lx > logn[-1]
        if np.any(lo):
            out = np.where(lo, self.lo_coef * np.exp(self.lo_exp * lx), out)
        if np.any(hi):
            out = np.where(hi, self.hi_coef * np.exp(self.hi_exp * lx), out)
        out = np.clip(out, 0.0, self.cap)
        return out if out.ndim else float(out)

    def kernel_args(self):
        return (
            np.ascontiguousarray(np.log(self.x_nodes)),
            np.ascontiguousarray(self.c_values),
            float(self.lo_coef), float(self.lo_exp),
            float(self.hi_coef), float(self.hi_exp), float(self.cap),
        )


def _fit_power_law(x, c, mask):
    """Least-squares log-log fit over the masked edge decade."""
    xs, cs = x[mask], c[mask]
    if len(xs) < 2 or np.min(cs) <= 0.0:
        edge = cs[0] if len(cs) else 0.0
        return float(edge), 0.0
    slope, intercept = np.polyfit(np.log(xs), np.log(cs), 1)
    return float(np.exp(intercept)), float(slope)


def right_slope_coefficient(params: ModelParams, utility: Utility, bound: float):
    """Coefficient k of the far-field slope v'(x) ~ k x^(-gamma), or None.

    For power utility the unconstrained far field has k = (g/D)^g with
    D = beta + mu(1-g) + sigma^2 g(1-g)/2; when the cap binds at large x
    (bound below the policy's limit D/g) the corner far field applies.
    """
    if not isinstance(utility, PowerUtility):
        return None
    g = utility.gamma
    D = params.beta + params.mu * (1.0 - g) + 0.5 * params.sigma ** 2 * g * (1.0 - g)
    if bound >= D / g:
        return (g / D) ** g
    return bound ** (1.0 - g) / (
        params.beta + (1.0 - g) * (params.mu + bound + 0.5 * params.sigma ** 2 * g)
    )


def _utility_at(utility, y):
    out = np.where(y > 0.0, utility.u(np.maximum(y, 1e-300)), 0.0)
    return out


def _candidate_policy(w, x, h, utility, bound, right_p):
    p = np.empty_like(w)
    p[1:-1] = (w[2:] - w[:-2]) / (2.0 * h) / x[1:-1]
    p[0] = (w[1] - w[0]) / h / x[0]
    p[-1] = right_p if right_p is not None else (w[-1] - w[-2]) / h / x[-1]
    c = utility.inv_marginal(np.maximum(p, P_MIN)) / x
    if np.isfinite(bound):
        c = np.minimum(c, bound)
    return c


def _build_rows(params, utility, c, x, h, slope_g):
    """Tridiagonal rows of beta w - D w'' - B w' = u(c x) with upwinding.

    Returns (lower, diag, upper, rhs, left_drift).  slope_g is the imposed
    y-gradient at x_max (None selects the zero-curvature closure).
    """
    n = len(x)
    sig2 = params.sigma ** 2
    D = 0.5 * sig2
    xa1 = x ** (params.alpha - 1.0)
    B = xa1 - params.mu - c - 0.5 * sig2
    f = _utility_at(utility, c * x)
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    rhs = f.copy()
    Bp = np.maximum(B, 0.0)
    Bm = np.maximum(-B, 0.0)
    i = slice(1, n - 1)
    lower[i] = -D / h ** 2 - Bm[i] / h
    upper[i] = -D / h ** 2 - Bp[i] / h
    diag[i] = params.beta + 2.0 * D / h ** 2 + np.abs(B[i]) / h

    # left boundary: entrance drift must point inward; no diffusion term
    left_drift = xa1[0] - params.mu - c[0]
    if left_drift <= 0.0:
        raise GridDiagnosisError(
            f"drift at x_min={x[0]:g} is not inward (x^(a-1)-mu-c = {left_drift:g}); "
            "decrease x_min (the consumption share of the drift vanishes at 0) "
            "or inspect the policy"
        )
    diag[0] = params.beta + left_drift / h
    upper[0] = -left_drift / h

    if slope_g is None:
        # zero-curvature closure: beta w = (x^(a-1)-mu-c) w', backward diff
        Bt = xa1[-1] - params.mu - c[-1]
        if Bt >= 0.0:
            raise GridDiagnosisError(
                f"zero-curvature closure needs outward-decaying drift at x_max, got {Bt:g}"
            )
        diag[-1] = params.beta - Bt / h
        lower[-1] = Bt / h
    else:
        # ghost-node Neumann with w'(y_max) = slope_g
        Bn = B[-1]
        if Bn < 0.0:
            diag[-1] = params.beta + 2.0 * D / h ** 2 - Bn / h
            lower[-1] = -2.0 * D / h ** 2 + Bn / h
            rhs[-1] = f[-1] + 2.0 * D * slope_g / h
        else:
            diag[-1] = params.beta + 2.0 * D / h ** 2
            lower[-1] = -2.0 * D / h ** 2
            rhs[-1] = f[-1] + 2.0 * D * slope_g / h + Bn * slope_g
    return lower, diag, upper, rhs, left_drift


def _apply_rows(lower, diag, upper, w):
    out = diag * w
    out[1:] += lower[1:] * w[:-1]
    out[:-1] += upper[:-1] * w[1:]
    return out


def _initial_guess(params, utility, x, phi0_fallback):
    if isinstance(utility, PowerUtility):
        g = utility.gamma
        D = params.beta + params.mu * (1.0 - g) + 0.5 * params.sigma ** 2 * g * (1.0 - g)
        a = (g / D) ** g / (1.0 - g)
        return a * x ** (1.0 - g) + a * (1.0 - g) / params.beta
    return x + phi0_fallback


def solve(params: ModelParams, utility: Utility, bound: float, grid: GridSpec,
          tol_scale: float = 1e-8, max_iter: int = 200,
          policy_rtol: float = 1e-10):
    """Howard policy iteration for the bounded (finite L) or unbounded
    (L = inf) equation.  Returns (ValueFunction, SolveReport); a run that
    exhausts max_iter comes back flagged, not raised."""
    if not (bound > 0.0):
        raise ParamError(f"bound must be positive or inf, got {bound}")
    x = grid.nodes
    h = grid.h
    k = right_slope_coefficient(params, utility, bound)
    if k is None:
        slope_g, right_p = None, None
    else:
        g = utility.gamma
        right_p = k * x[-1] ** (-g)       # v'(x_max)
        slope_g = x[-1] * right_p         # w'(y_max) = x v'(x)

    w = _initial_guess(params, utility, x, phi0_bound(params, utility))
    c = _candidate_policy(w, x, h, utility, bound, right_p)
    policy_changes = []
    value_increments = []
    resid = np.inf
    margin = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lower, diag, upper, rhs, _ = _build_rows(params, utility, c, x, h, slope_g)
        row_margin = float(np.min(diag - np.abs(lower) - np.abs(upper)))
        margin = min(margin, row_margin)
        if row_margin <= 0.0:
            raise GridDiagnosisError(
                f"policy-evaluation matrix lost diagonal dominance (margin {row_margin:g})"
            )
        ab = np.zeros((3, len(x)))
        ab[0, 1:] = upper[:-1]
        ab[1, :] = diag
        ab[2, :-1] = lower[1:]
        w_new = solve_banded((1, 1), ab, rhs)
        c_new = _candidate_policy(w_new, x, h, utility, bound, right_p)
        lo2, di2, up2, rhs2, _ = _build_rows(params, utility, c_new, x, h, slope_g)
        resid = float(np.max(np.abs(_apply_rows(lo2, di2, up2, w_new) - rhs2)))
        policy_changes.append(float(np.max(np.abs(c_new - c) / (1.0 + np.abs(c)))))
        value_increments.append(float(np.min(w_new - w)))
        tol = tol_scale * (1.0 + float(np.max(np.abs(w_new))))
        w, c = w_new, c_new
        if resid <= tol and policy_changes[-1] <= policy_rtol:
            converged = True
            break
    report = SolveReport(
        converged=converged,
        iterations=it,
        final_residual=resid,
        tol_res=tol_scale * (1.0 + float(np.max(np.abs(w)))),
        policy_changes=policy_changes,
        value_increments=value_increments,
        boundary={
            "left_drift": float(x[0] ** (params.alpha - 1.0) - params.mu - c[0]),
            "right_closure": "zero-curvature" if slope_g is None else "neumann-power",
            "right_slope": None if right_p is None else float(right_p),
        },
        m_matrix_margin=margin,
    )
    return ValueFunction(grid=grid, values=w, bound=bound, report=report), report


@dataclass(frozen=True)
class ResidualReport:
    max_abs: float
    argmax_x: float
    per_node: np.ndarray


def residual(vf: ValueFunction, params: ModelParams, utility: Utility,
             bound: float = np.inf) -> ResidualReport:
    """Centered-difference residual of the continuous equation at interior
    nodes.  This measures consistency with the PDE itself; the solver's own
    stopping residual is the upwind Bellman residual (scheme_residual)."""
    x = vf.grid.nodes
    h = vf.grid.h
    w = vf.values
    xi = x[1:-1]
    wp = (w[2:] - w[:-2]) / (2.0 * h)
    wpp = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h ** 2
    vp = wp / xi
    vpp = (wpp - wp) / xi ** 2
    p = np.maximum(vp, P_MIN)
    if np.isinf(bound):
        ham = u_tilde(utility, p)
    else:
        ham = u_tilde_bounded(utility, xi, p, bound)
    r = (params.beta * w[1:-1]
         - 0.5 * params.sigma ** 2 * xi ** 2 * vpp
         - (xi ** params.alpha - params.mu * xi) * vp
         - ham)
    j = int(np.argmax(np.abs(r)))
    return ResidualReport(max_abs=float(np.abs(r[j])), argmax_x=float(xi[j]), per_node=r)


def scheme_residual(vf: ValueFunction, params: ModelParams, utility: Utility,
                    bound: float = np.inf) -> float:
    """Bellman residual of the solver's own upwind discretization at vf."""
    x = vf.grid.nodes
    h = vf.grid.h
    k = right_slope_coefficient(params, utility, bound)
    right_p = None if k is None else k * x[-1] ** (-utility.gamma)
    slope_g = None if k is None else x[-1] * right_p
    c = _candidate_policy(vf.values, x, h, utility, bound, right_p)
    lo, di, up, rhs, _ = _build_rows(params, utility, c, x, h, slope_g)
    return float(np.max(np.abs(_apply_rows(lo, di, up, vf.values) - rhs)))


def extract_policy(vf: ValueFunction, utility: Utility, bound: float = np.inf) -> Policy:
    """Feedback map c_i = (u')^(-1)(v'(x_i))/x_i with power-law tails fitted
    on the edge decades (the proven asymptotes are power laws)."""
    x = vf.grid.nodes
    vp = vf.derivative()
    if np.any(vp[1:-1] <= 0.0):
        raise MonotonicityError("nonpositive discrete gradient at an interior node")
    c = utility.inv_marginal(np.maximum(vp, P_MIN)) / x
    if np.isfinite(bound):
        c = np.minimum(c, bound)
    return Policy.from_table(x, c, cap=bound if np.isfinite(bound) else np.inf)


@dataclass(frozen=True)
class LeftAsymptoteReport:
    xs: np.ndarray
    scaled_slope: np.ndarray      # x^alpha v'(x), expected plateau
    consumption_share: np.ndarray  # (u')^(-1)(v')/x^alpha, expected decay
    plateau: float
    decay_monotone: bool
    decay_ratio: float


def left_asymptote(vf: ValueFunction, params: ModelParams, utility: Utility) -> LeftAsymptoteReport:
    """Diagnostics on the lowest decade: x^a v' should plateau at a positive
    constant (beta V(0+)), and the consumption share of production should
    decay monotonically toward 0."""
    if vf.grid.nodes_per_decade < 16:
        raise ParamError("grid too coarse near x_min: need >= 16 nodes per decade")
    x = vf.grid.nodes
    mask = x <= vf.grid.x_min * 10.0 * (1 + 1e-12)
    xs = x[mask]
    vp = vf.derivative()[mask]
    scaled = xs ** params.alpha * vp
    share = utility.inv_marginal(np.maximum(vp, P_MIN)) / xs ** params.alpha
    d = np.diff(share)
    tol = 1e-12 * (1.0 + np.max(share))
    return LeftAsymptoteReport(
        xs=xs, scaled_slope=scaled, consumption_share=share,
        plateau=float(np.median(scaled)),
        decay_monotone=bool(np.all(d >= -tol)),
        decay_ratio=float(share[0] / share[-1]) if share[-1] > 0 else np.inf,
    )


@dataclass(frozen=True)
class RightAsymptoteReport:
    xs: np.ndarray
    scaled_slope: np.ndarray  # x^gamma v'(x)
    target: float
    max_rel_dev: float
    asymptote_reached: bool


def right_asymptote(vf: ValueFunction, params: ModelParams, gamma: float) -> RightAsymptoteReport:
    """Compare x^g v' on the top decade against the closed-form limit
    (g / (beta + mu(1-g) + sigma^2 g(1-g)/2))^g."""
    x = vf.grid.nodes
    mask = x >= vf.grid.x_max / 10.0 * (1 - 1e-12)
    xs = x[mask]
    vp = vf.derivative()[mask]
    scaled = xs ** gamma * vp
    D = params.beta + params.mu * (1.0 - gamma) + 0.5 * params.sigma ** 2 * gamma * (1.0 - gamma)
    target = (gamma / D) ** gamma
    reached = (vf.grid.x_max ** (params.alpha - 1.0) / params.mu) <= 0.01
    return RightAsymptoteReport(
        xs=xs, scaled_slope=scaled, target=target,
        max_rel_dev=float(np.max(np.abs(scaled / target - 1.0))),
        asymptote_reached=bool(reached),
    )


@dataclass(frozen=True)
class CandidateReport:
    """Membership checks for the uniqueness class of solution candidates."""

    strictly_increasing: bool
    concave: bool
    linear_growth: bool
    left_decay: bool
    growth_constant: float
    log_slope_top: float

    @property
    def is_member(self) -> bool:
        return (self.strictly_increasing and self.concave
                and self.linear_growth and self.left_decay)


def validate_candidate(vf: ValueFunction, params: ModelParams, utility: Utility) -> CandidateReport:
    """Check strict monotonicity, concavity, linear growth and the decay of
    (u')^(-1)(v')/x^a at the left edge.  Report-style: never raises."""
    x = vf.grid.nodes
    w = vf.values
    increasing = bool(np.all(np.diff(w) > 0.0))
    slopes = np.diff(w) / np.diff(x)
    stol = 1e-9 * (1.0 + float(np.max(np.abs(slopes))))
    concave = bool(np.all(np.diff(slopes) <= stol))
    growth_c = float(np.max(w / (1.0 + x)))
    top = x >= vf.grid.x_max / 10.0 * (1 - 1e-12)
    pos = top & (w > 0.0)
    if pos.sum() >= 2:
        log_slope = float(np.polyfit(np.log(x[pos]), np.log(w[pos]), 1)[0])
    else:
        log_slope = np.inf
    linear_growth = log_slope <= 1.0 + 1e-3
    try:
        rep = left_asymptote(vf, params, utility)
        left_decay = rep.decay_monotone and rep.decay_ratio <= 0.9
    except ParamError:
        left_decay = False
    return CandidateReport(
        strictly_increasing=increasing, concave=concave,
        linear_growth=linear_growth, left_decay=left_decay,
        growth_constant=growth_c, log_slope_top=log_slope,
    )


def export_solution_csv(vf: ValueFunction, utility: Utility, bound: float, path):
    """CSV columns x, v, v_prime, v_double_prime, c."""
    x = vf.grid.nodes
    vp = vf.derivative()
    vpp = vf.second_derivative()
    c = extract_policy(vf, utility, bound).c_values
    with open(path, "w", encoding="utf-8") as f:
        f.write("x,v,v_prime,v_double_prime,c\n")
        for i in range(len(x)):
            f.write(f"{x[i]!r},{vf.values[i]!r},{vp[i]!r},{vpp[i]!r},{c[i]!r}\n")
