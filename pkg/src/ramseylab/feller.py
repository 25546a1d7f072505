"""
Numerical Feller-test diagnostics for the controlled diffusion.

The scale density relative to a reference point ell is

    s(r) = exp( -(2/sigma^2) int_ell^r (y^a - mu y - C(y)) / y^2 dy ),

with C(y) the consumption level c(y) y of the policy under test.  The two
boundary integrals are int_ell^inf s(r) dr (explosion at infinity) and
int_0^ell s(r) dr (accessibility of the origin); both must diverge for the
controlled state to stay in (0, inf) forever.  Divergence is evidenced by
partial integrals over a nested sequence of cutoffs growing geometrically.
All accumulation is done in log space: the integrand spans hundreds of
orders of magnitude and raw exponentials would overflow immediately.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import ModelParams, ParamError

QUAD_RTOL = 1e-9
CURVATURE_BUDGET = 0.05  # max |f_a - 2 f_m + f_b| per outer segment
MAX_DEPTH = 48


class QuadratureError(RuntimeError):
    pass


def _consumption_level(policy):
    """Return C(y) = c(y) * y for a Policy object or a plain callable c(y)."""

    def C(y):
        return float(policy(y)) * y

    return C


def _inner_integrand(params: ModelParams, C):
    a = params.alpha
    mu = params.mu

    def g(y):
        return (y ** a - mu * y - C(y)) / (y * y)

    return g


def _segment_quad(g, a, b):
    """Integral of g over [a, b] split per decade (robust across scales)."""
    total = 0.0
    edges = [a]
    # geometric interior breakpoints, at most one per decade
    k = math.floor(math.log10(a)) + 1
    while 10.0 ** k < b * (1 - 1e-12):
        if 10.0 ** k > a * (1 + 1e-12):
            edges.append(10.0 ** k)
        k += 1
    edges.append(b)
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = quad(g, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        if not math.isfinite(val):
            raise QuadratureError(f"inner quadrature failed on [{lo:g}, {hi:g}]")
        total += val
    return total


def scale_integrand(params: ModelParams, policy, ell: float):
    """Evaluator of the log of the scale density relative to ell.

    Returns a callable r -> log s(r); exponentiation is left to the caller
    (the raw density overflows for the ranges of interest).  At r = ell the
    log is exactly 0, i.e. the integrand is 1.
    """
    if not (ell > 0.0):
        raise ParamError(f"reference point ell must be positive, got {ell}")
    g = _inner_integrand(params, _consumption_level(policy))
    pref = -2.0 / params.sigma ** 2

    def log_s(r):
        if not (r > 0.0):
            raise ParamError(f"scale integrand needs r > 0, got {r}")
        if r == ell:
            return 0.0
        if r > ell:
            return pref * _segment_quad(g, ell, r)
        return -pref * _segment_quad(g, r, ell)

    return log_s


def analytic_log_scale_zero_consumption(params: ModelParams, ell: float, r: float) -> float:
    """Closed form of log s(r) when C(y) = 0: the inner integrand y^(a-2) - mu/y
    has an elementary antiderivative.  Used as an independent oracle."""
    a = params.alpha
    inner = (ell ** (a - 1.0) - r ** (a - 1.0)) / (1.0 - a) - params.mu * math.log(r / ell)
    return -2.0 / params.sigma ** 2 * inner


def _log_phi(d):
    """log((e^d - 1)/d), the exact trapezoid-in-exp factor for linear log-integrands."""
    if abs(d) < 1e-12:
        return 0.5 * d
    if d > 34.0:
        return d - math.log(d)
    return math.log(math.expm1(d) / d) if d > 0 else math.log(-math.expm1(d) / -d)


def _refine(gq, a, b, fa, fb, out, depth=0):
    """Split [a, b] until log s is nearly linear on each piece; collect
    (a, b, fa, fb) segments in order."""
    m = math.sqrt(a * b)
    fm = fa + gq(a, m)
    if abs(fa - 2.0 * fm + fb) <= CURVATURE_BUDGET or depth >= MAX_DEPTH:
        out.append((a, m, fa, fm))
        out.append((m, b, fm, fb))
        return
    _refine(gq, a, m, fa, fm, out, depth + 1)
    _refine(gq, m, b, fm, fb, out, depth + 1)


@dataclass(frozen=True)
class BoundaryVerdict:
    """Partial-integral evidence for one boundary of the state space."""

    side: str
    ell: float
    levels: np.ndarray
    log10_partials: np.ndarray
    log10_ratios: np.ndarray
    verdict: str
    delta_condition_ok: bool


def classify_boundary(params: ModelParams, policy, side: str, levels=None,
                      ell: float = 1.0, divergence_factor: float = 2.0) -> BoundaryVerdict:
    """Partial scale integrals over nested cutoffs and the resulting verdict.

    side "infinity": cutoffs R_k > ell, partials int_ell^{R_k} s dr.
    side "origin":   cutoffs r_k < ell, partials int_{r_k}^ell s dr; the
    policy must also satisfy the smallness condition C(y) < y^a / 2 on the
    smallest decade, otherwise the verdict is inconclusive-by-precondition.
    Divergence = log10 increments of the last three levels all at least
    log10(divergence_factor).
    """
    if side not in ("infinity", "origin"):
        raise ParamError(f"side must be 'infinity' or 'origin', got {side!r}")
    if levels is None:
        levels = (ell * np.float_power(10.0, np.arange(1, 7)) if side == "infinity"
                  else ell * np.float_power(10.0, -np.arange(1, 7)))
    levels = np.asarray(levels, dtype=float)
    if side == "infinity":
        if not (np.all(levels > ell) and np.all(np.diff(levels) > 0)):
            raise ParamError("infinity levels must increase away from ell")
    else:
        if not (np.all(levels < ell) and np.all(np.diff(levels) < 0)):
            raise ParamError("origin levels must decrease away from ell")

    g = _inner_integrand(params, _consumption_level(policy))
    pref = -2.0 / params.sigma ** 2

    def gq(a, b):
        # increment of log s from a to b (signed, a < b)
        return pref * _segment_quad(g, a, b)

    # breakpoints: ell, the levels, and one point per decade in between
    ext = levels[-1]
    lo, hi = (ell, ext) if side == "infinity" else (ext, ell)
    marks = {lo, hi}
    marks.update(float(v) for v in levels)
    k = math.floor(math.log10(lo)) + 1
    while 10.0 ** k < hi * (1 - 1e-12):
        if 10.0 ** k > lo * (1 + 1e-12):
            marks.add(10.0 ** k)
        k += 1
    pts = np.array(sorted(marks))

    # log s at the breakpoints by cumulative inner quadrature from ell
    f = np.empty(len(pts))
    i_ell = int(np.searchsorted(pts, ell))
    f[i_ell] = 0.0
    for i in range(i_ell + 1, len(pts)):
        f[i] = f[i - 1] + gq(pts[i - 1], pts[i])
    for i in range(i_ell - 1, -1, -1):
        f[i] = f[i + 1] - gq(pts[i], pts[i + 1])

    segments = []
    for i in range(len(pts) - 1):
        _refine(gq, pts[i], pts[i + 1], f[i], f[i + 1], segments)

    # per-segment log integral, exact for log-linear integrands
    seg_logs = []
    for a, b, fa, fb in segments:
        seg_logs.append(fa + math.log(b - a) + _log_phi(fb - fa))
    seg_logs = np.array(seg_logs)
    seg_lo = np.array([s[0] for s in segments])

    log_partials = []
    for lev in levels:
        if side == "infinity":
            mask = seg_lo < lev * (1 - 1e-15)
        else:
            mask = seg_lo >= lev * (1 - 1e-15)
        if not np.any(mask):
            raise QuadratureError(f"no segments below level {lev}")
        m = float(np.max(seg_logs[mask]))
        log_partials.append(m + math.log(float(np.sum(np.exp(seg_logs[mask] - m)))))
    log10_partials = np.array(log_partials) / math.log(10.0)
    ratios = np.diff(log10_partials)

    delta_ok = True
    if side == "origin":
        ys = np.geomspace(levels[-1], levels[-1] * 10.0, 65)
        C = _consumption_level(policy)
        delta_ok = bool(all(C(y) < 0.5 * y ** params.alpha for y in ys))

    thresh = math.log10(divergence_factor)
    tail = ratios[-3:] if len(ratios) >= 3 else ratios
    if side == "origin" and not delta_ok:
        verdict = "inconclusive-by-precondition"
    elif len(tail) and np.all(tail >= thresh):
        verdict = "diverges"
    elif len(tail) and np.all(tail <= math.log10(1.05)):
        verdict = "converges"
    else:
        verdict = "inconclusive"
    return BoundaryVerdict(
        side=side, ell=ell, levels=levels, log10_partials=log10_partials,
        log10_ratios=ratios, verdict=verdict, delta_condition_ok=delta_ok,
    )


def export_verdict_csv(verdict: BoundaryVerdict, path):
    """CSV columns cutoff, log10_partial, log10_ratio (ratio vs previous level)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("cutoff,log10_partial,log10_ratio\n")
        for i, lev in enumerate(verdict.levels):
            ratio = "" if i == 0 else repr(verdict.log10_ratios[i - 1])
            f.write(f"{lev!r},{verdict.log10_partials[i]!r},{ratio}\n")
