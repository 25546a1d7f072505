"""
Compiled per-path kernels for the transformed capital-per-capita dynamics.

A path is advanced in the power-transformed coordinate Z = X^(1-alpha),
whose solution is Z_t = (z0 + (1-a) I_t)/G_t with G the positive
exponential factor of the linearized dynamics and I_t the running
integral of G.  The kernels track the normalized pair

    zh_k = z0 / G_k,      J_k = I_k / G_k,

via the per-step factor F_k = G_k / G_{k+1} = exp(u_k):

    u_k  = -(1-a) (mu + c_k + sigma^2/2) h - (1-a) sigma dW_k
    zh  <- zh F,   J <- F (J + h/2) + h/2       (trapezoid on I)
    Z    = zh + (1-a) J  > 0  exactly.

Both recursion variables stay O(1) for any horizon, so there is no
overflow even though G itself grows exponentially.  Each path consumes
its own generator; results are a pure function of the stream, making
output independent of thread scheduling.
"""

import numpy as np
from numba import njit

# taylor window for exp: degree-7 polynomial on |u| <= 1/4 is exact to
# < 1e-16 relative; outside the window the libm exp is used.
_EXP_POLY_CUT = 0.25


@njit(cache=True, nogil=True, inline="always")
def _expu(u):
    if u > _EXP_POLY_CUT or u < -_EXP_POLY_CUT:
        return np.exp(u)
    return 1.0 + u * (
        1.0
        + u
        * (
            0.5
            + u
            * (
                1.0 / 6.0
                + u
                * (
                    1.0 / 24.0
                    + u * (1.0 / 120.0 + u * (1.0 / 720.0 + u * (1.0 / 5040.0)))
                )
            )
        )
    )


@njit(cache=True, nogil=True, inline="always")
def _zpow(z, q):
    if q == 1.0:
        return z
    return z ** q


@njit(cache=True, nogil=True)
def path_given(
    gen,
    n_steps,
    z0,
    base,
    omh,
    oma,
    s,
    h,
    dfac,
    c_nodes,
    ucoef,
    q,
    want_value,
    coarsen,
    save_idx,
    out_z,
):
    """One path under a time-indexed consumption array.

    c_nodes has n_steps+1 entries (node values; step k freezes c_nodes[k]),
    ucoef[k] = c_k^(1-gamma)/(1-gamma) premultiplies Z^q in the discounted
    utility quadrature.  save_idx lists node indices whose Z value is
    written to out_z.  Returns (discounted utility, min Z over nodes >= 1).
    """
    h2 = 0.5 * h
    zh = z0
    J = 0.0
    Z = z0
    disc = 1.0
    acc = 0.0
    if want_value:
        acc = 0.5 * ucoef[0] * _zpow(Z, q)
    minz = np.inf
    si = 0
    ns = save_idx.shape[0]
    if ns > 0 and save_idx[0] == 0:
        out_z[0] = Z
        si = 1
    last = 0.0
    for k in range(n_steps):
        x = gen.standard_normal()
        for _ in range(coarsen - 1):
            x += gen.standard_normal()
        u = (base - omh * c_nodes[k]) - s * x
        F = _expu(u)
        zh = zh * F
        J = F * (J + h2) + h2
        Z = zh + oma * J
        if Z < minz:
            minz = Z
        if want_value:
            disc *= dfac
            last = disc * ucoef[k + 1] * _zpow(Z, q)
            acc += last
        if si < ns and save_idx[si] == k + 1:
            out_z[si] = Z
            si += 1
    value = 0.0
    if want_value:
        value = h * (acc - 0.5 * last)
    return value, minz


@njit(cache=True, nogil=True, inline="always")
def _policy_eval(lx, logx, cvals, lo_coef, lo_exp, hi_coef, hi_exp, cap):
    """Consumption at log-state lx: log-linear interior, power-law tails."""
    n = logx.shape[0]
    if lx <= logx[0]:
        c = lo_coef if lo_exp == 0.0 else lo_coef * np.exp(lo_exp * lx)
    elif lx >= logx[n - 1]:
        c = hi_coef if hi_exp == 0.0 else hi_coef * np.exp(hi_exp * lx)
    else:
        j = np.searchsorted(logx, lx) - 1
        w = (lx - logx[j]) / (logx[j + 1] - logx[j])
        c = cvals[j] + w * (cvals[j + 1] - cvals[j])
    if c > cap:
        c = cap
    if c < 0.0:
        c = 0.0
    return c


@njit(cache=True, nogil=True)
def path_feedback(
    gen,
    n_steps,
    z0,
    base,
    omh,
    oma,
    s,
    h,
    dfac,
    eta,
    one_minus_gamma,
    q,
    want_value,
    coarsen,
    logx,
    cvals,
    lo_coef,
    lo_exp,
    hi_coef,
    hi_exp,
    cap,
    save_idx,
    out_z,
    out_c,
):
    """One path with consumption frozen at the step's left endpoint.

    Identical arithmetic to path_given once c is known, so a constant
    policy reproduces the given-consumption path bit for bit.
    """
    h2 = 0.5 * h
    inv1mg = 1.0 / one_minus_gamma
    zh = z0
    J = 0.0
    Z = z0
    disc = 1.0
    acc = 0.0
    minz = np.inf
    si = 0
    ns = save_idx.shape[0]
    last = 0.0
    first = 0.0
    for k in range(n_steps + 1):
        X = _zpow(Z, eta)
        c = _policy_eval(np.log(X), logx, cvals, lo_coef, lo_exp, hi_coef, hi_exp, cap)
        if si < ns and save_idx[si] == k:
            out_z[si] = Z
            out_c[si] = c
            si += 1
        if want_value:
            term = disc * (c * X) ** one_minus_gamma * inv1mg
            acc += term
            if k == 0:
                first = term
            last = term
        if k == n_steps:
            break
        x = gen.standard_normal()
        for _ in range(coarsen - 1):
            x += gen.standard_normal()
        u = (base - omh * c) - s * x
        F = _expu(u)
        zh = zh * F
        J = F * (J + h2) + h2
        Z = zh + oma * J
        if Z < minz:
            minz = Z
        disc *= dfac
    value = 0.0
    if want_value:
        value = h * (acc - 0.5 * first - 0.5 * last)
    return value, minz
