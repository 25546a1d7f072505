"""
Orchestrated comparisons: bounded-vs-unbounded value gaps, policy clipping,
and PDE-vs-Monte-Carlo cross validation.  Everything is deterministic for a
fixed (config, seed).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import closedform, hjb, sde
from .model import ModelParams, Utility


@dataclass(frozen=True)
class ComparisonTable:
    """V_L(x) against V(x) over a grid of bounds and states.

    values[i, j] is the bounded solve at Ls[i] evaluated at xs[j]; cells of
    non-converged solves are NaN and listed in notes.  verdicts[i] is
    "saturated" when the largest gap for that L is within 3 tol_res,
    "strict" otherwise.
    """

    xs: np.ndarray
    Ls: np.ndarray
    values: np.ndarray
    unbounded: np.ndarray
    gaps: np.ndarray
    tolerances: np.ndarray
    verdicts: list
    notes: list


def compare_bounded(params: ModelParams, utility: Utility, Ls, xs,
                    grid: hjb.GridSpec, tol_scale: float = 1e-8) -> ComparisonTable:
    """Solve the unbounded equation and every bounded one on a shared grid."""
    Ls = np.asarray(sorted(Ls), dtype=float)
    xs = np.asarray(xs, dtype=float)
    vf_inf, rep_inf = hjb.solve(params, utility, np.inf, grid, tol_scale=tol_scale)
    notes = []
    if not rep_inf.converged:
        notes.append("unbounded solve did not converge")
    v_inf = vf_inf.value(xs)
    values = np.full((len(Ls), len(xs)), np.nan)
    tols = np.full(len(Ls), np.nan)
    verdicts = []
    for i, L in enumerate(Ls):
        vf, rep = hjb.solve(params, utility, float(L), grid, tol_scale=tol_scale)
        tols[i] = rep.tol_res
        if not rep.converged:
            notes.append(f"bounded solve L={L} did not converge")
            verdicts.append("failed")
            continue
        values[i] = vf.value(xs)
        gap = v_inf - values[i]
        verdicts.append("saturated" if np.max(gap) <= 3.0 * rep.tol_res else "strict")
    return ComparisonTable(
        xs=xs, Ls=Ls, values=values, unbounded=v_inf,
        gaps=v_inf[None, :] - values, tolerances=tols,
        verdicts=verdicts, notes=notes,
    )


@dataclass(frozen=True)
class ClipReport:
    """Does the bounded policy equal the clipped unbounded one?

    deviation is relative to the policy scale; the verdict threshold is
    10x the first-order policy-accuracy scale of the solver (10 h).
    """

    bound: float
    xs: np.ndarray
    c_bounded: np.ndarray
    c_clipped: np.ndarray
    max_rel_deviation: float
    argmax_x: float
    threshold: float
    verdict: str
    note: str


def policy_clip_check(params: ModelParams, utility: Utility, bound: float, xs,
                      grid: hjb.GridSpec, tol_scale: float = 1e-8) -> ClipReport:
    """Tabulate the bounded optimal policy against min(unbounded policy, L)."""
    xs = np.asarray(xs, dtype=float)
    vf_inf, _ = hjb.solve(params, utility, np.inf, grid, tol_scale=tol_scale)
    vf_b, _ = hjb.solve(params, utility, float(bound), grid, tol_scale=tol_scale)
    pol_inf = hjb.extract_policy(vf_inf, utility, np.inf)
    pol_b = hjb.extract_policy(vf_b, utility, bound)
    c_b = np.asarray(pol_b(xs))
    c_clip = np.minimum(np.asarray(pol_inf(xs)), bound)
    scale = np.maximum(np.abs(c_clip), 1e-12)
    devs = np.abs(c_b - c_clip) / scale
    j = int(np.argmax(devs))
    threshold = 10.0 * grid.h
    differs = devs[j] > threshold
    note = ""
    if utility.gamma is not None and utility.gamma == params.alpha:
        note = closedform.clip_discrepancy_note(params, bound)
    return ClipReport(
        bound=float(bound), xs=xs, c_bounded=c_b, c_clipped=c_clip,
        max_rel_deviation=float(devs[j]), argmax_x=float(xs[j]),
        threshold=threshold,
        verdict="clip-differs" if differs else "clip-equal within tolerance",
        note=note,
    )


@dataclass(frozen=True)
class MCConfig:
    T: float = 400.0
    dt: float = 0.02
    n_paths: int = 20000
    seed: int = 20240901
    threads: int = 1
    allowance_paths: int = 4000


@dataclass(frozen=True)
class CrossCheckRow:
    x0: float
    pde_value: float
    mc_mean: float
    stderr: float
    tail_bound: float
    allowance: float
    abs_error: float
    passed: bool
    suboptimal_rate: float
    suboptimal_mean: float
    suboptimal_stderr: float
    suboptimal_below: bool


@dataclass(frozen=True)
class CrossCheckReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed and r.suboptimal_below for r in self.rows)


def mc_cross_check(params: ModelParams, utility: Utility, bound: float, x0s,
                   grid: hjb.GridSpec, mc: MCConfig,
                   tol_scale: float = 1e-8) -> CrossCheckReport:
    """Expected utility of the extracted policy must reproduce the PDE value
    within 3 stderr + tail bound + a measured discretization allowance; a
    deliberately suboptimal policy (twice the optimal rate) must fall
    strictly below."""
    vf, rep = hjb.solve(params, utility, bound, grid, tol_scale=tol_scale)
    if not rep.converged:
        raise RuntimeError("cross-check solve did not converge")
    policy = hjb.extract_policy(vf, utility, bound)
    rows = []
    for x0 in x0s:
        x0 = float(x0)
        v_pde = float(vf.value(x0))
        est = sde.mc_value(params, utility, policy, x0, mc.T, mc.dt,
                           mc.n_paths, mc.seed, threads=mc.threads)
        coarse, fine = sde.mc_refinement_study(
            params, utility, policy, x0, mc.T, mc.dt, mc.allowance_paths,
            mc.seed, levels=2, threads=mc.threads)
        allowance = abs(coarse.mean - fine.mean)
        err = abs(est.mean - v_pde)
        passed = err <= 3.0 * est.stderr + est.tail_bound + allowance
        c_sub = 2.0 * float(policy(x0))
        sub = sde.mc_value(params, utility, c_sub, x0, mc.T, mc.dt,
                           mc.n_paths, mc.seed, threads=mc.threads)
        rows.append(CrossCheckRow(
            x0=x0, pde_value=v_pde, mc_mean=est.mean, stderr=est.stderr,
            tail_bound=est.tail_bound, allowance=allowance, abs_error=err,
            passed=bool(passed), suboptimal_rate=c_sub, suboptimal_mean=sub.mean,
            suboptimal_stderr=sub.stderr,
            suboptimal_below=bool(sub.mean < v_pde - 3.0 * sub.stderr),
        ))
    return CrossCheckReport(rows=rows)
