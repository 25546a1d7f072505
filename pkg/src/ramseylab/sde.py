"""
Monte Carlo engine for the capital-per-capita process.

Paths are advanced in the transformed coordinate Z = X^(1-alpha) with
exact per-step exponential factors (see _kernels), which keeps every
node strictly positive by construction and needs no Lipschitz or linear
growth assumptions.  Per-path random streams are counter-based Philox
generators keyed by (seed, path index), so results are bit-identical
for any thread count and any path scheduling.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .model import ModelParams, ParamError, PowerUtility, Utility, phi0_bound

CHUNK = 1024  # fixed path-block size; results do not depend on it
_BIN_MAGIC = b"RAMSEYPB"
_BIN_VERSION = 1


class SimulationError(RuntimeError):
    """A simulation produced invalid output (non-finite or non-positive)."""


@dataclass(frozen=True)
class PathBatch:
    """Sampled trajectories of X with the consumption applied at each node.

    states[p, j] is X at times[j] on path p; consumptions holds the rate
    in force at the node.  min_state is the minimum of X over every step
    with t > 0 of every path (not only the sampled ones).
    """

    times: np.ndarray
    states: np.ndarray
    consumptions: np.ndarray
    seed: int
    scheme: str
    kind: str
    x0: float
    dt: float
    min_state: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class MCEstimate:
    """Discounted-utility estimate with its error decomposition."""

    mean: float
    stderr: float
    n_paths: int
    horizon: float
    tail_bound: float
    dt: float


def discount_tail_bound(params: ModelParams, utility: Utility, x0: float, T: float) -> float:
    """Proven bound e^(-beta T) (2^(eta-1)(x0 + T^eta) + phi0) on the truncated tail."""
    eta = params.eta
    phi0 = phi0_bound(params, utility)
    return float(np.exp(-params.beta * T) * (2.0 ** (eta - 1.0) * (x0 + T ** eta) + phi0))


def _stream(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, path], dtype=np.uint64))
    )


def _validate_grid(T, dt, n_paths):
    if not (dt > 0.0) or not (T > 0.0) or n_paths < 1:
        raise ParamError(f"invalid grid: T={T}, dt={dt}, n_paths={n_paths}")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ParamError(f"T={T} is not an integer number of dt={dt} steps")
    return n_steps


def _save_indices(n_steps, T, dt, save_times):
    if save_times is None:
        if n_steps + 1 <= 4097:
            idx = np.arange(n_steps + 1, dtype=np.int64)
        else:
            idx = np.unique(np.round(np.linspace(0, n_steps, 1025)).astype(np.int64))
    else:
        st = np.asarray(save_times, dtype=float)
        idx = np.round(st / dt).astype(np.int64)
        if np.any(np.abs(idx * dt - st) > 1e-9 * max(1.0, T)) or np.any(idx < 0) or np.any(idx > n_steps):
            raise ParamError("save_times must lie on the dt grid within [0, T]")
        idx = np.unique(idx)
    return idx


def _sample_consumption(consumption, n_steps, dt):
    """Node values of the consumption spec (constant, callable or array)."""
    if np.isscalar(consumption):
        c = np.full(n_steps + 1, float(consumption))
    elif callable(consumption):
        c = np.array([float(consumption(k * dt)) for k in range(n_steps + 1)])
    else:
        c = np.asarray(consumption, dtype=float)
        if c.shape != (n_steps + 1,):
            raise ParamError(f"consumption array must have {n_steps + 1} node values")
    if not np.all(np.isfinite(c)) or np.any(c < 0.0):
        raise ParamError("consumption spec must be nonnegative and finite")
    return c


def _step_constants(params: ModelParams, dt: float, coarsen: int):
    h = dt * coarsen
    omh = (1.0 - params.alpha) * h
    base = -omh * (params.mu + 0.5 * params.sigma ** 2)
    s = (1.0 - params.alpha) * params.sigma * np.sqrt(dt)
    return h, omh, base, s


def _power_q(params: ModelParams, utility: Utility) -> float:
    return (1.0 - utility.gamma) / (1.0 - params.alpha)


def _run_given(params, c_nodes, ucoef, q, want_value, z0, T, dt, n_paths, seed,
               save_idx, threads, coarsen, path_offset=0):
    n_steps = c_nodes.shape[0] - 1
    h, omh, base, s = _step_constants(params, dt, coarsen)
    oma = 1.0 - params.alpha
    dfac = np.exp(-params.beta * h)
    out_z = np.empty((n_paths, save_idx.shape[0]))
    values = np.empty(n_paths)
    minz = np.empty(n_paths)

    def task(lo, hi):
        for p in range(lo, hi):
            values[p], minz[p] = _kernels.path_given(
                _stream(seed, path_offset + p), n_steps, z0, base, omh, oma, s, h, dfac,
                c_nodes, ucoef, q, want_value, coarsen, save_idx, out_z[p],
            )

    _dispatch(task, n_paths, threads)
    return out_z, values, minz


def _run_feedback(params, utility, policy, want_value, z0, T, dt, n_paths, seed,
                  save_idx, threads, coarsen, path_offset=0):
    n_steps = _validate_grid(T, dt * coarsen, n_paths)
    h, omh, base, s = _step_constants(params, dt, coarsen)
    oma = 1.0 - params.alpha
    dfac = np.exp(-params.beta * h)
    gamma = utility.gamma if utility.gamma is not None else 0.5
    logx, cvals, lo_coef, lo_exp, hi_coef, hi_exp, cap = policy.kernel_args()
    out_z = np.empty((n_paths, save_idx.shape[0]))
    out_c = np.empty((n_paths, save_idx.shape[0]))
    values = np.empty(n_paths)
    minz = np.empty(n_paths)

    def task(lo, hi):
        for p in range(lo, hi):
            values[p], minz[p] = _kernels.path_feedback(
                _stream(seed, path_offset + p), n_steps, z0, base, omh, oma, s, h, dfac,
                params.eta, 1.0 - gamma, _power_q(params, utility), want_value,
                coarsen, logx, cvals, lo_coef, lo_exp, hi_coef, hi_exp, cap,
                save_idx, out_z[p], out_c[p],
            )

    _dispatch(task, n_paths, threads)
    return out_z, out_c, values, minz


def _dispatch(task, n_paths, threads):
    ranges = [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]
    if threads <= 1 or len(ranges) == 1:
        for lo, hi in ranges:
            task(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda r: task(*r), ranges))


def _states_from_z(out_z, eta, x0, save_idx):
    states = out_z ** eta
    if save_idx.shape[0] > 0 and save_idx[0] == 0:
        states[:, 0] = x0
    return states


def _check_batch(states, minz, eta, positive_expected):
    if not np.all(np.isfinite(states)):
        raise SimulationError("simulation produced non-finite states")
    if positive_expected and not np.all(minz > 0.0):
        raise SimulationError("simulation produced a non-positive state")
    return float(np.min(minz) ** eta)


_SCHEME = "exact-G-transform;trapezoid-integral;frozen-consumption"


def simulate_given_consumption(params: ModelParams, consumption, x0: float, T: float,
                               dt: float, n_paths: int, seed: int,
                               save_times=None, threads: int = 1) -> PathBatch:
    """Simulate X under a time-indexed consumption rate, started from x0 > 0."""
    if not (x0 > 0.0):
        raise ParamError(f"x0 must be positive, got {x0}")
    n_steps = _validate_grid(T, dt, n_paths)
    save_idx = _save_indices(n_steps, T, dt, save_times)
    c_nodes = _sample_consumption(consumption, n_steps, dt)
    ucoef = np.zeros(n_steps + 1)
    z0 = x0 ** (1.0 - params.alpha)
    out_z, _, minz = _run_given(params, c_nodes, ucoef, 1.0, False, z0, T, dt,
                                n_paths, seed, save_idx, threads, 1)
    states = _states_from_z(out_z, params.eta, x0, save_idx)
    min_state = _check_batch(states, minz, params.eta, True)
    return PathBatch(
        times=save_idx * dt, states=states,
        consumptions=np.broadcast_to(c_nodes[save_idx], states.shape),
        seed=seed, scheme=_SCHEME, kind="given", x0=x0, dt=dt, min_state=min_state,
    )


def simulate_feedback(params: ModelParams, policy, x0: float, T: float, dt: float,
                      n_paths: int, seed: int, save_times=None,
                      threads: int = 1) -> PathBatch:
    """Simulate X under a feedback policy frozen at each step's left endpoint."""
    if not (x0 > 0.0):
        raise ParamError(f"x0 must be positive, got {x0}")
    n_steps = _validate_grid(T, dt, n_paths)
    save_idx = _save_indices(n_steps, T, dt, save_times)
    z0 = x0 ** (1.0 - params.alpha)
    utility = PowerUtility(0.5)  # value not requested; any exponent works
    out_z, out_c, _, minz = _run_feedback(params, utility, policy, False, z0, T,
                                          dt, n_paths, seed, save_idx, threads, 1)
    states = _states_from_z(out_z, params.eta, x0, save_idx)
    min_state = _check_batch(states, minz, params.eta, True)
    if not np.all(np.isfinite(out_c)):
        raise SimulationError("policy produced a non-finite consumption sample")
    return PathBatch(
        times=save_idx * dt, states=states, consumptions=out_c, seed=seed,
        scheme=_SCHEME, kind="feedback", x0=x0, dt=dt, min_state=min_state,
    )


def simulate_entrance(params: ModelParams, c: float, T: float, dt: float,
                      n_paths: int, seed: int, trivial: bool = False,
                      save_times=None, threads: int = 1) -> PathBatch:
    """Simulate from x0 = 0: the trivial solution X == 0, or the entrance
    solution that leaves the origin immediately and never returns."""
    if c < 0.0:
        raise ParamError(f"constant rate must be nonnegative, got {c}")
    n_steps = _validate_grid(T, dt, n_paths)
    save_idx = _save_indices(n_steps, T, dt, save_times)
    if trivial:
        shape = (n_paths, save_idx.shape[0])
        return PathBatch(
            times=save_idx * dt, states=np.zeros(shape),
            consumptions=np.broadcast_to(np.full(save_idx.shape[0], float(c)), shape),
            seed=seed, scheme="identically-zero", kind="entrance-trivial",
            x0=0.0, dt=dt, min_state=0.0,
        )
    c_nodes = np.full(n_steps + 1, float(c))
    ucoef = np.zeros(n_steps + 1)
    out_z, _, minz = _run_given(params, c_nodes, ucoef, 1.0, False, 0.0, T, dt,
                                n_paths, seed, save_idx, threads, 1)
    states = _states_from_z(out_z, params.eta, 0.0, save_idx)
    min_state = _check_batch(states, minz, params.eta, True)
    return PathBatch(
        times=save_idx * dt, states=states,
        consumptions=np.broadcast_to(c_nodes[save_idx], states.shape),
        seed=seed, scheme=_SCHEME, kind="entrance", x0=0.0, dt=dt,
        min_state=min_state,
    )


def mc_value(params: ModelParams, utility: Utility, policy, x0: float, T: float,
             dt: float, n_paths: int, seed: int, threads: int = 1,
             coarsen: int = 1) -> MCEstimate:
    """Estimate E[int_0^T e^(-beta t) U(c_t X_t) dt] for one fixed policy.

    The policy may be a constant rate (scalar) or a feedback Policy.
    The reported tail_bound is the proven truncation-bias bound beyond T.
    """
    if not (x0 > 0.0):
        raise ParamError(f"x0 must be positive, got {x0}")
    if coarsen < 1:
        raise ParamError("coarsen must be >= 1")
    n_fine = _validate_grid(T, dt, n_paths)
    if n_fine % coarsen:
        raise ParamError("coarsen must divide the number of steps")
    n_steps = n_fine // coarsen
    h = dt * coarsen
    z0 = x0 ** (1.0 - params.alpha)
    save_idx = np.empty(0, dtype=np.int64)
    if not isinstance(utility, PowerUtility):
        return _mc_value_general(params, utility, policy, x0, T, dt, n_paths,
                                 seed, threads, coarsen)
    q = _power_q(params, utility)
    if np.isscalar(policy):
        c_nodes = _sample_consumption(float(policy), n_steps, h)
        ucoef = c_nodes ** (1.0 - utility.gamma) / (1.0 - utility.gamma)
        _, values, minz = _run_given(params, c_nodes, ucoef, q, True, z0, T, dt,
                                     n_paths, seed, save_idx, threads, coarsen)
    else:
        _, _, values, minz = _run_feedback(params, utility, policy, True, z0, T,
                                           dt, n_paths, seed, save_idx, threads,
                                           coarsen)
    if not np.all(np.isfinite(values)) or not np.all(minz > 0.0):
        raise SimulationError("value simulation produced invalid paths")
    return _estimate(params, utility, values, x0, T, h, n_paths)


def _mc_value_general(params, utility, policy, x0, T, dt, n_paths, seed, threads, coarsen):
    """Slow path for non-power utilities: save every node, apply the hooks."""
    n_fine = _validate_grid(T, dt, n_paths)
    n_steps = n_fine // coarsen
    h = dt * coarsen
    times = np.arange(n_steps + 1) * h
    weights = np.full(n_steps + 1, h)
    weights[0] = weights[-1] = 0.5 * h
    disc = np.exp(-params.beta * times)
    values = np.empty(n_paths)
    z0 = x0 ** (1.0 - params.alpha)
    save_idx = np.arange(n_steps + 1, dtype=np.int64)
    for lo in range(0, n_paths, CHUNK):
        hi = min(lo + CHUNK, n_paths)
        if np.isscalar(policy):
            c_nodes = _sample_consumption(float(policy), n_steps, h)
            out_z, _, minz = _run_given(params, c_nodes, np.zeros(n_steps + 1), 1.0,
                                        False, z0, T, dt, hi - lo, seed, save_idx,
                                        threads, coarsen, path_offset=lo)
            cons = np.broadcast_to(c_nodes, out_z.shape)
        else:
            out_z, cons, _, minz = _run_feedback(params, utility, policy, False,
                                                 z0, T, dt, hi - lo, seed, save_idx,
                                                 threads, coarsen, path_offset=lo)
        x = out_z ** params.eta
        u = np.where(cons * x > 0.0, utility.u(np.maximum(cons * x, 1e-300)), 0.0)
        values[lo:hi] = (u * disc * weights).sum(axis=1)
        if not np.all(minz > 0.0):
            raise SimulationError("value simulation produced invalid paths")
    return _estimate(params, utility, values, x0, T, h, n_paths)


def _estimate(params, utility, values, x0, T, h, n_paths):
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else float("inf")
    return MCEstimate(mean=mean, stderr=stderr, n_paths=n_paths, horizon=T,
                      tail_bound=discount_tail_bound(params, utility, x0, T), dt=h)


def mc_refinement_study(params: ModelParams, utility: Utility, policy, x0: float,
                        T: float, dt_fine: float, n_paths: int, seed: int,
                        levels: int = 3, threads: int = 1):
    """mc_value at step sizes (2^(levels-1) dt, ..., 2 dt, dt) on a shared
    Brownian path per seed, coarse increments being sums of fine ones.
    Returns the list of MCEstimates, coarsest first."""
    out = []
    for lev in reversed(range(levels)):
        out.append(mc_value(params, utility, policy, x0, T, dt_fine, n_paths,
                            seed, threads=threads, coarsen=2 ** lev))
    return out


@dataclass(frozen=True)
class MomentBoundReport:
    """Per-time audit of the first/second moment bounds."""

    times: np.ndarray
    mean1: np.ndarray
    bound1: np.ndarray
    margin1: np.ndarray
    mean2: np.ndarray
    bound2: np.ndarray
    margin2: np.ndarray
    passed: bool


def check_moment_bounds(batch: PathBatch, params: ModelParams) -> MomentBoundReport:
    """Audit E[X_t] <= 2^(eta-1)(x0 + t^eta) and the matching second-moment
    bound at every sampled time, with a 3-standard-error allowance."""
    eta = params.eta
    x0 = batch.x0
    n = batch.n_paths
    t = batch.times
    m1 = batch.states.mean(axis=0)
    se1 = batch.states.std(axis=0, ddof=1) / np.sqrt(n)
    sq = batch.states ** 2
    m2 = sq.mean(axis=0)
    se2 = sq.std(axis=0, ddof=1) / np.sqrt(n)
    b1 = 2.0 ** (eta - 1.0) * (x0 + t ** eta)
    b2 = (2.0 ** (2.0 * eta - 1.0) * np.exp(params.sigma ** 2 * t)
          * (x0 ** 2 + t ** (2.0 * eta - 1.0) / params.sigma ** 2))
    margin1 = b1 + 3.0 * se1 - m1
    margin2 = b2 + 3.0 * se2 - m2
    return MomentBoundReport(
        times=t, mean1=m1, bound1=b1, margin1=margin1,
        mean2=m2, bound2=b2, margin2=margin2,
        passed=bool(np.all(margin1 >= 0.0) and np.all(margin2 >= 0.0)),
    )


def export_csv(batch: PathBatch, path):
    """One row per (path, time) node: path,time,state,consumption."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("path,time,state,consumption\n")
        for p in range(batch.n_paths):
            for j, t in enumerate(batch.times):
                f.write(f"{p},{t!r},{batch.states[p, j]!r},{batch.consumptions[p, j]!r}\n")


def export_binary(batch: PathBatch, path):
    """Compact dump: magic 'RAMSEYPB', u32 version, u64 n_paths, u64 n_times,
    then times, states and consumptions as little-endian row-major float64."""
    n_paths, n_times = batch.states.shape
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        f.write(struct.pack("<IQQ", _BIN_VERSION, n_paths, n_times))
        f.write(np.ascontiguousarray(batch.times, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(batch.states, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(batch.consumptions, dtype="<f8").tobytes())


def read_binary(path):
    """Read back an export_binary dump as (times, states, consumptions)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _BIN_MAGIC:
            raise ValueError(f"not a path-batch dump (magic {magic!r})")
        version, n_paths, n_times = struct.unpack("<IQQ", f.read(20))
        if version != _BIN_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        times = np.frombuffer(f.read(8 * n_times), dtype="<f8")
        states = np.frombuffer(f.read(8 * n_paths * n_times), dtype="<f8").reshape(n_paths, n_times)
        cons = np.frombuffer(f.read(8 * n_paths * n_times), dtype="<f8").reshape(n_paths, n_times)
    return times, states, cons
