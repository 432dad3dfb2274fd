"""Weak and strong disorder diagnostics.

* the annealed two-replica ratio ``E[Z_t^2] / (E Z_t)^2``, computed as
  ``E exp(beta^2 * time the difference walk spends at 0)`` with the
  difference walk jumping at rate ``4d``;
* the return probability of the discrete simple random walk and the
  moment generating function of its (geometric) number of visits to 0;
* trajectories of ``log M_t = log Z_t - beta^2 t / 2`` over nested
  horizons, one environment per replica, with a regime verdict.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from .env import EnvironmentSheet
from .exceptions import DomainError
from .gibbs import (ESS_MIN, ModelParams, estimate_partition, hamiltonians,
                    transfer_log_partition)
from .seeding import BOOT_STREAM, DIFF_STREAM, ENV_STREAM, PATH_STREAM, RETURN_STREAM, \
    derive_seed, make_rng
from .walk import sample_difference_walks, sample_paths, unit_steps

VERDICTS = ("decaying", "stable", "inconclusive")


def gamma_of_beta(d, beta):
    """``log(4d / (4d - beta^2))``; requires ``beta^2 < 4d``."""
    if not 0 <= beta ** 2 < 4 * d:
        raise DomainError(f"need 0 <= beta^2 < 4d = {4 * d}, got beta = {beta}")
    return math.log(4.0 * d / (4.0 * d - beta ** 2))


# -- second moment ---------------------------------------------------------------

def _ratio_stats(x):
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def second_moment_curve(d, beta, t_list, n_samples=10**5, seed=0):
    """Rows ``(t, ratio, se)`` of ``E exp(beta^2 L_t)`` for nested horizons.

    ``L_t`` is the time the rate-``4d`` difference walk spends at the
    origin up to ``t``. One set of walks on ``[0, max t]`` serves every
    horizon, so the curve is nondecreasing sample by sample.
    """
    t_list = [float(t) for t in t_list]
    if any(t <= 0 for t in t_list) or any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise DomainError("t_list must be positive and increasing")
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    if beta == 0:
        return [(t, 1.0, 0.0) for t in t_list]
    rng = make_rng(seed, DIFF_STREAM)
    ens = sample_difference_walks(rng, d, t_list[-1], int(n_samples))
    path, sites, t0, t1 = ens.segments()
    at0 = np.all(sites == 0, axis=1)
    rows = []
    for t in t_list:
        dur = np.clip(np.minimum(t1, t) - t0, 0.0, None)
        L = np.bincount(path[at0], weights=dur[at0], minlength=len(ens))
        rows.append((t, *_ratio_stats(np.exp(beta ** 2 * L))))
    return rows


def second_moment_ratio(params, n_samples=10**5, seed=0):
    """``(ratio, se)`` of ``E[Z_t^2] / (E Z_t)^2`` by the difference-walk identity."""
    params._need_positive_t()
    _, ratio, se = second_moment_curve(params.d, params.beta, [params.t], n_samples, seed)[0]
    return ratio, se


def quenched_second_moment_ratio(params, n_env, n_paths, seed=0):
    """``E[Z_t^2] e^{-beta^2 t}`` averaged over sheets, as ``(ratio, se)``.

    Per sheet ``Z_t^2`` is estimated without bias by the U-statistic
    ``((sum w)^2 - sum w^2) / (n (n - 1))`` over ``n_paths`` free walks.
    """
    params._need_positive_t()
    if n_env < 2 or n_paths < 2:
        raise DomainError("need n_env >= 2 and n_paths >= 2")
    vals = np.empty(n_env)
    for e in range(n_env):
        sheet = EnvironmentSheet(params.d, derive_seed(seed, ENV_STREAM, e))
        rng = make_rng(seed, PATH_STREAM, e)
        ens = sample_paths(rng, params.d, params.t, n_paths)
        logw = params.beta * hamiltonians(sheet, ens) - 0.5 * params.beta ** 2 * params.t
        w = np.exp(logw)
        vals[e] = (w.sum() ** 2 - np.dot(w, w)) / (n_paths * (n_paths - 1))
    return _ratio_stats(vals)


# -- return probability and local time ---------------------------------------------

@dataclass(frozen=True)
class ReturnStats:
    """Capped return statistics of the discrete simple random walk.

    ``q_hat`` is the fraction of walks back at 0 within ``cap`` steps,
    ``q_half`` the same within ``cap // 2``. ``visits`` holds each walk's
    number of visits to 0 up to ``cap`` (start included). ``flagged``
    is set for recurrent dimensions, where the capped value does not
    converge to a probability below 1.
    """

    d: int
    cap: int
    q_hat: float
    se: float
    q_half: float
    se_half: float
    flagged: bool
    visits: np.ndarray = field(repr=False)

    @property
    def stable(self):
        return abs(self.q_hat - self.q_half) < 3.0 * math.hypot(self.se, self.se_half)


def _return_chunk(args):
    d, cap, n, seed, chunk, block = args
    rng = make_rng(seed, RETURN_STREAM, chunk)
    steps = unit_steps(d).astype(np.int32)
    pos = np.zeros((n, d), dtype=np.int32)
    first = np.full(n, cap + 1, dtype=np.int64)
    visits = np.ones(n, dtype=np.int64)
    done = 0
    while done < cap:
        b = min(block, cap - done)
        walk = pos[:, None, :] + np.cumsum(steps[rng.integers(0, 2 * d, size=(n, b))], axis=1)
        home = np.all(walk == 0, axis=2)
        visits += home.sum(axis=1)
        hit = home.any(axis=1) & (first > cap)
        first[hit] = done + 1 + home[hit].argmax(axis=1)
        pos = walk[:, -1, :]
        done += b
    return first, visits


def return_probability(d, n_steps_cap=4096, n_samples=10**5, seed=0, workers=1,
                       chunk=8192, block=256):
    """Monte Carlo return probability of the discrete walk within ``n_steps_cap`` steps.

    Walks run in chunks with per-chunk streams, so results do not depend
    on ``workers``. Returns :class:`ReturnStats`.
    """
    if d < 1 or n_steps_cap < 2 or n_samples < 2:
        raise DomainError("need d >= 1, n_steps_cap >= 2 and n_samples >= 2")
    sizes = [min(chunk, n_samples - i) for i in range(0, n_samples, chunk)]
    tasks = [(d, int(n_steps_cap), s, seed, c, block) for c, s in enumerate(sizes)]
    out = map_ordered(_return_chunk, tasks, workers)
    first = np.concatenate([o[0] for o in out])
    visits = np.concatenate([o[1] for o in out])
    full = first <= n_steps_cap
    half = first <= n_steps_cap // 2
    q, qh = _ratio_stats(full.astype(float)), _ratio_stats(half.astype(float))
    return ReturnStats(d, int(n_steps_cap), q[0], q[1], qh[0], qh[1], d <= 2, visits)


@dataclass(frozen=True)
class LocalTimeStats:
    gamma: float
    q_hat: float
    q_se: float
    mgf_value: float
    mgf_se: float
    diverged: bool


def local_time_mgf(d, gamma, q_hat, q_se=0.0):
    """``E exp(gamma L)`` for ``L`` geometric with ``P(L = k) = q^{k-1} (1 - q)``.

    Finite value ``(1 - q) e^gamma / (1 - q e^gamma)`` when ``q e^gamma < 1``;
    otherwise ``diverged`` is set and the value is ``inf``. ``d`` is
    carried for bookkeeping only.
    """
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    if not 0 <= q_hat < 1:
        raise DomainError(f"q_hat must lie in [0, 1), got {q_hat}")
    eg = math.exp(gamma)
    if q_hat * eg >= 1.0:
        return LocalTimeStats(gamma, q_hat, q_se, math.inf, math.inf, True)
    val = (1.0 - q_hat) * eg / (1.0 - q_hat * eg)
    # d/dq of the closed form
    deriv = eg * (eg - 1.0) / (1.0 - q_hat * eg) ** 2
    return LocalTimeStats(gamma, q_hat, q_se, val, abs(deriv) * q_se, False)


def direct_local_time_mgf(stats, gamma):
    """``(mean, se)`` of ``exp(gamma * visits)`` over the capped walks of ``stats``."""
    return _ratio_stats(np.exp(gamma * stats.visits))


# -- martingale trajectories -----------------------------------------------------------

@dataclass
class DisorderReport:
    """Per-replica ``log M_t`` over nested horizons and a regime verdict.

    ``trajectories[e, i]`` is ``log M`` of replica ``e`` at ``t_grid[i]``
    (``nan`` where excluded as degenerate). ``second_moment_ratio`` rows
    are ``(t, ratio, se)``.
    """

    params: ModelParams
    t_grid: tuple
    trajectories: np.ndarray
    second_moment_ratio: list
    verdict: str
    stats: dict


def _traj_sampling(args):
    d, beta, t_grid, n_paths, env_seed, path_seed = args
    sheet = EnvironmentSheet(d, env_seed)
    rng = make_rng(path_seed)
    out, flags = [], []
    for t in t_grid:
        est = estimate_partition(sheet, ModelParams(d, beta, t), n_paths, rng)
        out.append(est.log_Z - 0.5 * beta ** 2 * t)
        flags.append(est.ess < ESS_MIN and beta > 0)
    return out, flags


def _traj_transfer(args):
    d, beta, t_grid, dt, env_seed, box_radius = args
    res = transfer_log_partition(d, beta, t_grid, dt, env_seed, box_radius)
    return [z - 0.5 * beta ** 2 * t for z, t in zip(res.log_Z, t_grid)], [False] * len(t_grid)


def _replica_slopes(t, logM):
    """OLS slope of each row of ``logM`` against ``t``, skipping nan entries.

    Rows with fewer than two finite points give nan.
    """
    ok = np.isfinite(logM)
    n = ok.sum(axis=1)
    tt = np.where(ok, t, 0.0)
    yy = np.where(ok, logM, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tm = tt.sum(axis=1) / n
        ym = yy.sum(axis=1) / n
        tc = np.where(ok, t - tm[:, None], 0.0)
        out = (tc * (yy - ym[:, None])).sum(axis=1) / (tc * tc).sum(axis=1)
    out[n < 2] = np.nan
    return out


def martingale_trajectories(d, beta, t_grid, n_env=32, n_paths=2000, seed=0,
                            method="transfer", dt=0.05, box_radius=None,
                            theta=0.02, confidence=0.95, log_floor=math.log(0.1),
                            n_boot=2000, n_ratio_samples=20000, workers=1):
    """``log M_t`` trajectories and a weak/strong disorder verdict.

    Each replica uses one environment for the whole horizon grid. The
    verdict uses the median across replicas of the per-replica ordinary
    least-squares slope of ``log M_t`` against ``t``, with replicas
    resampled by bootstrap:

    * ``decaying`` if the one-sided ``confidence`` upper bound of the
      slope is below ``-theta``;
    * ``stable`` if the slope lies in ``(-theta, theta)`` and every median
      ``log M_t`` stays above ``log_floor``;
    * ``inconclusive`` otherwise.

    Degenerate sampling estimates (ESS below threshold) are excluded from
    the medians and counted in ``stats["n_excluded"]``.
    """
    t_grid = tuple(float(t) for t in t_grid)
    if len(t_grid) < 2 or any(b <= a for a, b in zip(t_grid, t_grid[1:])) or t_grid[0] <= 0:
        raise DomainError("t_grid needs at least two increasing positive horizons")
    if n_env < 2:
        raise DomainError("n_env must be >= 2")
    seeds = [derive_seed(seed, ENV_STREAM, e) for e in range(n_env)]
    if beta == 0:
        out = [([0.0] * len(t_grid), [False] * len(t_grid))] * n_env
    elif method == "transfer":
        out = map_ordered(_traj_transfer, [(d, beta, t_grid, dt, s, box_radius) for s in seeds],
                          workers)
    elif method == "sampling":
        tasks = [(d, beta, t_grid, n_paths, s, derive_seed(seed, PATH_STREAM, e))
                 for e, s in enumerate(seeds)]
        out = map_ordered(_traj_sampling, tasks, workers)
    else:
        raise DomainError(f"unknown method {method!r}")
    logM = np.array([o[0] for o in out], dtype=float)
    excluded = np.array([o[1] for o in out], dtype=bool)
    logM[excluded] = np.nan
    t = np.asarray(t_grid)

    with warnings.catch_warnings():
        # horizons where every replica was excluded give nan medians
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(logM, axis=0)
        slopes = _replica_slopes(t, logM)
        slope = float(np.nanmedian(slopes))
        rng = make_rng(seed, BOOT_STREAM)
        idx = rng.integers(0, n_env, size=(n_boot, n_env))
        boot = np.nanmedian(slopes[idx], axis=1)
        M = np.exp(logM)
        mean_M = np.nanmean(M, axis=0)
        se_M = np.nanstd(M, axis=0, ddof=1) / np.sqrt(np.sum(~np.isnan(M), axis=0))
    boot = boot[np.isfinite(boot)]
    upper = float(np.quantile(boot, confidence)) if boot.size else float("nan")
    lower = float(np.quantile(boot, 1.0 - confidence)) if boot.size else float("nan")
    if beta == 0:
        verdict = "stable"
    elif not np.all(np.isfinite(med)):
        verdict = "inconclusive"
    elif upper < -theta:
        verdict = "decaying"
    elif abs(slope) < theta and np.all(med > log_floor):
        verdict = "stable"
    else:
        verdict = "inconclusive"
    ratio = second_moment_curve_safe(d, beta, t_grid, n_ratio_samples, seed)
    stats = {
        "slope": slope,
        "slope_upper": upper,
        "slope_lower": lower,
        "theta": theta,
        "confidence": confidence,
        "log_floor": log_floor,
        "median_log_M": med.tolist(),
        "mean_M": mean_M.tolist(),
        "se_M": se_M.tolist(),
        "n_excluded": int(excluded.sum()),
        "method": method,
    }
    return DisorderReport(ModelParams(d, beta, t_grid[-1]), t_grid, logM, ratio, verdict, stats)


def second_moment_curve_safe(d, beta, t_grid, n_samples, seed):
    """:func:`second_moment_curve`, or an empty list when ``n_samples < 2``."""
    if n_samples < 2:
        return []
    return second_moment_curve(d, beta, t_grid, n_samples, seed)

