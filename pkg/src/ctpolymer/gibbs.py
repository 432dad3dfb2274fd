"""Hamiltonians, partition functions and polymer-measure averages.

Two families of estimators for ``Z_t = E_b[exp(beta H_t(b))]``:

* path sampling on a lazily sampled :class:`~ctpolymer.env.EnvironmentSheet`
  (plain Monte Carlo over free walks, or the series over jump counts with
  exact enumeration of lattice sequences), exact in time;
* a transfer-matrix recursion on a time grid, which propagates the full
  site distribution of the weighted walk. It has a small grid bias but
  no sampling variance over paths, and stays usable when ``beta^2 t`` is
  large and importance weights degenerate.

All partition quantities are carried on the log scale.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import ive, logsumexp
from scipy.stats import poisson

from ._parallel import map_ordered
from .env import EnvironmentSheet
from .exceptions import DomainError, SizeError
from .seeding import ENV_STREAM, PATH_STREAM, derive_seed, make_rng
from .walk import (PathEnsemble, enumerate_discrete_paths, log_simplex_volume,
                   sample_paths)

ESS_MIN = 10.0
SERIES_TOL = 1e-8
SERIES_LIMIT = 10**6
TAGS = ("jump_count", "replica_overlap", "endpoint_displacement")


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``d``, inverse temperature ``beta`` and horizon ``t``.

    ``t = 0`` is accepted (the empty polymer); estimators require ``t > 0``.
    """

    d: int
    beta: float
    t: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"d must be a positive integer, got {self.d}")
        if not self.beta >= 0 or math.isinf(self.beta):
            raise DomainError(f"beta must be finite and >= 0, got {self.beta}")
        if not self.t >= 0 or math.isinf(self.t):
            raise DomainError(f"t must be finite and >= 0, got {self.t}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "t", float(self.t))

    def _need_positive_t(self):
        if not self.t > 0:
            raise DomainError("horizon must be positive for estimation")


@dataclass(frozen=True)
class PartitionEstimate:
    """``log Z`` with a delta-method standard error.

    ``truncation_bound`` is the expected (annealed) relative mass of the
    omitted series tail; zero for non-series estimators.
    """

    log_Z: float
    std_error: float
    n_samples: int
    params: ModelParams
    env_seed: object = None
    ess: float = float("nan")
    low_confidence: bool = False
    method: str = "sampling"
    truncation_bound: float = 0.0
    truncated: bool = False


@dataclass(frozen=True)
class GibbsAverage:
    tag: str
    value: float
    std_error: float
    effective_sample_size: float
    low_confidence: bool = False


class FreeEnergyPoint(NamedTuple):
    p_hat: float
    std_error: float
    ess_min: float
    n_low_confidence: int
    log_Z: tuple


def _weight_stats(logw):
    """``log mean exp``, its delta-method SE, normalized weights and ESS."""
    n = logw.size
    shift = logw.max()
    w = np.exp(logw - shift)
    s = w.sum()
    log_mean = shift + math.log(s) - math.log(n)
    wn = w / s
    ess = 1.0 / float(np.dot(wn, wn))
    # SE(mean w)/mean w with w rescaled by the shift
    rel = float(np.std(w, ddof=1) / (w.mean() * math.sqrt(n))) if n > 1 else float("inf")
    return log_mean, rel, wn, ess


# -- Hamiltonian ---------------------------------------------------------------

def hamiltonians(sheet, ensemble):
    """``H_t`` of every path of ``ensemble`` in one batched sheet query."""
    if ensemble.d != sheet.d:
        raise DomainError("path and sheet dimensions differ")
    path, sites, t0, t1 = ensemble.segments()
    m = t0.size
    v = sheet.query(np.vstack([sites, sites]), np.r_[t0, t1])
    return np.bincount(path, weights=v[m:] - v[:m], minlength=len(ensemble))


def hamiltonian(sheet, path, horizon=None):
    """Sum of site increments ``W(s_{j+1}, x_j) - W(s_j, x_j)`` along ``path``."""
    if horizon is not None and float(horizon) != path.horizon:
        raise DomainError(f"path horizon {path.horizon} != {horizon}")
    return float(hamiltonians(sheet, PathEnsemble.from_paths([path]))[0])


def field_distance_sq(path1, path2):
    """``Var(H(path1) - H(path2)) = 2t - 2 * (time the paths coincide)``."""
    from .walk import intersection_time
    return path1.horizon + path2.horizon - 2.0 * intersection_time(path1, path2)


# -- partition function on a sheet ----------------------------------------------

def estimate_partition(sheet, params, n_samples, rng):
    """Monte Carlo ``log Z_t`` from ``n_samples`` free walks on ``sheet``."""
    params._need_positive_t()
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    if params.beta == 0.0:
        return PartitionEstimate(0.0, 0.0, int(n_samples), params, sheet.master_seed,
                                 float(n_samples))
    ens = sample_paths(rng, params.d, params.t, n_samples)
    logw = params.beta * hamiltonians(sheet, ens)
    log_Z, se, _, ess = _weight_stats(logw)
    return PartitionEstimate(log_Z, se, int(n_samples), params, sheet.master_seed,
                             ess, ess < ESS_MIN)


def series_truncation_bound(params, n_max):
    """Annealed relative mass of the terms with more than ``n_max`` jumps.

    Averaged over the environment every term carries ``exp(beta^2 t / 2)``,
    so the omitted fraction of ``E Z`` is the Poisson(2dt) tail.
    """
    return float(poisson.sf(n_max, 2.0 * params.d * params.t))


def estimate_partition_series(sheet, params, n_max, quad_samples, rng, tol=SERIES_TOL):
    """``Z_t`` as a sum over jump counts and lattice sequences.

    ``Z_t = sum_n e^{-2dt} sum_{x in P_n} int_{S_{n,t}} exp(beta B_n(s, x)) ds``
    with every ``x`` enumerated and each simplex integral estimated from
    ``quad_samples`` sorted uniform time vectors. Terms beyond ``n_max``
    are omitted; the omitted annealed fraction is reported and flagged
    when above ``tol``.
    """
    params._need_positive_t()
    d, t, beta = params.d, params.t, params.beta
    if (2 * d) ** n_max > SERIES_LIMIT:
        raise SizeError(f"(2d)^n_max = {(2 * d) ** n_max} exceeds {SERIES_LIMIT}",
                        required=(2 * d) ** n_max)
    if quad_samples < 2:
        raise DomainError("quad_samples must be >= 2")
    bound = series_truncation_bound(params, n_max)
    log_terms, log_var = [], []
    for n in range(n_max + 1):
        seqs = enumerate_discrete_paths(d, n)
        n_seq = seqs.shape[0]
        q = 1 if n == 0 else int(quad_samples)
        m = n_seq * q
        times = np.sort(t * (1.0 - rng.random((m, n))), axis=1)
        pos = np.repeat(seqs, q, axis=0).reshape(-1, d)
        ens = PathEnsemble(t, d, np.full(m, n), times.reshape(-1), pos, "enumerated")
        logw = (beta * hamiltonians(sheet, ens)).reshape(n_seq, q)
        log_vol = -2.0 * d * t + log_simplex_volume(n, t)
        # per sequence: volume * mean over quadrature points
        lm = logsumexp(logw, axis=1) - math.log(q)
        log_terms.append(log_vol + logsumexp(lm))
        if q > 1:
            shift = logw.max()
            w = np.exp(logw - shift)
            v = w.var(axis=1, ddof=1).sum() / q
            log_var.append(2.0 * log_vol + 2.0 * shift + math.log(v) if v > 0 else -np.inf)
    log_Z = float(logsumexp(log_terms))
    se = math.exp(0.5 * logsumexp(log_var) - log_Z) if log_var else 0.0
    if beta == 0.0:
        se = 0.0
    n_total = int(sum((2 * d) ** n for n in range(1, n_max + 1)) * quad_samples + 1)
    return PartitionEstimate(log_Z, float(se), n_total, params, sheet.master_seed,
                             method="series", truncation_bound=bound,
                             truncated=bound > tol)


# -- transfer-matrix recursion on a grid -----------------------------------------

def _walk_kernel(dt, eps=1e-17):
    """One-axis transition probabilities of the rate-2 walk over time ``dt``."""
    k = 1
    while ive(k, 2.0 * dt) > eps:
        k += 1
    ks = np.arange(-k, k + 1)
    return ive(np.abs(ks), 2.0 * dt)


def default_box_radius(d, t, beta):
    """Box half-width for the transfer recursion; walks leaving it are killed."""
    # four free-walk standard deviations per axis, widened with beta
    spread = math.sqrt(2.0 * t * max(1.0, beta))
    return int(math.ceil(4.0 * spread)) + 4


class TransferResult(NamedTuple):
    horizons: tuple
    log_Z: tuple
    log_leak: float
    dt: float
    box_radius: int


def transfer_log_partition(d, beta, horizons, dt, seed, box_radius=None):
    """``log Z`` of the grid polymer at each of the nested ``horizons``.

    Over each cell of length ``dt`` the walk collects the cell increment
    (``N(0, dt)``, fresh per site and cell) of the site it occupies at the
    start of the cell, then moves with the exact continuous-time
    transition law. Increments are drawn cell by cell from one stream, so
    shorter horizons are prefixes of longer ones. ``log_leak`` is the log
    of the mass kept inside the box at ``beta = 0`` (0 means no leak).
    """
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    if np.any(horizons <= 0) or np.any(np.diff(horizons) <= 0):
        raise DomainError("horizons must be positive and increasing")
    steps = np.rint(horizons / dt).astype(int)
    if np.any(np.abs(steps * dt - horizons) > 1e-9 * horizons) or np.any(steps < 1):
        raise DomainError(f"horizons must be multiples of dt={dt}")
    T = float(horizons[-1])
    R = default_box_radius(d, T, beta) if box_radius is None else int(box_radius)
    kern = _walk_kernel(dt)
    shape = (2 * R + 1,) * d
    z = np.zeros(shape)
    z[(R,) * d] = 1.0
    free = np.zeros(2 * R + 1)
    free[R] = 1.0
    rng = make_rng(seed)
    sd = math.sqrt(dt)
    log_scale = 0.0
    out = []
    want = set(steps.tolist())
    for k in range(1, int(steps[-1]) + 1):
        inc = rng.standard_normal(shape)
        z *= np.exp(beta * sd * inc)
        for ax in range(d):
            z = convolve1d(z, kern, axis=ax, mode="constant")
        s = z.sum()
        log_scale += math.log(s)
        z /= s
        if k in want:
            out.append(log_scale)
    # the box is a product of intervals, so the free mass factorizes over axes
    for _ in range(int(steps[-1])):
        free = np.convolve(free, kern, mode="same")
    leak = d * math.log(free.sum())
    return TransferResult(tuple(horizons.tolist()), tuple(out), leak, float(dt), R)


# -- free energy ---------------------------------------------------------------

def _sampling_task(args):
    params, n_paths, env_seed, path_seed = args
    sheet = EnvironmentSheet(params.d, env_seed)
    est = estimate_partition(sheet, params, n_paths, make_rng(path_seed))
    return est.log_Z, est.ess, est.low_confidence


def _transfer_task(args):
    params, dt, env_seed, box_radius = args
    res = transfer_log_partition(params.d, params.beta, [params.t], dt, env_seed, box_radius)
    return res.log_Z[0], float("inf"), False


def env_seeds(seed, n_env):
    return [derive_seed(seed, ENV_STREAM, e) for e in range(n_env)]


def free_energy_point(params, n_env, n_paths=1000, seed=0, method="sampling",
                      workers=1, dt=0.05, box_radius=None):
    """Environment average of ``(1/t) log Z_t`` with its standard error.

    ``method="sampling"`` uses :func:`estimate_partition` with ``n_paths``
    walks per sheet; ``method="transfer"`` uses the grid recursion with
    cell length ``dt``. Replica ``e`` uses environment seed
    ``derive_seed(seed, ENV_STREAM, e)`` under either method.
    """
    params._need_positive_t()
    if n_env < 2:
        raise DomainError("n_env must be >= 2")
    seeds = env_seeds(seed, n_env)
    if params.beta == 0.0:
        zeros = (0.0,) * n_env
        return FreeEnergyPoint(0.0, 0.0, float(n_paths), 0, zeros)
    if method == "sampling":
        tasks = [(params, n_paths, s, derive_seed(seed, PATH_STREAM, e))
                 for e, s in enumerate(seeds)]
        out = map_ordered(_sampling_task, tasks, workers)
    elif method == "transfer":
        tasks = [(params, dt, s, box_radius) for s in seeds]
        out = map_ordered(_transfer_task, tasks, workers)
    else:
        raise DomainError(f"unknown method {method!r}")
    logz = np.array([o[0] for o in out])
    p = logz / params.t
    return FreeEnergyPoint(float(p.mean()), float(p.std(ddof=1) / math.sqrt(n_env)),
                           float(min(o[1] for o in out)), int(sum(o[2] for o in out)),
                           tuple(logz.tolist()))


def martingale_value(log_Z, params):
    """``(M_t, log M_t)`` with ``M_t = Z_t exp(-beta^2 t / 2)``."""
    log_M = float(log_Z) - 0.5 * params.beta ** 2 * params.t
    return math.exp(log_M), log_M


# -- polymer-measure averages ------------------------------------------------------

def _occupancy_integrals(ens_a, wa, ens_b, wb):
    """``g_i = int rho_b(b_i(s), s) ds`` for each path of ``ens_a``.

    ``rho_b(x, s)`` is the weighted fraction of ensemble ``b`` at ``x`` at
    time ``s``; per site its time integral is piecewise linear, so each
    holding stretch of ``a`` is integrated exactly by interpolation.
    """
    pa, xa, a0, a1 = ens_a.segments()
    pb, xb, b0, b1 = ens_b.segments()
    wseg = wb[pb]
    sites, inv = np.unique(np.vstack([xa, xb]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    ia, ib = inv[:xa.shape[0]], inv[xa.shape[0]:]
    contrib = np.zeros(a0.size)
    order_b = np.argsort(ib, kind="stable")
    bounds_b = np.searchsorted(ib[order_b], np.arange(len(sites) + 1))
    order_a = np.argsort(ia, kind="stable")
    bounds_a = np.searchsorted(ia[order_a], np.arange(len(sites) + 1))
    for s in range(len(sites)):
        qa = order_a[bounds_a[s]:bounds_a[s + 1]]
        qb = order_b[bounds_b[s]:bounds_b[s + 1]]
        if qa.size == 0 or qb.size == 0:
            continue
        ev_t = np.r_[b0[qb], b1[qb]]
        ev_w = np.r_[wseg[qb], -wseg[qb]]
        o = np.argsort(ev_t, kind="stable")
        ev_t, dens = ev_t[o], np.cumsum(ev_w[o])
        cum = np.r_[0.0, np.cumsum(dens[:-1] * np.diff(ev_t))]
        contrib[qa] = np.interp(a1[qa], ev_t, cum) - np.interp(a0[qa], ev_t, cum)
    return np.bincount(pa, weights=contrib, minlength=len(ens_a))


def gibbs_average(sheet, params, tag, n_samples, rng):
    """Self-normalized importance-sampling estimate of a polymer average.

    Tags: ``jump_count`` (number of jumps), ``endpoint_displacement``
    (squared distance of the endpoint from the start) and
    ``replica_overlap`` (fraction of ``[0, t]`` two independent replicas
    spend at the same site, with one weighted ensemble per replica).
    """
    params._need_positive_t()
    if tag not in TAGS:
        raise DomainError(f"unknown tag {tag!r}; expected one of {TAGS}")
    if n_samples < 10:
        raise DomainError("n_samples must be >= 10")
    d, t, beta = params.d, params.t, params.beta
    ens = sample_paths(rng, d, t, n_samples)
    _, _, w, ess = _weight_stats(beta * hamiltonians(sheet, ens))
    if tag == "replica_overlap":
        ens2 = sample_paths(rng, d, t, n_samples)
        _, _, w2, ess2 = _weight_stats(beta * hamiltonians(sheet, ens2))
        g1 = _occupancy_integrals(ens, w, ens2, w2) / t
        g2 = _occupancy_integrals(ens2, w2, ens, w) / t
        value = float(np.clip(np.dot(w, g1), 0.0, 1.0))
        var = np.dot(w ** 2, (g1 - value) ** 2) + np.dot(w2 ** 2, (g2 - value) ** 2)
        ess = min(ess, ess2)
    else:
        if tag == "jump_count":
            f = ens.counts.astype(float)
        else:
            f = (ens.endpoints() ** 2).sum(axis=1).astype(float)
        value = float(np.dot(w, f))
        var = np.dot(w ** 2, (f - value) ** 2)
    return GibbsAverage(tag, value, float(math.sqrt(var)), float(ess), ess < ESS_MIN)
