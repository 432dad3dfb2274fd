"""Maximization of the Gaussian path field on a time grid.

The environment is discretized into i.i.d. cell increments
``inc[k, x] ~ N(0, dt)`` for cells ``k = 0..K-1``. A grid path picks a
move at each boundary ``k`` (time ``k*dt``, boundary 0 included): stay,
or jump to one of the ``2d`` neighbors. It then collects ``inc[k, y_k]``
for the site ``y_k`` it occupies during cell ``k``. The field value is
the sum of collected increments, evaluated as the right fold
``inc[0] + (inc[1] + (... + (inc[K-1] + 0.0)))`` so that the dynamic
program and the exhaustive oracle produce bit-identical floats.

Move codes: ``0`` stay, ``2a+1`` is ``+e_a``, ``2a+2`` is ``-e_a``.
Among maximizers the reported one uses the fewest jumps, then the
lexicographically smallest move sequence.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import map_ordered
from .exceptions import DomainError, SizeError
from .seeding import BASE_STREAM, GRID_STREAM, derive_seed, make_rng
from .walk import JumpPath, unit_steps

DEFAULT_STATE_CAP = 10**9
BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self):
        return self.horizon / self.K

    @classmethod
    def per_unit_time(cls, t, steps_per_unit):
        return cls(t, max(1, int(round(t * steps_per_unit))))


def shell_order(R, d):
    """Sites of the box ``[-R, R]^d`` sorted by sup-norm, then lexicographically.

    Any smaller box is a prefix of this order, which keeps increments
    coupled across box radii.
    """
    axes = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    shell = np.abs(grid).max(axis=1)
    keys = [grid[:, a] for a in range(d - 1, -1, -1)] + [shell]
    return grid[np.lexsort(keys)]


class GridEnvironment:
    """Dense cell increments on a box of radius ``R`` around the origin.

    ``increments`` has shape ``(K, (2R+1)^d)``; column order is the
    row-major flattening of the box (see :meth:`index`).
    """

    def __init__(self, grid, R, d, increments, seed=None):
        self.grid = grid
        self.R = int(R)
        self.d = int(d)
        self.width = 2 * self.R + 1
        self.increments = np.asarray(increments, dtype=float)
        if self.increments.shape != (grid.K, self.width ** self.d):
            raise DomainError(f"increments must have shape {(grid.K, self.width ** self.d)}")
        self.seed = seed

    @property
    def n_sites(self):
        return self.width ** self.d

    def index(self, sites):
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        if np.any(np.abs(sites) > self.R):
            raise DomainError("site outside the box")
        return np.ravel_multi_index(tuple((sites + self.R).T), (self.width,) * self.d)

    def coords(self, idx):
        return np.stack(np.unravel_index(np.asarray(idx), (self.width,) * self.d), axis=-1) - self.R

    def neighbor_table(self):
        """``(2d, n_sites)`` flat neighbor indices, ``-1`` outside the box."""
        coords = self.coords(np.arange(self.n_sites))
        table = np.full((2 * self.d, self.n_sites), -1, dtype=np.int64)
        for m, step in enumerate(unit_steps(self.d)):
            nb = coords + step
            ok = np.all(np.abs(nb) <= self.R, axis=1)
            table[m, ok] = self.index(nb[ok])
        return table

    @classmethod
    def sample(cls, grid, R, d, seed):
        """i.i.d. ``N(0, dt)`` increments; site ``i`` in :func:`shell_order` gets draws ``i*K .. i*K+K-1``."""
        order = shell_order(R, d)
        z = make_rng(seed).standard_normal((order.shape[0], grid.K))
        out = np.empty((grid.K, order.shape[0]))
        width = 2 * R + 1
        cols = np.ravel_multi_index(tuple((order + R).T), (width,) * d)
        out[:, cols] = (math.sqrt(grid.dt) * z).T
        return cls(grid, R, d, out, seed)

    @classmethod
    def zeros(cls, grid, R, d):
        return cls(grid, R, d, np.zeros((grid.K, (2 * R + 1) ** d)))

    def scaled(self, factor, horizon):
        """Same normals on a grid of horizon ``horizon`` with increments times ``factor``."""
        return GridEnvironment(TimeGrid(horizon, self.grid.K), self.R, self.d,
                               self.increments * factor, self.seed)


@dataclass(frozen=True)
class ConstraintSpec:
    """Jump budget and separation rules for grid paths.

    ``min_separation_steps``: consecutive jumps at least this many
    boundaries apart. ``endpoint_buffer_steps``: first jump at boundary
    ``>= buffer`` and last jump at boundary ``<= K - buffer``.
    """

    max_jumps: int
    min_separation_steps: int = 0
    endpoint_buffer_steps: int = 0

    def __post_init__(self):
        for name in ("max_jumps", "min_separation_steps", "endpoint_buffer_steps"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DomainError(f"{name} must be a nonnegative integer, got {v}")
            object.__setattr__(self, name, int(v))

    @classmethod
    def from_rates(cls, r, t, dt, rho=0.0):
        """Budget ``floor(r t)``; separation ``2 rho`` rounded up to whole steps."""
        sep = 0 if rho <= 0 else int(math.ceil(2.0 * rho / dt - 1e-9))
        return cls(int(math.floor(r * t + 1e-9)), sep, sep)

    def allows_jump(self, k, K, jumps_used, since_last):
        if jumps_used >= self.max_jumps:
            return False
        if k > K - self.endpoint_buffer_steps:
            return False
        if jumps_used == 0:
            return k >= self.endpoint_buffer_steps
        return since_last >= self.min_separation_steps


@dataclass(frozen=True, eq=False)
class SupResult:
    value: float
    moves: np.ndarray
    sites: np.ndarray
    jumps_used: int

    @property
    def jump_steps(self):
        return np.flatnonzero(self.moves)

    def to_jump_path(self, grid):
        k = self.jump_steps
        pos = np.concatenate([np.zeros((1, self.sites.shape[1]), dtype=np.int64), self.sites[k]])
        return JumpPath(grid.horizon, k * grid.dt, pos)


@dataclass(frozen=True)
class TubeSpec:
    rho: float
    base: SupResult

    def __post_init__(self):
        if self.rho < 0:
            raise DomainError("tube radius must be nonnegative")


def moves_to_sites(moves, d):
    steps = np.vstack([np.zeros((1, d), dtype=np.int64), unit_steps(d)])
    return np.cumsum(steps[np.asarray(moves)], axis=-2)


def grid_path_value(genv, sites):
    """Right-fold field value of a grid path given its per-cell sites ``(K, d)``."""
    cols = genv.index(sites)
    inc = genv.increments[np.arange(genv.grid.K), cols]
    acc = 0.0
    for v in inc[::-1]:
        acc = v + acc
    return float(acc)


def check_admissible(moves, constraints, K):
    """True iff the move sequence respects budget, separation and buffers."""
    jumps = np.flatnonzero(np.asarray(moves))
    c = constraints
    if jumps.size > c.max_jumps:
        return False
    if jumps.size == 0:
        return True
    if jumps[0] < c.endpoint_buffer_steps or jumps[-1] > K - c.endpoint_buffer_steps:
        return False
    return bool(np.all(np.diff(jumps) >= max(c.min_separation_steps, 1)))


def _state_count(genv, constraints):
    C = max(constraints.min_separation_steps, 0) + 1
    return genv.grid.K * genv.n_sites * (constraints.max_jumps + 1) * C


def dp_sup_field(genv, constraints, return_path=True, state_cap=DEFAULT_STATE_CAP):
    """Exact maximum of the grid field over admissible paths.

    Backward dynamic program over states (boundary, site, jumps used,
    boundaries since last jump clamped at the separation), carrying the
    value-to-go and the fewest jumps-to-go among maximizers. With
    ``return_path`` the maximizer is recovered under the shared tie-break;
    otherwise only ``value`` and ``jumps_used`` are filled in.
    """
    c = constraints
    K, S, J = genv.grid.K, genv.n_sites, c.max_jumps
    if genv.R < J:
        raise DomainError(f"box radius {genv.R} smaller than the jump budget {J}")
    need = _state_count(genv, c)
    if need > state_cap:
        raise SizeError(f"DP needs {need} states, cap is {state_cap}", required=need)
    m, buf = c.min_separation_steps, c.endpoint_buffer_steps
    cap = m
    C = cap + 1
    nbr = genv.neighbor_table()
    valid = nbr >= 0
    nbr_safe = np.where(valid, nbr, 0)
    c_next = np.minimum(np.arange(C) + 1, cap)
    c_jump = min(1, cap)
    # j == 0 states keep their counter at `cap`; first-jump timing is checked on k
    allowed = np.zeros((J, C), dtype=bool)
    if J:
        allowed[0, cap] = True
        allowed[1:, :] = (np.arange(C) >= m)[None, :]

    G = np.zeros((S, J + 1, C))
    H = np.zeros((S, J + 1, C), dtype=np.int64)
    history = []
    for k in range(K - 1, -1, -1):
        inc = genv.increments[k]
        if return_path:
            history.append((G, H))
        newG = inc[:, None, None] + G[:, :, c_next]
        newH = H[:, :, c_next]
        if J > 0 and buf <= k <= K - buf:
            into = inc[:, None] + G[:, 1:, c_jump]
            into_h = 1 + H[:, 1:, c_jump]
            for mv in range(2 * genv.d):
                cand = into[nbr_safe[mv]]
                cand[~valid[mv]] = -np.inf
                candv = np.where(allowed, cand[:, :, None], -np.inf)
                candh = into_h[nbr_safe[mv]][:, :, None]
                cur_v = newG[:, :J, :]
                cur_h = newH[:, :J, :]
                better = (candv > cur_v) | ((candv == cur_v) & (candh < cur_h))
                newG[:, :J, :] = np.where(better, candv, cur_v)
                newH[:, :J, :] = np.where(better, candh, cur_h)
        G, H = newG, newH
    origin = int(genv.index(np.zeros(genv.d, dtype=np.int64))[0])
    value = float(G[origin, 0, cap])
    if not return_path:
        return SupResult(value, None, None, int(H[origin, 0, cap]))
    history.reverse()
    return _reconstruct(genv, c, history, value, origin, nbr)


def _reconstruct(genv, c, history, value, origin, nbr):
    K, d = genv.grid.K, genv.d
    m = c.min_separation_steps
    cap = m
    y, j, cnt = origin, 0, cap
    moves = np.zeros(K, dtype=np.int64)
    cols = np.zeros(K, dtype=np.int64)
    target = value
    for k in range(K):
        Gn, Hn = history[k]
        inc = genv.increments[k]
        best = None
        c_stay = min(cnt + 1, cap)
        options = [(0, y, j, c_stay)]
        if c.allows_jump(k, K, j, cnt if j else k):
            for mv in range(2 * d):
                yn = nbr[mv, y]
                if yn >= 0:
                    options.append((mv + 1, yn, j + 1, min(1, cap)))
        for code, yn, jn, cn in options:
            v = inc[yn] + Gn[yn, jn, cn]
            h = (jn - j) + Hn[yn, jn, cn]
            key = (-v, h, code)
            if best is None or key < best[0]:
                best = (key, code, yn, jn, cn, v)
        _, code, y, j, cnt, v = best
        if k == 0 and v != target:
            raise AssertionError("DP reconstruction mismatch")
        moves[k] = code
        cols[k] = y
    sites = genv.coords(cols)
    return SupResult(value, moves, sites, int(np.count_nonzero(moves)))


def brute_force_sup(genv, constraints, limit=BRUTE_FORCE_LIMIT):
    """Exhaustive maximum over all admissible move sequences (test oracle)."""
    K, d = genv.grid.K, genv.d
    base = 2 * d + 1
    total = base ** K
    if total > limit:
        raise SizeError(f"{total} move sequences exceed the limit {limit}", required=total)
    c = constraints
    idx = np.arange(total)
    moves = np.zeros((total, K), dtype=np.int64)
    for k in range(K - 1, -1, -1):
        moves[:, k] = idx % base
        idx //= base
    jumps = moves > 0
    n = jumps.sum(axis=1)
    ok = n <= c.max_jumps
    steps = np.arange(K)
    if c.endpoint_buffer_steps:
        outside = (steps < c.endpoint_buffer_steps) | (steps > K - c.endpoint_buffer_steps)
        ok &= ~np.any(jumps & outside[None, :], axis=1)
    sep = max(c.min_separation_steps, 1)
    # any two jumps closer than `sep` boundaries
    for lag in range(1, min(sep, K)):
        ok &= ~np.any(jumps[:, lag:] & jumps[:, :-lag], axis=1)
    moves, n = moves[ok], n[ok]
    sites = moves_to_sites(moves, d)
    inside = np.all(np.abs(sites) <= genv.R, axis=(1, 2))
    moves, n, sites = moves[inside], n[inside], sites[inside]
    cols = genv.index(sites.reshape(-1, d)).reshape(sites.shape[:2])
    acc = np.zeros(len(moves))
    for k in range(K - 1, -1, -1):
        acc = genv.increments[k, cols[:, k]] + acc
    best = acc.max()
    tied = np.flatnonzero(acc == best)
    pick = tied[np.lexsort((tied, n[tied]))[0]]
    return SupResult(float(best), moves[pick], sites[pick], int(n[pick]))


# -zeta(1/2)/sqrt(2 pi): mean shortfall of a grid-sampled Brownian maximum, in units sigma*sqrt(dt)
MONITORING_SHORTFALL = 0.5825971579390107


def monitoring_correction(jumps_used, dt):
    """Field lost by restricting jump times to the grid, summed over jumps.

    Each jump sits near a maximum of the difference of two independent
    site motions (variance 2 per unit time); sampling that maximum on a
    grid of step ``dt`` falls short by about ``0.5826 * sqrt(2 dt)``.
    """
    return jumps_used * MONITORING_SHORTFALL * math.sqrt(2.0 * dt)


def _env_seed(seed, K, e):
    return derive_seed(seed, GRID_STREAM, K, e)


def _sup_task(args):
    grid, d, J, sep, seed = args
    genv = GridEnvironment.sample(grid, max(J, 1), d, seed)
    res = dp_sup_field(genv, ConstraintSpec(J, sep, sep), return_path=False)
    return res.value, res.jumps_used


@dataclass(frozen=True)
class FRow:
    t: float
    K: int
    max_jumps: int
    F_hat: float
    se: float
    F_grid: float
    se_grid: float
    mean_jumps: float
    envelope_ratio: float


@dataclass(frozen=True)
class FTable:
    """Per-horizon estimates of ``(1/t) E sup``.

    ``F_grid`` is the raw grid maximum divided by ``t``; ``F_hat`` adds the
    per-jump monitoring correction and estimates the continuous-time
    quantity. The largest horizon supplies :attr:`F` and :attr:`se`.
    ``sups`` keeps the per-environment raw maxima (divided by ``t``).
    """

    r: float
    rho: float
    d: int
    n_env: int
    rows: tuple
    sups: tuple
    corrected: tuple

    @property
    def F(self):
        return self.rows[-1].F_hat

    @property
    def se(self):
        return self.rows[-1].se

    CSV_HEADER = ("r", "rho", "t", "K", "d", "n_env", "F_hat", "se",
                  "F_grid", "se_grid", "mean_jumps")

    def csv_rows(self):
        return [(self.r, self.rho, row.t, row.K, self.d, self.n_env, row.F_hat, row.se,
                 row.F_grid, row.se_grid, row.mean_jumps) for row in self.rows]


def estimate_F_rho(r, rho, t_list, K_per_unit_time=8, n_env=32, d=1, seed=0, workers=1):
    """Estimate ``(1/t) E sup`` over paths with ``floor(r t)`` jumps separated by ``2 rho``.

    Environments are keyed by ``(seed, K, replica)`` only, so calls with
    different ``r`` or ``rho`` see identical increments on shared sites.
    The envelope ratio is ``t F_grid / sqrt(floor(r t) t)``.
    """
    t_list = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise DomainError("t_list must be increasing")
    if n_env < 2:
        raise DomainError("n_env must be >= 2")
    rows, sups_all, corr_all = [], [], []
    root_n = math.sqrt(n_env)
    for t in t_list:
        grid = TimeGrid.per_unit_time(t, K_per_unit_time)
        spec = ConstraintSpec.from_rates(r, t, grid.dt, rho)
        tasks = [(grid, d, spec.max_jumps, spec.min_separation_steps,
                  _env_seed(seed, grid.K, e)) for e in range(n_env)]
        out = map_ordered(_sup_task, tasks, workers)
        sups = np.array([v for v, _ in out]) / t
        jumps = np.array([n for _, n in out], dtype=float)
        corr = sups + monitoring_correction(jumps, grid.dt) / t
        J = spec.max_jumps
        ratio = sups.mean() * t / math.sqrt(J * t) if J > 0 else float("nan")
        rows.append(FRow(t, grid.K, J, float(corr.mean()), float(corr.std(ddof=1) / root_n),
                         float(sups.mean()), float(sups.std(ddof=1) / root_n),
                         float(jumps.mean()), float(ratio)))
        sups_all.append(tuple(sups.tolist()))
        corr_all.append(tuple(corr.tolist()))
    return FTable(float(r), float(rho), int(d), int(n_env), tuple(rows),
                  tuple(sups_all), tuple(corr_all))


def estimate_F(r, t_list, K_per_unit_time=8, n_env=32, d=1, seed=0, workers=1):
    """Unconstrained special case of :func:`estimate_F_rho`."""
    return estimate_F_rho(r, 0.0, t_list, K_per_unit_time, n_env, d, seed, workers)


def tube_extrema(genv, jump_steps, sites_seq, width):
    """Min and max of the field over jump steps within ``width`` of ``jump_steps``.

    ``sites_seq`` holds the visited sites ``x_0..x_n``; the position
    sequence is fixed and jump steps must stay ordered. Solved by a
    dynamic program over the jump index.
    """
    K = genv.grid.K
    n = len(jump_steps)
    cols = genv.index(sites_seq)
    cum = np.vstack([np.zeros(genv.n_sites), np.cumsum(genv.increments, axis=0)])
    tail = cum[K, cols[-1]]
    if n == 0:
        return float(tail), float(tail)
    out = []
    for sign in (1.0, -1.0):
        prev_k = prev_v = None
        for j in range(n):
            lo = max(0, jump_steps[j] - width)
            hi = min(K, jump_steps[j] + width)
            ks = np.arange(lo, hi + 1)
            phi = sign * (cum[ks, cols[j]] - cum[ks, cols[j + 1]])
            if prev_k is None:
                val = phi
            else:
                run = np.maximum.accumulate(prev_v)
                pos = np.searchsorted(prev_k, ks, side="right") - 1
                feas = pos >= 0
                val = np.full(ks.size, -np.inf)
                val[feas] = phi[feas] + run[pos[feas]]
            prev_k, prev_v = ks, val
        out.append(sign * float(prev_v.max()))
    return out[1] + tail, out[0] + tail


def _random_base(rng, genv, J):
    """A random admissible path with ``J`` jumps at distinct boundaries."""
    K, d = genv.grid.K, genv.d
    n = min(J, K)
    ks = np.sort(rng.choice(K, size=n, replace=False))
    moves = np.zeros(K, dtype=np.int64)
    moves[ks] = rng.integers(1, 2 * d + 1, size=n)
    return moves


def _upsilon_task(args):
    grid, d, J, widths, n_bases, env_seed, base_seed = args
    genv = GridEnvironment.sample(grid, max(J, 1), d, env_seed)
    best = dp_sup_field(genv, ConstraintSpec(J))
    rng = make_rng(base_seed)
    bases = [best.moves] + [_random_base(rng, genv, J) for _ in range(n_bases - 1)]
    out = np.zeros(len(widths))
    for moves in bases:
        sites = moves_to_sites(moves, d)
        ks = np.flatnonzero(moves)
        seq = np.vstack([np.zeros((1, d), dtype=np.int64), sites[ks]])
        own = grid_path_value(genv, sites)
        for i, w in enumerate(widths):
            if w == 0:
                continue
            lo, hi = tube_extrema(genv, ks, seq, w)
            out[i] = max(out[i], own - lo, hi - own)
    return out


def estimate_upsilon(r, rho, t_list, n_env=16, n_bases=8, d=1, seed=0,
                     K_per_unit_time=16, workers=1):
    """Lower-bound estimate of ``(1/t) E sup A`` over tubes of jump-time radius ``rho``.

    ``rho`` may be a scalar or a sequence; the same bases and environments
    serve every radius, so the estimate is monotone in ``rho`` per
    environment. Bases: the unconstrained maximizer plus ``n_bases - 1``
    random paths using the full budget. Returns rows
    ``(t, rho, Upsilon_hat, se)``.
    """
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rhos < 0):
        raise DomainError("tube radius must be nonnegative")
    rows = []
    for t in t_list:
        grid = TimeGrid.per_unit_time(t, K_per_unit_time)
        J = ConstraintSpec.from_rates(r, t, grid.dt).max_jumps
        widths = [int(math.floor(x / grid.dt + 1e-9)) for x in rhos]
        tasks = [(grid, d, J, widths, n_bases, _env_seed(seed, grid.K, e),
                  derive_seed(seed, BASE_STREAM, grid.K, e)) for e in range(n_env)]
        vals = np.asarray(map_ordered(_upsilon_task, tasks, workers)) / t
        for i, x in enumerate(rhos):
            col = vals[:, i]
            rows.append((float(t), float(x), float(col.mean()),
                         float(col.std(ddof=1) / math.sqrt(n_env))))
    return rows


def estimate_C0(F1_hat, se=0.0):
    """``F(1)^2 / 8`` with first-order error propagation."""
    if not F1_hat > 0:
        raise DomainError(f"F(1) estimate must be positive, got {F1_hat}")
    return F1_hat ** 2 / 8.0, F1_hat * se / 4.0


def jump_rate(beta, C0_hat):
    if not beta > 1:
        raise DomainError(f"beta must exceed 1, got {beta}")
    return 0.5 * C0_hat * beta ** 2 / math.log(beta) ** 2


def default_jump_budget(beta, C0_hat, t):
    """``floor((C0/2) beta^2 / log^2(beta) * t)``."""
    return int(math.floor(jump_rate(beta, C0_hat) * t + 1e-12))
