"""Continuous-time simple symmetric random walk on Z^d.

The walk waits an Exponential(2d) holding time at each site and then
moves to one of the 2d neighbors uniformly. Paths are stored as jump
times plus the sequence of visited sites; ensembles use flat arrays so
that environment queries can be batched.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, SizeError

ENUMERATION_LIMIT = 10**7


def unit_steps(d):
    """Step vectors indexed by move code - 1: +e1, -e1, +e2, -e2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for a in range(d):
        steps[2 * a, a] = 1
        steps[2 * a + 1, a] = -1
    return steps


def _check_dt(d, t):
    if int(d) != d or d < 1:
        raise DomainError(f"dimension must be a positive integer, got {d}")
    if not t > 0 or math.isinf(t):
        raise DomainError(f"horizon must be positive and finite, got {t}")


@dataclass(frozen=True, eq=False)
class JumpPath:
    """A nearest-neighbor path on ``[0, horizon]``.

    ``positions[j]`` is occupied on ``[jump_times[j-1], jump_times[j])``
    with ``jump_times[-1] := 0`` and a final stretch up to ``horizon``.
    Jump times lie in ``[0, horizon]``; sampled paths never jump at 0,
    grid maximizers may (the closure of the jump-time simplex).
    """

    horizon: float
    jump_times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        s = np.array(self.jump_times, dtype=float).reshape(-1)
        x = np.array(self.positions, dtype=np.int64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        t = float(self.horizon)
        if not t > 0:
            raise DomainError(f"horizon must be positive, got {t}")
        if x.shape[0] != s.size + 1:
            raise DomainError("need exactly one more position than jump times")
        if s.size:
            if s[0] < 0 or s[-1] > t or np.any(np.diff(s) < 0):
                raise DomainError("jump times must be nondecreasing within [0, horizon]")
            if np.any(np.abs(np.diff(x, axis=0)).sum(axis=1) != 1):
                raise DomainError("consecutive positions must be lattice neighbors")
        s.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "horizon", t)
        object.__setattr__(self, "jump_times", s)
        object.__setattr__(self, "positions", x)

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def n_jumps(self):
        return self.jump_times.size

    @property
    def start(self):
        return self.positions[0]

    @property
    def end(self):
        return self.positions[-1]

    def position_at(self, s):
        """Site occupied at time ``s`` (right-continuous)."""
        return self.positions[np.searchsorted(self.jump_times, s, side="right")]

    def segments(self):
        """``(sites, t0, t1)`` for each holding stretch."""
        bp = np.r_[0.0, self.jump_times, self.horizon]
        return self.positions, bp[:-1], bp[1:]

    def window(self, a, b):
        """The path restricted to ``[a, b]`` and shifted to start at time 0."""
        if not 0 <= a < b <= self.horizon:
            raise DomainError(f"window [{a}, {b}] not inside [0, {self.horizon}]")
        lo = np.searchsorted(self.jump_times, a, side="right")
        hi = np.searchsorted(self.jump_times, b, side="right")
        return JumpPath(b - a, self.jump_times[lo:hi] - a, self.positions[lo:hi + 1])

    def to_record(self):
        """Text record ``{"t", "start", "jumps": [[s_j, x_j], ...]}`` (JSON)."""
        return json.dumps({
            "t": self.horizon,
            "start": self.positions[0].tolist(),
            "jumps": [[s, x] for s, x in zip(self.jump_times.tolist(),
                                              self.positions[1:].tolist())],
        })

    @classmethod
    def from_record(cls, text):
        rec = json.loads(text)
        jumps = rec["jumps"]
        d = len(rec["start"])
        times = [j[0] for j in jumps]
        pos = [rec["start"]] + [j[1] for j in jumps]
        return cls(rec["t"], np.asarray(times, dtype=float),
                   np.asarray(pos, dtype=np.int64).reshape(-1, d))


@dataclass(eq=False)
class PathEnsemble:
    """Many paths sharing one horizon, stored flat.

    ``counts[i]`` is the jump count of path ``i``; ``jump_times`` holds all
    jump times path after path; ``positions`` holds ``counts[i] + 1`` rows
    per path (one per holding stretch).
    """

    horizon: float
    d: int
    counts: np.ndarray
    jump_times: np.ndarray
    positions: np.ndarray
    law: str = "free"
    seed: object = None
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self._offsets = np.r_[0, np.cumsum(self.counts + 1)]

    def __len__(self):
        return self.counts.size

    def __getitem__(self, i):
        a, b = self._offsets[i], self._offsets[i + 1]
        return JumpPath(self.horizon, self.jump_times[a - i:b - i - 1], self.positions[a:b])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def segment_starts(self):
        """Index of each path's first segment in the flat segment arrays."""
        return self._offsets[:-1]

    def segments(self):
        """Flat ``(path_index, sites, t0, t1)`` over all holding stretches."""
        n = len(self)
        path = np.repeat(np.arange(n), self.counts + 1)
        t0 = np.empty(self.positions.shape[0])
        t1 = np.empty_like(t0)
        first = self._offsets[:-1]
        last = self._offsets[1:] - 1
        jump_rows = np.ones(t0.size, dtype=bool)
        jump_rows[first] = False
        t0[first] = 0.0
        t0[jump_rows] = self.jump_times
        end_rows = np.ones(t0.size, dtype=bool)
        end_rows[last] = False
        t1[last] = self.horizon
        t1[end_rows] = self.jump_times
        return path, self.positions, t0, t1

    def endpoints(self):
        return self.positions[self._offsets[1:] - 1]

    @classmethod
    def from_paths(cls, paths, law="enumerated", seed=None):
        paths = list(paths)
        if not paths:
            raise DomainError("empty path list")
        t, d = paths[0].horizon, paths[0].d
        if any(p.horizon != t or p.d != d for p in paths):
            raise DomainError("all paths must share horizon and dimension")
        return cls(t, d, [p.n_jumps for p in paths],
                   np.concatenate([p.jump_times for p in paths]),
                   np.concatenate([p.positions for p in paths]), law, seed)


def _assemble(counts, jump_times, codes, d, t, start, law, seed):
    n = counts.size
    total = int(counts.sum())
    rows = total + n
    first = np.r_[0, np.cumsum(counts + 1)][:-1]
    moves = np.zeros((rows, d), dtype=np.int64)
    mask = np.ones(rows, dtype=bool)
    mask[first] = False
    moves[mask] = unit_steps(d)[codes]
    moves[first] = start
    csum = np.cumsum(moves, axis=0)
    base = csum[first] - moves[first]
    positions = csum - np.repeat(base, counts + 1, axis=0)
    return PathEnsemble(t, d, counts, jump_times, positions, law, seed)


def sample_paths(rng, d, t, n, rate=None, start=None, law="free"):
    """Sample ``n`` independent walks on ``[0, t]`` as a :class:`PathEnsemble`.

    Jumps form a Poisson process of intensity ``rate`` (default ``2d``):
    the count is Poisson(rate*t) and, given the count, jump times are
    sorted uniforms on ``(0, t]``. This is the same law as i.i.d.
    exponential holding times truncated at ``t``.
    """
    _check_dt(d, t)
    rate = 2.0 * d if rate is None else float(rate)
    start = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    counts = rng.poisson(rate * t, size=int(n)).astype(np.int64)
    total = int(counts.sum())
    times = t * (1.0 - rng.random(total))
    owner = np.repeat(np.arange(int(n)), counts)
    times = times[np.lexsort((times, owner))]
    codes = rng.integers(0, 2 * d, size=total)
    return _assemble(counts, times, codes, d, t, start, law, None)


def sample_path(rng, d, t, start=None):
    """One free walk with Exponential(2d) holding times, truncated at ``t``."""
    return sample_paths(rng, d, t, 1, start=start)[0]


def difference_walk_sampler(rng, d, t):
    """A walk with holding rate ``4d``: the law of the difference of two free walks."""
    return sample_paths(rng, d, t, 1, rate=4.0 * d, law="difference")[0]


def sample_difference_walks(rng, d, t, n):
    return sample_paths(rng, d, t, n, rate=4.0 * d, law="difference")


def enumerate_discrete_paths(d, n, limit=ENUMERATION_LIMIT):
    """All nearest-neighbor sequences ``x_0 = 0, ..., x_n`` as an array ``((2d)^n, n+1, d)``.

    Rows are in lexicographic order of the move codes.
    """
    count = (2 * d) ** n
    if count > limit:
        raise SizeError(f"(2d)^n = {count} sequences exceeds the limit {limit}", required=count)
    codes = np.zeros((count, n), dtype=np.int64)
    idx = np.arange(count)
    for j in range(n - 1, -1, -1):
        codes[:, j] = idx % (2 * d)
        idx //= 2 * d
    out = np.zeros((count, n + 1, d), dtype=np.int64)
    if n:
        out[:, 1:] = np.cumsum(unit_steps(d)[codes], axis=1)
    return out


def intersection_time(p1, p2):
    """Lebesgue time in ``[0, t]`` during which the two paths occupy the same site."""
    if p1.horizon != p2.horizon:
        raise DomainError(f"horizons differ: {p1.horizon} != {p2.horizon}")
    if p1.d != p2.d:
        raise DomainError("dimensions differ")
    bp = np.unique(np.r_[0.0, p1.jump_times, p2.jump_times, p1.horizon])
    left = bp[:-1]
    x1 = p1.positions[np.searchsorted(p1.jump_times, left, side="right")]
    x2 = p2.positions[np.searchsorted(p2.jump_times, left, side="right")]
    same = np.all(x1 == x2, axis=1)
    return float(np.diff(bp)[same].sum())


def occupation_times(ensemble, site=None):
    """Time each path of ``ensemble`` spends at ``site`` (default: origin)."""
    site = np.zeros(ensemble.d, dtype=np.int64) if site is None else np.asarray(site)
    path, sites, t0, t1 = ensemble.segments()
    at = np.all(sites == site, axis=1)
    return np.bincount(path[at], weights=(t1 - t0)[at], minlength=len(ensemble))


def occupation_time(path, site=None):
    site = np.zeros(path.d, dtype=np.int64) if site is None else np.asarray(site)
    x, t0, t1 = path.segments()
    return float((t1 - t0)[np.all(x == site, axis=1)].sum())


def log_simplex_volume(n, t):
    return n * math.log(t) - math.lgamma(n + 1)


def simplex_volume(n, t):
    """Volume ``t^n / n!`` of ``{0 <= s_1 <= ... <= s_n <= t}``."""
    if n < 0 or t <= 0:
        raise DomainError("need n >= 0 and t > 0")
    if n <= 20:
        return t ** n / math.factorial(n)
    return math.exp(log_simplex_volume(n, t))
