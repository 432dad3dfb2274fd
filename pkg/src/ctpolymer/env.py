"""Lazily sampled Brownian environment ``W(t, x)`` on the lattice.

Each lattice site carries an independent standard Brownian motion. Values
are materialized only at queried times: a query between two recorded
times is drawn from the exact Brownian-bridge conditional law, a query
past the last recorded time extends the motion with an independent
Gaussian increment. Every drawn value is recorded, so later queries stay
consistent with earlier ones.

Randomness is organized per site. Site ``x`` owns a Philox stream keyed by
``(master_seed, x)``; the ``k``-th normal it ever consumes is therefore a
function of ``(master_seed, x, k)`` alone, and the number of draws
consumed so far (the site's *ordinal*) is all that is needed to restore
the stream. Results do not depend on the order in which sites are visited.

Snapshot format
---------------
:meth:`EnvironmentSheet.snapshot` returns a JSON document::

    {"format": "ctpolymer.environment", "version": 1,
     "d": <int>, "master_seed": <int>,
     "timelines": [{"site": [x1, ..., xd], "ordinal": <int>,
                    "times": [...], "values": [...]}, ...]}

``times``/``values`` list the recorded points in increasing time order,
excluding the implicit anchor ``(0, 0)``. Floats are written with
``repr`` precision, so the round trip is exact. Timelines are sorted by
site.
"""
import json
import math

import numpy as np

from .exceptions import DomainError, SnapshotError
from .seeding import make_rng

SNAPSHOT_FORMAT = "ctpolymer.environment"
SNAPSHOT_VERSION = 1


class SiteTimeline:
    """Recorded points of the Brownian motion at one site.

    ``times[0] == 0`` and ``values[0] == 0`` hold the anchor. Both arrays
    stay sorted by time; neighbor lookup is a binary search.
    """

    def __init__(self, site, rng):
        self.site = tuple(int(c) for c in site)
        self.times = np.zeros(1)
        self.values = np.zeros(1)
        self.ordinal = 0
        self._rng = rng

    def __len__(self):
        return len(self.times)

    @property
    def samples(self):
        """Recorded ``(time, value)`` pairs, anchor included."""
        return list(zip(self.times.tolist(), self.values.tolist()))

    def _normals(self, n):
        self.ordinal += n
        return self._rng.standard_normal(n)

    def sample(self, query_times):
        """Return W at ``query_times`` (any order, repeats allowed), recording new points."""
        q = np.asarray(query_times, dtype=float)
        if q.size == 0:
            return np.empty(0)
        if not np.all(np.isfinite(q)) or q.min() < 0.0:
            raise DomainError(f"site {self.site}: query times must be finite and >= 0")
        uniq = np.unique(q)
        pos = np.searchsorted(self.times, uniq)
        known = pos < len(self.times)
        known[known] = self.times[pos[known]] == uniq[known]
        if not known.all():
            self._refine(uniq[~known], pos[~known])
        return self.values[np.searchsorted(self.times, q)]

    def _refine(self, new, pos):
        # new: sorted, unrecorded; pos: insertion index of each into self.times
        times, values = self.times, self.values
        last = len(times)
        inner = pos < last
        n_in = int(inner.sum())
        new_vals = np.empty(new.size)

        if n_in:
            u = new[inner]
            gap = pos[inner] - 1  # left anchor index
            first = np.ones(n_in, dtype=bool)
            first[1:] = gap[1:] != gap[:-1]
            prev = np.where(first, times[gap], np.roll(u, 1))
            gaps = gap[first]
            n_gaps = gaps.size
        else:
            n_gaps = 0
        n_out = new.size - n_in
        z = self._normals(n_in + n_gaps + n_out)

        if n_in:
            # free Brownian motion from the left anchor, then pinned to the right anchor
            steps = np.sqrt(u - prev) * z[:n_in]
            csum = np.cumsum(steps)
            starts = np.flatnonzero(first)
            base = csum[starts] - steps[starts]
            group = np.cumsum(first) - 1
            tl, vl = times[gaps], values[gaps]
            tr, vr = times[gaps + 1], values[gaps + 1]
            free = vl[group] + (csum - base[group])
            ends = np.r_[starts[1:], n_in] - 1
            free_end = free[ends] + np.sqrt(tr - u[ends]) * z[n_in:n_in + n_gaps]
            frac = (u - tl[group]) / (tr[group] - tl[group])
            new_vals[inner] = free - frac * (free_end - vr)[group]
        if n_out:
            u = new[~inner]
            dt = np.diff(np.r_[times[-1], u])
            new_vals[~inner] = values[-1] + np.cumsum(np.sqrt(dt) * z[n_in + n_gaps:])

        self.times = np.insert(times, pos, new)
        self.values = np.insert(values, pos, new_vals)


class EnvironmentSheet:
    """One realization of the environment, sampled on demand.

    Parameters
    ----------
    d : int
        Lattice dimension.
    master_seed : int
        Root of all per-site streams.

    Notes
    -----
    A sheet mutates on every query and must not be shared between
    concurrent workers. Parallel experiments use one sheet per replica.
    """

    def __init__(self, d, master_seed):
        d = int(d)
        if d < 1:
            raise DomainError("dimension must be >= 1")
        self.d = d
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.timelines = {}

    def __repr__(self):
        return (f"EnvironmentSheet(d={self.d}, master_seed={self.master_seed}, "
                f"sites={len(self.timelines)})")

    def _site_key(self, site):
        if np.ndim(site) == 0:
            site = (site,)
        key = tuple(int(c) for c in site)
        if len(key) != self.d:
            raise DomainError(f"site {key} does not have dimension {self.d}")
        return key

    def timeline(self, site):
        key = self._site_key(site)
        tl = self.timelines.get(key)
        if tl is None:
            tl = SiteTimeline(key, make_rng(self.master_seed, *key))
            self.timelines[key] = tl
        return tl

    def value_at(self, site, t):
        """W(t, site)."""
        t = float(t)
        if not t >= 0.0 or math.isinf(t):
            raise DomainError(f"time must be finite and >= 0, got {t}")
        return float(self.timeline(site).sample([t])[0])

    def increment(self, site, t1, t2):
        """W(t2, site) - W(t1, site); both endpoints are recorded."""
        t1, t2 = float(t1), float(t2)
        if t1 > t2:
            raise DomainError(f"increment needs t1 <= t2, got {t1} > {t2}")
        if not t1 >= 0.0:
            raise DomainError(f"time must be >= 0, got {t1}")
        v = self.timeline(site).sample([t1, t2])
        return float(v[1] - v[0])

    def query(self, sites, times):
        """Vectorized ``value_at`` for rows of ``sites`` (shape ``(m, d)``) and ``times``.

        Sites are processed in sorted order, each with a single batch.
        """
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        times = np.asarray(times, dtype=float).reshape(-1)
        if sites.shape[0] != times.size:
            raise ValueError("sites and times must have the same length")
        out = np.empty(times.size)
        if times.size == 0:
            return out
        lo = sites.min(axis=0)
        span = sites.max(axis=0) - lo + 1
        if float(np.prod(span.astype(float))) < 2.0 ** 62:
            # integer keys sort much faster than rows; lexicographic order is kept
            keys = np.ravel_multi_index((sites - lo).T, span)
            ukeys, inv = np.unique(keys, return_inverse=True)
            uniq = np.stack(np.unravel_index(ukeys, span), axis=1) + lo
        else:
            uniq, inv = np.unique(sites, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        for i, site in enumerate(uniq):
            idx = order[bounds[i]:bounds[i + 1]]
            out[idx] = self.timeline(tuple(site)).sample(times[idx])
        return out

    def n_points(self):
        return sum(len(tl) - 1 for tl in self.timelines.values())

    def snapshot(self):
        """Serialize recorded points and stream positions to a JSON string."""
        records = []
        for key in sorted(self.timelines):
            tl = self.timelines[key]
            records.append({
                "site": list(key),
                "ordinal": tl.ordinal,
                "times": tl.times[1:].tolist(),
                "values": tl.values[1:].tolist(),
            })
        return json.dumps({
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "d": self.d,
            "master_seed": self.master_seed,
            "timelines": records,
        })

    @classmethod
    def restore(cls, blob):
        """Rebuild a sheet from :meth:`snapshot` output."""
        try:
            doc = json.loads(blob)
        except (TypeError, ValueError) as exc:
            raise SnapshotError(f"snapshot is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise SnapshotError("snapshot root must be an object")
        if doc.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError(f"unknown snapshot format {doc.get('format')!r}")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {doc.get('version')!r}")
        try:
            sheet = cls(int(doc["d"]), int(doc["master_seed"]))
            records = doc["timelines"]
        except (KeyError, TypeError, ValueError, DomainError) as exc:
            raise SnapshotError(f"bad snapshot header: {exc}") from None
        if not isinstance(records, list):
            raise SnapshotError("'timelines' must be a list")
        for i, rec in enumerate(records):
            sheet._restore_timeline(i, rec)
        return sheet

    def _restore_timeline(self, i, rec):
        try:
            key = self._site_key(rec["site"])
            ordinal = int(rec["ordinal"])
            times = np.asarray(rec["times"], dtype=float)
            values = np.asarray(rec["values"], dtype=float)
        except (KeyError, TypeError, ValueError, DomainError) as exc:
            raise SnapshotError(f"timeline record {i}: {exc}") from None
        where = f"timeline record {i} (site {list(key)})"
        if key in self.timelines:
            raise SnapshotError(f"{where}: duplicate site")
        if times.ndim != 1 or times.shape != values.shape:
            raise SnapshotError(f"{where}: times and values must be equal-length lists")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise SnapshotError(f"{where}: non-finite entry")
        if times.size and (times[0] <= 0.0 or np.any(np.diff(times) <= 0.0)):
            raise SnapshotError(f"{where}: times must be positive and strictly increasing")
        if ordinal < times.size:
            raise SnapshotError(f"{where}: ordinal {ordinal} smaller than point count")
        tl = self.timeline(key)
        tl.times = np.r_[0.0, times]
        tl.values = np.r_[0.0, values]
        if ordinal:
            tl._normals(ordinal)
