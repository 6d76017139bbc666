"""Finite dynamical inhomogeneous random graphs.

A graph on n marked vertices starts from independent edges, pair u, v open
with probability p_uv = min(kappa(x_u, x_v)/n, 1).  Under edge updating,
each pair refreshes at rate beta(x_u, x_v): a closed pair opens at rate
beta*p and an open one closes at rate beta*(1-p), which keeps the initial
law stationary.  Under vertex updating, each vertex fires at rate
beta(x_u) and resamples all its incident pairs at once.

Traces store, per pair that was ever open, the list of half-open open
intervals [start, end).  The event-level simulation aggregates the opening
clocks of all closed pairs of a type class into one exponential clock,
which keeps the cost near the number of edges that ever appear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import heapq
import math

import numpy as np

from .kernels import Kernel, UnaryKernel, connection_prob
from .vertexspace import VertexSpaceRealization

__all__ = [
    "DynGraphTrace",
    "sample_initial_graph",
    "simulate_edge_updating",
    "simulate_vertex_updating",
    "pairwise_coupling_bound",
]

_DENSE_PAIR_CAP = 2_000_000


class SimulationSizeError(RuntimeError):
    """Raised when a dense regime would materialize too many pairs."""


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass
class DynGraphTrace:
    """Open-interval record of one dynamical graph run on [0, horizon)."""

    n: int
    marks: np.ndarray
    horizon: float
    timelines: dict  # (u, v) u < v -> [(start, end), ...] sorted

    _incident: dict | None = field(default=None, repr=False)
    _events: list | None = field(default=None, repr=False)

    def is_open(self, u: int, v: int, t: float) -> bool:
        ivs = self.timelines.get(_pair(u, v))
        if not ivs:
            return False
        return _open_at(ivs, t)

    def incident(self, v: int) -> list:
        """List of (other vertex, intervals) for pairs ever open at v."""
        if self._incident is None:
            idx: dict = {}
            for (a, b), ivs in self.timelines.items():
                idx.setdefault(a, []).append((b, ivs))
                idx.setdefault(b, []).append((a, ivs))
            self._incident = idx
        return self._incident.get(v, [])

    def open_neighbors(self, v: int, t: float) -> list[int]:
        return [o for o, ivs in self.incident(v) if _open_at(ivs, t)]

    def events(self) -> list:
        """All interior events as (time, u, v, kind), kind +1 open, -1 close."""
        if self._events is None:
            ev = []
            for (u, v), ivs in self.timelines.items():
                for (s, e) in ivs:
                    if s > 0.0:
                        ev.append((s, u, v, 1))
                    if e < self.horizon:
                        ev.append((e, u, v, -1))
            ev.sort()
            self._events = ev
        return self._events

    def pair_events(self, u: int, v: int, after: float) -> list:
        """Events of one pair strictly after a given time."""
        out = []
        for (s, e) in self.timelines.get(_pair(u, v), ()):
            if s > after:
                out.append((s, 1))
            if after < e < self.horizon:
                out.append((e, -1))
        return out

    def edges_at(self, t: float) -> list:
        return [pr for pr, ivs in self.timelines.items() if _open_at(ivs, t)]


def _open_at(ivs, t: float) -> bool:
    for (s, e) in ivs:
        if s <= t < e:
            return True
        if s > t:
            break
    return False


def earliest_open(ivs, t0: float, t1: float) -> float | None:
    """First time in [t0, t1] at which the intervals cover, else None."""
    for (s, e) in ivs:
        if e <= t0:
            continue
        cand = max(s, t0)
        if cand <= t1 and cand < e:
            return cand
        if s > t1:
            break
    return None


# -- type-class machinery ------------------------------------------------------


class _PairClasses:
    """Unordered pair classes (a <= b) over finite types."""

    def __init__(self, vs: VertexSpaceRealization, kappa: Kernel):
        if vs.mark_space.kind != "finite":
            raise ValueError("finite-type marks required")
        self.vs = vs
        self.r = vs.mark_space.r
        self.ids = [vs.type_ids(a) for a in range(self.r)]
        self.classes = []
        for a in range(self.r):
            for b in range(a, self.r):
                na, nb = len(self.ids[a]), len(self.ids[b])
                m = na * (na - 1) // 2 if a == b else na * nb
                if m > 0:
                    self.classes.append(
                        (a, b, m, connection_prob(kappa, a, b, vs.n)))

    def random_pair(self, a: int, b: int, rng) -> tuple[int, int]:
        if a == b:
            ida = self.ids[a]
            i = int(rng.integers(len(ida)))
            j = int(rng.integers(len(ida) - 1))
            if j >= i:
                j += 1
            return _pair(int(ida[i]), int(ida[j]))
        u = int(self.ids[a][rng.integers(len(self.ids[a]))])
        v = int(self.ids[b][rng.integers(len(self.ids[b]))])
        return _pair(u, v)

    def all_pairs(self, a: int, b: int):
        if a == b:
            ida = self.ids[a]
            for i in range(len(ida)):
                for j in range(i + 1, len(ida)):
                    yield _pair(int(ida[i]), int(ida[j]))
        else:
            for u in self.ids[a]:
                for v in self.ids[b]:
                    yield _pair(int(u), int(v))


def sample_initial_graph(vs: VertexSpaceRealization, kappa: Kernel,
                         rng: np.random.Generator) -> set:
    """Independent-edge initial state; returns the set of open pairs."""
    pc = _PairClasses(vs, kappa)
    open_pairs: set = set()
    for (a, b, m, p) in pc.classes:
        if p <= 0.0:
            continue
        if p > 0.25 or m <= 2048:
            # dense or tiny class: walk the pairs one by one
            if m > _DENSE_PAIR_CAP:
                raise SimulationSizeError(
                    f"class ({a},{b}) too dense to materialize: {m} pairs")
            for pr in pc.all_pairs(a, b):
                if rng.random() < p:
                    open_pairs.add(pr)
        else:
            count = int(rng.binomial(m, p))
            chosen: set = set()
            while len(chosen) < count:
                pr = pc.random_pair(a, b, rng)
                if pr not in chosen:
                    chosen.add(pr)
            open_pairs |= chosen
    return open_pairs


def simulate_edge_updating(vs: VertexSpaceRealization, kappa: Kernel,
                           beta: Kernel, horizon: float,
                           rng: np.random.Generator) -> DynGraphTrace:
    """Edge-refresh dynamics started from the stationary initial graph."""
    if isinstance(beta, UnaryKernel):
        raise TypeError("edge updating needs a binary beta kernel")
    pc = _PairClasses(vs, kappa)
    n = vs.n

    open_since: dict = {}
    timelines: dict = {}
    cls_open = {}

    def close_rate(a, b, p):
        return beta(a, b) * (1.0 - p)

    heap: list = []
    seq = 0
    version = {}

    def push(t, payload):
        nonlocal seq
        heapq.heappush(heap, (t, seq, payload))
        seq += 1

    def arm_class(idx, now):
        a, b, m, p = pc.classes[idx]
        closed = m - cls_open[idx]
        rate = closed * beta(a, b) * p
        version[idx] = version.get(idx, 0) + 1
        if rate > 0:
            push(now + rng.exponential(1.0 / rate), ("open", idx, version[idx]))

    def record_close(pr, t):
        timelines.setdefault(pr, []).append((open_since.pop(pr), t))

    for pr in sample_initial_graph(vs, kappa, rng):
        open_since[pr] = 0.0

    cls_index = {}
    for idx, (a, b, m, p) in enumerate(pc.classes):
        cls_index[(a, b)] = idx
        cls_open[idx] = 0
    for pr in open_since:
        a, b = sorted((int(vs.marks[pr[0]]), int(vs.marks[pr[1]])))
        cls_open[cls_index[(a, b)]] += 1

    for idx in range(len(pc.classes)):
        arm_class(idx, 0.0)
    for pr in list(open_since):
        a, b = sorted((int(vs.marks[pr[0]]), int(vs.marks[pr[1]])))
        _, _, _, p = pc.classes[cls_index[(a, b)]]
        cr = close_rate(a, b, p)
        if cr > 0:
            t = rng.exponential(1.0 / cr)
            if t < horizon:
                push(t, ("close", pr))

    while heap:
        t, _, payload = heapq.heappop(heap)
        if t >= horizon:
            break
        if payload[0] == "open":
            _, idx, ver = payload
            if version.get(idx) != ver:
                continue
            a, b, m, p = pc.classes[idx]
            while True:
                pr = pc.random_pair(a, b, rng)
                if pr not in open_since:
                    break
            open_since[pr] = t
            cls_open[idx] += 1
            arm_class(idx, t)
            cr = close_rate(a, b, p)
            if cr > 0:
                tc = t + rng.exponential(1.0 / cr)
                if tc < horizon:
                    push(tc, ("close", pr))
        else:
            _, pr = payload
            a, b = sorted((int(vs.marks[pr[0]]), int(vs.marks[pr[1]])))
            idx = cls_index[(a, b)]
            record_close(pr, t)
            cls_open[idx] -= 1
            arm_class(idx, t)

    for pr in list(open_since):
        timelines.setdefault(pr, []).append((open_since.pop(pr), horizon))
    for ivs in timelines.values():
        ivs.sort()
    return DynGraphTrace(n, vs.marks, horizon, timelines)


def simulate_vertex_updating(vs: VertexSpaceRealization, kappa: Kernel,
                             beta: UnaryKernel, horizon: float,
                             rng: np.random.Generator) -> DynGraphTrace:
    """Vertex-refresh dynamics: a firing vertex resamples its whole row."""
    if not isinstance(beta, UnaryKernel):
        raise TypeError("vertex updating needs a one-argument beta")
    n = vs.n
    marks = vs.marks
    r = vs.mark_space.r
    ids = [vs.type_ids(a) for a in range(r)]
    p = np.array([[connection_prob(kappa, a, b, n) for b in range(r)]
                  for a in range(r)])
    rates = np.array([beta(a) for a in range(r)])

    open_since: dict = {}
    adj: dict = {v: set() for v in range(n)}
    timelines: dict = {}

    for pr in sample_initial_graph(vs, kappa, rng):
        open_since[pr] = 0.0
        adj[pr[0]].add(pr[1])
        adj[pr[1]].add(pr[0])

    heap = []
    seq = 0
    for v in range(n):
        rate = rates[int(marks[v])]
        if rate > 0:
            heapq.heappush(heap, (rng.exponential(1.0 / rate), seq, v))
            seq += 1

    def sample_fresh_neighbors(u):
        xu = int(marks[u])
        out = set()
        for y in range(r):
            ny = len(ids[y])
            avail = ny - 1 if y == xu else ny
            if avail <= 0 or p[xu, y] <= 0:
                continue
            c = int(rng.binomial(avail, p[xu, y]))
            if c == 0:
                continue
            if c > avail // 2:
                # dense draw: choose without replacement directly
                pool = [int(w) for w in ids[y] if w != u]
                out.update(int(w) for w in
                           rng.choice(pool, size=c, replace=False))
                continue
            got = set()
            while len(got) < c:
                w = int(ids[y][rng.integers(ny)])
                if w != u and w not in got:
                    got.add(w)
            out |= got
        return out

    while heap:
        t, _, u = heapq.heappop(heap)
        if t >= horizon:
            break
        fresh = sample_fresh_neighbors(u)
        old = adj[u]
        for w in old - fresh:
            pr = _pair(u, w)
            timelines.setdefault(pr, []).append((open_since.pop(pr), t))
            adj[w].discard(u)
        for w in fresh - old:
            pr = _pair(u, w)
            open_since[pr] = t
            adj[w].add(u)
        adj[u] = fresh
        rate = rates[int(marks[u])]
        heapq.heappush(heap, (t + rng.exponential(1.0 / rate), seq, u))
        seq += 1

    for pr in list(open_since):
        timelines.setdefault(pr, []).append((open_since.pop(pr), horizon))
    for ivs in timelines.values():
        ivs.sort()
    return DynGraphTrace(n, marks, horizon, timelines)


def pairwise_coupling_bound(p: float, p_sub: float, beta: float,
                            beta_sub: float, horizon: float) -> float:
    """Lower bound on two nested edge chains agreeing throughout [0, T].

    Requires p_sub <= p and beta_sub <= beta; the chains share update times
    and uniforms, so they disagree only through the initial draw or an
    update uniform falling in the probability gap.
    """
    for val, name in ((p, "p"), (p_sub, "p_sub")):
        if not (0.0 <= val <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1]")
    if beta < 0 or beta_sub < 0 or horizon < 0:
        raise ValueError("rates and horizon must be nonnegative")
    if p_sub > p or beta_sub > beta:
        raise ValueError("sub-kernel must be dominated: p_sub <= p, beta_sub <= beta")
    val = 1.0 - (p - p_sub) - (beta * p - beta_sub * p_sub) * horizon
    return min(1.0, max(0.0, val))
