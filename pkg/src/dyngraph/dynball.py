"""Space-time paths, dynamical balls, and their segmented-tree histories.

A space-time path from the root to v at time t is a vertex path together
with nondecreasing crossing times s_1 <= ... <= s_k <= t, each edge open
at its crossing time.  The directed distance of v at time t is the least
number of hops over such paths; it is nonincreasing in t.

The history of the radius-d ball is replayed from the trace: the ball can
only grow, edges inside it segment when they close, and the whole history
is a growth-and-segmentation tree unless a cycle (or a reopened edge)
appears inside the ball, at which point the extraction is sent to a
cemetery state and the recorded trajectory ends.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import heapq
import math

from .dirg import DynGraphTrace, _open_at, _pair, earliest_open
from .segtree import OPEN, SEGMENTED, OrderedSegmentedTree, SegTreeTrajectory

__all__ = [
    "spacetime_distances",
    "spacetime_distance",
    "extract_ball",
    "extract_component",
    "BallExtraction",
]


def spacetime_distances(trace: DynGraphTrace, root: int, t: float,
                        k_max: int | None = None) -> dict:
    """Directed distances from the root at time t for every reached vertex.

    Iterates the earliest-arrival recurrence over hop counts: taking more
    hops can lower the arrival time at an intermediate vertex and thereby
    open up later edges, so a single breadth-first sweep is not enough.
    """
    if not (0.0 <= t <= trace.horizon):
        raise ValueError("query time outside the trace window")
    cap = trace.n if k_max is None else k_max
    arrive = {root: 0.0}
    dist = {root: 0}
    for k in range(1, cap + 1):
        updates = {}
        for u, a_u in arrive.items():
            for (w, ivs) in trace.incident(u):
                s = earliest_open(ivs, a_u, t)
                if s is None:
                    continue
                best = updates.get(w, arrive.get(w, math.inf))
                if s < best:
                    updates[w] = s
        changed = False
        for w, s in updates.items():
            if s < arrive.get(w, math.inf):
                arrive[w] = s
                changed = True
            if w not in dist:
                dist[w] = k
        if not changed:
            break
    return dist


def spacetime_distance(trace: DynGraphTrace, root: int, v: int,
                       t: float) -> float:
    dist = spacetime_distances(trace, root, t)
    return dist.get(v, math.inf)


def extract_component(trace: DynGraphTrace, root: int,
                      t: float) -> dict:
    """Vertices reachable by a space-time path by time t, with first-reach
    times.  Arrival time is monotone along paths, so a Dijkstra sweep on
    earliest arrival is exact."""
    if not (0.0 <= t <= trace.horizon):
        raise ValueError("query time outside the trace window")
    reach = {}
    heap = [(0.0, root)]
    while heap:
        a, u = heapq.heappop(heap)
        if u in reach:
            continue
        reach[u] = a
        for (w, ivs) in trace.incident(u):
            if w in reach:
                continue
            s = earliest_open(ivs, a, t)
            if s is not None:
                heapq.heappush(heap, (s, w))
    return reach


@dataclass
class BallExtraction:
    """Segmented-tree history of one dynamical ball."""

    root: int
    radius: int
    trajectory: SegTreeTrajectory
    vertex_map: dict  # word -> vertex id
    tree_failure_time: float | None

    @property
    def failed(self) -> bool:
        return self.tree_failure_time is not None


class _Fail(Exception):
    def __init__(self, time):
        self.time = time


def extract_ball(trace: DynGraphTrace, root: int, radius: int,
                 horizon: float | None = None) -> BallExtraction:
    """Replay the trace and record the radius-d ball history of one root.

    The ball starts as the breadth-first tree at time 0 and grows when an
    edge opens from an interior vertex (depth < d) to an unseen vertex.
    Any other edge opening that touches two ball vertices creates a cycle
    or reopens a segmented edge, and any open edge found between two ball
    vertices during a reveal does the same: the history stops being a
    segmented tree and the extraction is declared failed at that instant.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    T = trace.horizon if horizon is None else horizon
    if T > trace.horizon:
        raise ValueError("horizon exceeds the trace window")

    marks = trace.marks
    nodes: dict = {}          # word -> (mark, state)
    child_counts: dict = {}
    word_of: dict = {}        # vertex -> word
    vertex_map: dict = {}     # word -> vertex

    heap: list = []
    seq = 0

    def queue_pair_events(v: int, other: int, ivs, now: float):
        nonlocal seq
        for (s, e) in ivs:
            if s > now:
                heapq.heappush(heap, (s, seq, 1, v, other))
                seq += 1
            if now < e < T:
                heapq.heappush(heap, (e, seq, -1, v, other))
                seq += 1

    def join(vertex: int, word, time: float):
        word_of[vertex] = word
        vertex_map[word] = vertex
        nodes[word] = (int(marks[vertex]), OPEN if word else None)
        child_counts[word] = 0
        for (other, ivs) in trace.incident(vertex):
            if other not in word_of:
                queue_pair_events(vertex, other, ivs, time)

    def explore(start: int, time: float):
        # start has just joined; reveal its open surroundings breadth-first
        bfs = deque([start])
        while bfs:
            u = bfs.popleft()
            wu = word_of[u]
            parent_vertex = vertex_map[wu[:-1]] if wu else None
            fresh = []
            for (other, ivs) in trace.incident(u):
                if other == parent_vertex or not _open_at(ivs, time):
                    continue
                if other in word_of:
                    raise _Fail(time)
                if len(wu) < radius:
                    fresh.append(other)
            fresh.sort(key=lambda o: (int(marks[o]), o))
            for other in fresh:
                child_counts[wu] += 1
                join(other, wu + (child_counts[wu],), time)
                bfs.append(other)

    times = [0.0]
    states = []
    failure: float | None = None

    def snapshot():
        states.append(OrderedSegmentedTree(dict(nodes)))

    try:
        join(root, (), 0.0)
        explore(root, 0.0)
        snapshot()
        while heap:
            t = heap[0][0]
            if t >= T:
                break
            # A vertex update rewrites a whole row, so several pair events
            # can share one timestamp; they are one jump of the ball state,
            # with the segmentations applied before the fresh edges.
            batch = []
            while heap and heap[0][0] == t:
                _, _, kind, a, b = heapq.heappop(heap)
                batch.append((kind, a, b))
            batch.sort(key=lambda ev: ev[0])
            changed = False
            for kind, a, b in batch:
                a_in, b_in = a in word_of, b in word_of
                if kind == -1:
                    if not (a_in and b_in):
                        continue
                    wa, wb = word_of[a], word_of[b]
                    child = wb if wb[:-1] == wa else wa
                    if child[:-1] not in (wa, wb) or nodes[child][1] != OPEN:
                        raise RuntimeError("close event off the ball tree")
                    nodes[child] = (nodes[child][0], SEGMENTED)
                    changed = True
                else:
                    if a_in and b_in:
                        raise _Fail(t)
                    if not (a_in or b_in):
                        continue
                    inner = a if a_in else b
                    outer = b if a_in else a
                    wi = word_of[inner]
                    if len(wi) >= radius:
                        continue
                    child_counts[wi] += 1
                    join(outer, wi + (child_counts[wi],), t)
                    explore(outer, t)
                    changed = True
            if changed:
                times.append(t)
                snapshot()
    except _Fail as f:
        failure = f.time
        if failure == 0.0:
            times, states = [], []
        else:
            times = times[:len(states)]

    window = T if failure is None else min(T, failure)
    traj = SegTreeTrajectory(
        jump_times=times if states else [],
        states=states,
        horizon=window,
        depth_cap=radius,
        cemetery_time=failure,
    )
    return BallExtraction(root, radius, traj, vertex_map, failure)
