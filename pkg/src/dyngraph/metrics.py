"""Local comparison of segmented-tree histories.

Two histories are isomorphic when a single root- and mark-preserving
bijection carries one onto the other at every time simultaneously, with
matching edge states.  Because the objects are ordered trees observed as
unordered ones, a sorted recursive encoding of (mark, edge-status profile)
is a complete invariant: the profile pins down each vertex across time, so
agreement of the multisets level by level already forces one bijection.

Codes come in two flavours.  The exact flavour keys on the full jump-time
list, the grid flavour only on states sampled every grid_step time units;
the latter is what the sampling-based distribution comparisons use, since
continuous jump times almost surely never collide across independent runs.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
import math

from .segtree import OPEN, OrderedSegmentedTree, SegTreeTrajectory, Word, truncate

__all__ = [
    "CanonicalCode",
    "canonical_code",
    "isomorphic",
    "local_distance",
    "TVEstimate",
    "tv_estimate",
]


@dataclass(frozen=True)
class CanonicalCode:
    key: bytes
    kind: str  # "tree" or "dagger"


def _restrict(traj: SegTreeTrajectory, radius: int | None,
              horizon: float | None) -> tuple[list, list, float]:
    """Truncated jump list on [0, horizon]; merges jumps made invisible."""
    end = traj.horizon if horizon is None else horizon
    if end > traj.horizon + 1e-12:
        raise ValueError("requested horizon exceeds the recorded one")
    times, states = [], []
    for t, s in zip(traj.jump_times, traj.states):
        if t > end:
            break
        if radius is not None:
            s = truncate(s, radius)
        if states and s == states[-1]:
            continue
        times.append(t)
        states.append(s)
    return times, states, end


def _status_profile(nodes_seq: list, word: Word) -> tuple:
    out = []
    for s in nodes_seq:
        if word not in s:
            out.append(0)
        elif word == () or s.edge_state(word) == OPEN:
            out.append(1)
        else:
            out.append(2)
    return tuple(out)


def _mark_key(mark) -> bytes:
    return repr(mark).encode()


def _tree_code(states_for_profile: list, final: OrderedSegmentedTree,
               word: Word) -> bytes:
    sig = bytes(_status_profile(states_for_profile, word))
    kids = sorted(_tree_code(states_for_profile, final, c)
                  for c in final.children(word))
    return (b"(" + _mark_key(final.mark(word)) + b"|" + sig
            + b"[" + b",".join(kids) + b"])")


def canonical_code(traj: SegTreeTrajectory, radius: int | None = None,
                   horizon: float | None = None,
                   grid_step: float | None = None) -> CanonicalCode:
    """Complete invariant of a history under time-indexed root isomorphism.

    With grid_step set, the invariant is of the history observed at grid
    times only (the right notion for comparing empirical distributions);
    without it, jump times enter the key exactly.
    """
    if grid_step is not None and grid_step <= 0:
        raise ValueError("grid_step must be positive")
    end = traj.horizon if horizon is None else horizon
    ct = traj.cemetery_time
    if ct is not None and ct <= end:
        if grid_step is None:
            tag = repr(ct).encode()
        else:
            tag = str(math.ceil(ct / grid_step - 1e-12)).encode()
        return CanonicalCode(b"dagger|" + tag, "dagger")

    times, states, end = _restrict(traj, radius, horizon)
    if grid_step is None:
        header = (b"exact|" + repr(end).encode() + b"|"
                  + b";".join(repr(t).encode() for t in times))
        profile_states = states
    else:
        n_pts = int(math.floor(end / grid_step + 1e-9)) + 1
        header = b"grid|" + str(n_pts).encode() + b"@" + repr(grid_step).encode()
        profile_states = []
        for j in range(n_pts):
            idx = bisect_right(times, j * grid_step) - 1
            profile_states.append(states[idx])
    final = states[-1]
    return CanonicalCode(header + _tree_code(profile_states, final, ()),
                         "tree")


# -- tolerance matching --------------------------------------------------------


def _match_nodes(a_states, b_states, fa: OrderedSegmentedTree,
                 fb: OrderedSegmentedTree, wa: Word, wb: Word,
                 mark_tol: float, memo: dict) -> bool:
    key = (wa, wb)
    if key in memo:
        return memo[key]
    ok = False
    ma, mb = fa.mark(wa), fb.mark(wb)
    if isinstance(ma, int) and isinstance(mb, int):
        marks_fit = (ma == mb) if mark_tol == 0.0 else abs(ma - mb) <= mark_tol
    else:
        marks_fit = abs(float(ma) - float(mb)) <= mark_tol
    if marks_fit and _status_profile(a_states, wa) == _status_profile(b_states, wb):
        ca = fa.children(wa)
        cb = fb.children(wb)
        if len(ca) == len(cb):
            ok = _bipartite_match(
                ca, cb,
                lambda u, v: _match_nodes(a_states, b_states, fa, fb,
                                          u, v, mark_tol, memo))
    memo[key] = ok
    return ok


def _bipartite_match(left, right, compat) -> bool:
    match_of = {}

    def try_assign(i, seen):
        for j in range(len(right)):
            if j in seen or not compat(left[i], right[j]):
                continue
            seen.add(j)
            if j not in match_of or try_assign(match_of[j], seen):
                match_of[j] = i
                return True
        return False

    for i in range(len(left)):
        if not try_assign(i, set()):
            return False
    return True


def isomorphic(a: SegTreeTrajectory, b: SegTreeTrajectory,
               radius: int | None = None, horizon: float | None = None,
               mark_tol: float = 0.0) -> bool:
    """Single time-independent bijection matching both histories.

    Jump times must agree exactly; marks agree up to mark_tol (zero means
    exact, and then a canonical-code comparison is used).
    """
    end_a = a.horizon if horizon is None else horizon
    end_b = b.horizon if horizon is None else horizon
    ca = a.cemetery_time is not None and a.cemetery_time <= end_a
    cb = b.cemetery_time is not None and b.cemetery_time <= end_b
    if ca or cb:
        return (ca and cb
                and abs(a.cemetery_time - b.cemetery_time) <= 1e-12)
    if mark_tol == 0.0:
        return (canonical_code(a, radius, horizon)
                == canonical_code(b, radius, horizon))
    ta, sa, _ = _restrict(a, radius, horizon)
    tb, sb, _ = _restrict(b, radius, horizon)
    if len(ta) != len(tb):
        return False
    if any(abs(x - y) > 1e-12 for x, y in zip(ta, tb)):
        return False
    return _match_nodes(sa, sb, sa[-1], sb[-1], (), (), mark_tol, {})


def local_distance(a: SegTreeTrajectory, b: SegTreeTrajectory,
                   terms: int | None = None,
                   marked: bool = False) -> tuple[float, float]:
    """Weighted sum sum_k 2^{-k} D_k of radius agreements up to time k.

    D_k is 1/(1 + sup{d >= 1: radius-d histories isomorphic on [0, k]}),
    with D_k = 1 when even radius 1 disagrees and D_k = 0 when the full
    histories agree.  Returns (partial sum, tail bound 2^{-terms}); terms
    defaults to the largest integer time both histories cover.
    """
    k_cap = int(math.floor(min(a.horizon, b.horizon) + 1e-12))
    if terms is None:
        terms = k_cap
    if terms > k_cap:
        raise ValueError("terms exceed the common horizon")
    for traj in (a, b):
        if traj.cemetery_time is not None and traj.cemetery_time <= terms:
            raise ValueError("history ends in the cemetery inside the window")
    ha = a.final_state().height() if a.states else 0
    hb = b.final_state().height() if b.states else 0
    d_star = max(ha, hb) + 1

    def agree(d, k):
        tol = (1.0 / d) if marked else 0.0
        return isomorphic(a, b, radius=d, horizon=float(k), mark_tol=tol)

    total = 0.0
    for k in range(terms + 1):
        best = 0
        for d in range(1, d_star + 1):
            if agree(d, k):
                best = d
            else:
                break
        if best >= d_star:
            dk = 0.0
        else:
            dk = 1.0 / (1 + best)
        total += 2.0 ** (-k) * dk
    return total, 2.0 ** (-terms)


# -- total variation between empirical code distributions ----------------------


@dataclass(frozen=True)
class TVEstimate:
    """Plug-in total variation distance between two empirical laws.

    sampling_se is the delta-method standard error of the statistic around
    its mean; null_floor is the size the statistic takes on average when
    both samples share one law (finite-sample bias, not noise).  stderr
    combines the two and is the right scale for judging closeness to zero;
    for differences of estimates across settings the bias largely cancels
    and sampling_se alone applies.
    """

    tv: float
    sampling_se: float
    null_floor: float
    stderr: float
    n_a: int
    n_b: int


def tv_estimate(codes_a, codes_b) -> TVEstimate:
    ca, cb = Counter(codes_a), Counter(codes_b)
    n_a, n_b = sum(ca.values()), sum(cb.values())
    if n_a == 0 or n_b == 0:
        raise ValueError("both samples must be nonempty")
    cells = set(ca) | set(cb)
    tv = 0.0
    mass_a = mass_b = 0.0   # mass of cells where the laws differ, per side
    drift_a = drift_b = 0.0  # signed means of the influence function
    floor = 0.0
    for c in cells:
        pa, pb = ca[c] / n_a, cb[c] / n_b
        tv += abs(pa - pb)
        if pa != pb:
            s = 1.0 if pa > pb else -1.0
            mass_a += pa
            mass_b += pb
            drift_a += s * pa
            drift_b += s * pb
        pooled = (ca[c] + cb[c]) / (n_a + n_b)
        var0 = pooled * (1 - pooled) * (1 / n_a + 1 / n_b)
        floor += 0.5 * math.sqrt(2 * var0 / math.pi)
    tv *= 0.5
    var = 0.25 * ((mass_a - drift_a ** 2) / n_a + (mass_b - drift_b ** 2) / n_b)
    se = math.sqrt(max(var, 0.0))
    return TVEstimate(tv, se, floor, math.sqrt(se * se + floor * floor),
                      n_a, n_b)
