"""Couplings between finite dynamical balls and their limit tree processes.

The joint construction runs the radius-d ball of k uniform roots and the
k-tuple of limit trees on shared randomness.  Root types use a maximal
coupling of the empirical and limit mark laws, offspring use a maximal
coupling of binomial and Poisson counts, and the event clocks split into a
shared part at the minimum of the two rates plus residual parts that only
one side can ring.  The first divergence is recorded with its cause; both
sides then continue independently under their own exact laws, so each
marginal is exact whether or not the coupling survives.

Ball-side bookkeeping follows the sequential exploration of the graph:
R_y counts type-y vertices ever revealed, U_y those revealed whose
neighborhoods are still unexamined (boundary vertices stay there for
good).  A newly revealed vertex is wired to the rest of the ball by
independent stale Bernoullis against the U-set, hence the zero-checks, and
its fresh children are a binomial over the n_y - R_y unseen vertices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import math

import numpy as np

from .kernels import Kernel, UnaryKernel, connection_prob
from .segtree import OPEN, SEGMENTED, OrderedSegmentedTree, SegTreeTrajectory, Word
from .vertexspace import VertexSpaceRealization

__all__ = [
    "couple_markov",
    "MarkovCouplingResult",
    "binomial_poisson_tv",
    "maximal_binpoi_coupling",
    "exploration_law_prob",
    "FailureBound",
    "failure_bound",
    "dynperc_bound",
    "CoupleReport",
    "CoupleResult",
    "couple_ball_with_tree",
]


# -- generic two-chain coupling -------------------------------------------------


@dataclass
class MarkovCouplingResult:
    path_a: list  # [(time, state), ...] starting at (0, start)
    path_b: list
    decouple_time: float | None


def _sim_chain(rates, state, t0: float, horizon: float, rng, path):
    t = t0
    while True:
        rd = dict(rates(state))
        total = sum(rd.values())
        if total <= 0:
            return
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            return
        u = rng.random() * total
        acc = 0.0
        for f, rate in rd.items():
            acc += rate
            if u < acc:
                state = f
                break
        path.append((t, state))


def couple_markov(rates_a, rates_b, start, horizon: float,
                  rng: np.random.Generator) -> MarkovCouplingResult:
    """Run two jump chains from one state on shared minimum-rate clocks.

    While the chains agree, each possible jump carries a shared clock at
    the smaller of the two rates plus one residual clock per side; a
    residual ring is the first point of divergence, after which the chains
    run independently.  Both marginals are exact throughout.
    """
    path_a = [(0.0, start)]
    path_b = [(0.0, start)]
    state = start
    t = 0.0
    decouple: float | None = None
    while True:
        ra, rb = dict(rates_a(state)), dict(rates_b(state))
        targets = sorted(set(ra) | set(rb), key=repr)
        shared = [(f, min(ra.get(f, 0.0), rb.get(f, 0.0))) for f in targets]
        res_a = [(f, ra.get(f, 0.0) - s) for (f, s) in shared]
        res_b = [(f, rb.get(f, 0.0) - s) for (f, s) in shared]
        total = sum(s for _, s in shared) + sum(s for _, s in res_a) \
            + sum(s for _, s in res_b)
        if total <= 0:
            return MarkovCouplingResult(path_a, path_b, None)
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            return MarkovCouplingResult(path_a, path_b, None)
        u = rng.random() * total
        acc = 0.0
        hit = None
        for kind, items in (("sh", shared), ("a", res_a), ("b", res_b)):
            for f, rate in items:
                acc += rate
                if u < acc:
                    hit = (kind, f)
                    break
            if hit:
                break
        kind, f = hit
        if kind == "sh":
            state = f
            path_a.append((t, state))
            path_b.append((t, state))
            continue
        decouple = t
        if kind == "a":
            path_a.append((t, f))
            _sim_chain(rates_a, f, t, horizon, rng, path_a)
            _sim_chain(rates_b, state, t, horizon, rng, path_b)
        else:
            path_b.append((t, f))
            _sim_chain(rates_a, state, t, horizon, rng, path_a)
            _sim_chain(rates_b, f, t, horizon, rng, path_b)
        return MarkovCouplingResult(path_a, path_b, decouple)


# -- binomial/Poisson maximal coupling ------------------------------------------

_BINPOI_CACHE: dict = {}


def _binpoi_tables(n: int, p: float, lam: float):
    key = (n, p, lam)
    hit = _BINPOI_CACHE.get(key)
    if hit is not None:
        return hit
    if n < 0 or not (0.0 <= p <= 1.0) or lam < 0.0:
        raise ValueError("need n >= 0, p in [0, 1], lam >= 0")
    mean = max(n * p, lam)
    cut = int(mean + 12.0 * math.sqrt(mean) + 40)
    if p > 0.5:
        cut = max(cut, n + 1)
    fb = [0.0] * (cut + 1)
    fp = [0.0] * (cut + 1)
    if p == 1.0:
        if n <= cut:
            fb[n] = 1.0
    else:
        fb[0] = (1.0 - p) ** n
        ratio = p / (1.0 - p)
        for i in range(min(n, cut)):
            fb[i + 1] = fb[i] * (n - i) / (i + 1) * ratio
    fp[0] = math.exp(-lam)
    for i in range(cut):
        fp[i + 1] = fp[i] * lam / (i + 1)
    tv = sum(max(b - q, 0.0) for b, q in zip(fb, fp))
    tables = (fb, fp, tv)
    _BINPOI_CACHE[key] = tables
    return tables


def binomial_poisson_tv(n: int, p: float, lam: float) -> float:
    """Total variation distance between Bin(n, p) and Poi(lam)."""
    return _binpoi_tables(n, p, lam)[2]


def _inverse_cdf(pmf, u: float) -> int:
    acc = 0.0
    last = 0
    for i, f in enumerate(pmf):
        if f <= 0.0:
            continue
        acc += f
        last = i
        if u < acc:
            return i
    return last


def maximal_binpoi_coupling(n: int, p: float, lam: float,
                            rng: np.random.Generator) -> tuple[int, int, bool]:
    """One draw (B, Q) with B ~ Bin(n, p), Q ~ Poi(lam), P(B = Q) maximal.

    With probability 1 - TV both values come from the overlap min(f, g);
    otherwise each side is drawn from its normalized excess, and the two
    values are then necessarily different.
    """
    fb, fp, tv = _binpoi_tables(n, p, lam)
    u = rng.random()
    if u >= 1.0 - tv and tv > 0.0:
        v = u - (1.0 - tv)
        b = _inverse_cdf([max(x - y, 0.0) for x, y in zip(fb, fp)], v)
        w = rng.random() * tv
        q = _inverse_cdf([max(y - x, 0.0) for x, y in zip(fb, fp)], w)
        return b, q, False
    i = _inverse_cdf([min(x, y) for x, y in zip(fb, fp)], u)
    return i, i, True


# -- exploration law ------------------------------------------------------------


def _binom_pmf(m: int, p: float, c: int) -> float:
    if c < 0 or c > m:
        return 0.0
    return math.comb(m, c) * (p ** c) * ((1.0 - p) ** (m - c))


def exploration_law_prob(state, at: Word, graft: OrderedSegmentedTree,
                         radius: int, type_counts, kappa: Kernel,
                         n: int, l: int = 0) -> float:
    """Probability that a growth event at `at` reveals exactly `graft`.

    state is one segmented tree or the k-tuple of trees explored jointly
    (the revealed/unexamined pools are shared); at is a word of tree l.
    Conditional on an edge opening from `at` to a fresh vertex of the
    graft root's type, the revealed subtree follows the sequential
    exploration law: each revealed vertex is zero-checked once against
    the vertices revealed before it that are still unexamined, and,
    while interior, draws binomial children from the unseen pool.  The
    returned mass is the tree part; the remainder of the law sits on
    the cemetery.
    """
    trees = [state] if isinstance(state, OrderedSegmentedTree) else list(state)
    if not 0 <= l < len(trees):
        raise ValueError("l must index a tree of the state")
    if at not in trees[l]:
        raise ValueError("at must be a word of tree l")
    if len(at) > radius - 1:
        raise ValueError("growth must happen at an interior vertex")
    counts = [int(c) for c in type_counts]
    r = len(counts)
    p = [[connection_prob(kappa, a, b, n) for b in range(r)] for a in range(r)]

    R = [0] * r
    U = [0] * r
    for tree in trees:
        for w in tree.words():
            y = tree.mark(w)
            R[y] += 1
            if len(w) == radius:
                U[y] += 1
    if any(R[y] > counts[y] for y in range(r)):
        raise ValueError("state reveals more vertices than the counts hold")

    def reveal(x: int) -> None:
        nonlocal prob
        for y in range(r):
            if U[y] > 0:
                prob *= (1.0 - p[x][y]) ** U[y]
        R[x] += 1
        U[x] += 1

    prob = 1.0
    reveal(graft.mark(()))
    queue = deque([()])
    while queue:
        w = queue.popleft()
        x = graft.mark(w)
        depth = len(at) + 1 + len(w)
        kids = graft.children(w)
        if depth <= radius - 1:
            U[x] -= 1
            by_type = [0] * r
            for kw in kids:
                by_type[graft.mark(kw)] += 1
            for y in range(r):
                prob *= _binom_pmf(counts[y] - R[y], p[x][y], by_type[y])
            for kw in kids:
                reveal(graft.mark(kw))
            queue.extend(kids)
        elif kids:
            raise ValueError("graft reaches below the ball radius")
    return prob


# -- quantitative failure bounds ------------------------------------------------


@dataclass(frozen=True)
class FailureBound:
    lam: float               # per-level growth scale
    mean_bound: float        # bound on the expected revealed size
    second_moment_bound: float
    explicit: float          # failure probability bound, clamped to [0, 1]
    simplified: float        # looser closed form with one displayed constant
    constant: float

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "ez_bound": self.mean_bound,
            "ez2_bound": self.second_moment_bound,
            "bound_explicit": self.explicit,
            "bound_simplified": self.simplified,
            "constant": self.constant,
        }


def _max_growth_scale(kappa: Kernel, beta, horizon: float) -> float:
    r = kappa.r
    best = 0.0
    for x in range(r):
        for y in range(r):
            b = beta(x) + beta(y) if isinstance(beta, UnaryKernel) else beta(x, y)
            best = max(best, kappa(x, y) * (1.0 + b * horizon))
    return best


def failure_bound(n: int, horizon: float, radius: int, k: int,
                  kappa: Kernel, beta, discrepancy: float = 0.0) -> FailureBound:
    """Quantitative bound on the ball/tree coupling failing by the horizon.

    The revealed size Z of the k-tuple ball satisfies E[Z] <= 2k lam^d and
    E[Z^2] <= 16 k^2 lam^{2d} with lam = max(2, 1 + max kappa (1 + beta t));
    every unit of revealed mass can break the coupling at rate O(kappa/n)
    worth of collisions plus the mark discrepancy, which gives the bound.
    Under vertex updating a pair refreshes when either endpoint fires, so
    the effective pair rate is beta(x) + beta(y).
    """
    if n <= 0 or radius < 0 or k <= 0 or horizon < 0:
        raise ValueError("need n, k >= 1, radius, horizon >= 0")
    r = kappa.r
    mkb = _max_growth_scale(kappa, beta, horizon)
    lam = max(2.0, 1.0 + mkb)
    ez = 2.0 * k * lam ** radius
    ez2 = 16.0 * k * k * lam ** (2 * radius)
    raw = (1.0 + mkb) * ((2.0 * ez2 + r * ez) / n + ez * discrepancy)
    const = 32.0 * k * k + 2.0 * k * r
    simple = const * lam ** (2 * radius + 1) / n \
        + 2.0 * k * lam ** (radius + 1) * discrepancy
    return FailureBound(lam, ez, ez2, min(1.0, raw), min(1.0, simple), const)


def dynperc_bound(n: int, horizon: float, radius: int, kappa: float) -> float:
    """Single-type display bound 34 (1 + kappa + kappa t)^{2d+1} / n."""
    if kappa < 0 or horizon < 0 or radius < 0 or n <= 0:
        raise ValueError("nonnegative parameters required")
    return min(1.0, 34.0 * (1.0 + kappa + kappa * horizon) ** (2 * radius + 1) / n)


# -- the joint ball/tree construction -------------------------------------------


@dataclass
class CoupleReport:
    success: bool
    decouple_time: float | None
    failure_cause: str | None   # root_mismatch, offspring_mismatch,
    #                             collision_or_cycle, rate_discrepancy_event
    ball_failure_time: float | None
    bound: float | None = None  # theoretical failure bound for this run


@dataclass
class CoupleResult:
    ball: list    # k SegTreeTrajectory, the finite-graph side
    tree: list    # k SegTreeTrajectory, the limit side
    report: CoupleReport


_CAUSES = ("root_mismatch", "offspring_mismatch", "collision_or_cycle",
           "rate_discrepancy_event")


class _Run:
    def __init__(self, vs: VertexSpaceRealization, kappa: Kernel, beta,
                 k: int, radius: int, horizon: float,
                 rng: np.random.Generator, record: bool, dynamics: str):
        if dynamics not in ("edge", "vertex"):
            raise ValueError("dynamics must be 'edge' or 'vertex'")
        if dynamics == "vertex" and not isinstance(beta, UnaryKernel):
            raise TypeError("vertex updating needs a one-argument beta")
        if dynamics == "edge" and isinstance(beta, UnaryKernel):
            raise TypeError("edge updating needs a binary beta")
        if vs.mark_space.kind != "finite":
            raise ValueError("finite-type marks required")
        if k > vs.n:
            raise ValueError("more roots than vertices")
        self.vs, self.kappa, self.beta = vs, kappa, beta
        self.k, self.d, self.T = k, radius, horizon
        self.rng, self.record, self.dynamics = rng, record, dynamics
        self.n = vs.n
        self.r = vs.mark_space.r
        self.mu = vs.mark_space.weight_array
        self.counts = vs.type_counts
        self.p = [[connection_prob(kappa, a, b, self.n)
                   for b in range(self.r)] for a in range(self.r)]
        self.fn = [dict() for _ in range(k)]   # ball-side forests
        self.fcc = [dict() for _ in range(k)]
        self.tn = [dict() for _ in range(k)]   # tree-side forests
        self.tcc = [dict() for _ in range(k)]
        self.R = [0] * self.r
        self.U = [0] * self.r
        self.coupled = True
        self.decouple_time: float | None = None
        self.cause: str | None = None
        self.f_alive = True
        self.f_death: float | None = None
        self.f_times = [[] for _ in range(k)]
        self.f_states = [[] for _ in range(k)]
        self.t_times = [[] for _ in range(k)]
        self.t_states = [[] for _ in range(k)]

    # rates ------------------------------------------------------------

    def _beta_pair(self, x: int, y: int) -> float:
        return self.beta(x, y)

    def _ball_vertices(self):
        for j in range(self.k):
            for w, (m, _) in self.fn[j].items():
                yield j, w, m

    def _open_edges(self, nodes_list):
        for j in range(self.k):
            for w, (m, st) in nodes_list[j].items():
                if w and st == OPEN:
                    yield j, w, nodes_list[j][w[:-1]][0], m

    def _pair_collision_rate(self) -> float:
        verts = list(self._ball_vertices())
        open_pairs = set()
        for j, w, _, _ in self._open_edges(self.fn):
            open_pairs.add((j, w[:-1], w))
        total = 0.0
        for i in range(len(verts)):
            ji, wi, mi = verts[i]
            for l in range(i + 1, len(verts)):
                jl, wl, ml = verts[l]
                if ji == jl and ((ji, wi, wl) in open_pairs
                                 or (ji, wl, wi) in open_pairs):
                    continue
                total += self._beta_pair(mi, ml) * self.p[mi][ml]
        return total

    def _growth_pair(self, x: int, y: int) -> tuple[float, float]:
        """(finite, limit) growth rates for one interior vertex and type."""
        if self.dynamics == "edge":
            b = self.beta(x, y)
            gf = (self.counts[y] - self.R[y]) * b * self.p[x][y]
            gt = self.kappa(x, y) * b * self.mu[y]
            return max(gf, 0.0), gt
        b = self.beta(y)
        # exactly-one-hit weight: the hit at the updating site, everyone
        # else missed; skip one factor carrying the site's own mark
        single = self.p[x][y]
        skipped = False
        for _, _, m in self._ball_vertices():
            if not skipped and m == x:
                skipped = True
                continue
            single *= 1.0 - self.p[m][y]
        gf = (self.counts[y] - self.R[y]) * b * single
        gt = self.kappa(x, y) * b * self.mu[y]
        return max(gf, 0.0), gt

    def _vertex_cemetery_rate(self, y: int) -> float:
        """Rate of an outside type-y update wiring itself badly to the ball."""
        verts = list(self._ball_vertices())
        p_all = [self.p[m][y] for _, _, m in verts]
        interior = [len(w) < self.d for _, w, _ in verts]
        a_int = 1.0
        for q, isint in zip(p_all, interior):
            if isint:
                a_int *= 1.0 - q
        singles = 0.0
        for i, (q, isint) in enumerate(zip(p_all, interior)):
            if not isint or q <= 0.0:
                continue
            prod = 1.0
            for l, q2 in enumerate(p_all):
                if l != i:
                    prod *= 1.0 - q2
            singles += q * prod
        pd = max((1.0 - a_int) - singles, 0.0)
        return (self.counts[y] - self.R[y]) * self.beta(y) * pd

    def _interior_sites(self, nodes_list):
        for j in range(self.k):
            for w, (m, _) in nodes_list[j].items():
                if len(w) < self.d:
                    yield j, w, m

    def _rate_items(self):
        items = []
        if self.dynamics == "edge":
            if self.coupled:
                for j, w, mp, mc in self._open_edges(self.fn):
                    b, q = self._beta_pair(mp, mc), self.p[mp][mc]
                    items.append((b * (1 - q), ("eseg_sh", j, w)))
                    items.append((b * q, ("eseg_t", j, w)))
                for j, w, m in self._interior_sites(self.fn):
                    for y in range(self.r):
                        gf, gt = self._growth_pair(m, y)
                        items.append((min(gf, gt), ("egrow_sh", j, w, y)))
                        items.append((max(gf - gt, 0), ("egrow_f", j, w, y)))
                        items.append((max(gt - gf, 0), ("egrow_t", j, w, y)))
                items.append((self._pair_collision_rate(), ("ecem",)))
            else:
                if self.f_alive:
                    for j, w, mp, mc in self._open_edges(self.fn):
                        b, q = self._beta_pair(mp, mc), self.p[mp][mc]
                        items.append((b * (1 - q), ("fseg", j, w)))
                    for j, w, m in self._interior_sites(self.fn):
                        for y in range(self.r):
                            gf, _ = self._growth_pair(m, y)
                            items.append((gf, ("fgrow", j, w, y)))
                    items.append((self._pair_collision_rate(), ("fcem",)))
                for j, w, mp, mc in self._open_edges(self.tn):
                    items.append((self._beta_pair(mp, mc), ("tseg", j, w)))
                for j, w, m in self._interior_sites(self.tn):
                    for y in range(self.r):
                        gt = self.kappa(m, y) * self._beta_pair(m, y) * self.mu[y]
                        items.append((gt, ("tgrow", j, w, y)))
        else:
            if self.coupled:
                for j, w, m in self._ball_vertices():
                    items.append((self.beta(m), ("vupd_sh", j, w)))
                for j, w, m in self._interior_sites(self.fn):
                    for y in range(self.r):
                        gf, gt = self._growth_pair(m, y)
                        items.append((min(gf, gt), ("vgrow_sh", j, w, y)))
                        items.append((max(gf - gt, 0), ("vgrow_f", j, w, y)))
                        items.append((max(gt - gf, 0), ("vgrow_t", j, w, y)))
                for y in range(self.r):
                    items.append((self._vertex_cemetery_rate(y), ("vcem", y)))
            else:
                if self.f_alive:
                    for j, w, m in self._ball_vertices():
                        items.append((self.beta(m), ("fvupd", j, w)))
                    for j, w, m in self._interior_sites(self.fn):
                        for y in range(self.r):
                            gf, _ = self._growth_pair(m, y)
                            items.append((gf, ("fvgrow", j, w, y)))
                    for y in range(self.r):
                        items.append((self._vertex_cemetery_rate(y),
                                      ("fvcem", y)))
                for j, w, m in self._tree_vertices():
                    items.append((self.beta(m), ("tvupd", j, w)))
                for j, w, m in self._interior_sites(self.tn):
                    for y in range(self.r):
                        gt = self.kappa(m, y) * self.beta(y) * self.mu[y]
                        items.append((gt, ("tvgrow", j, w, y)))
        return [(rate, tag) for rate, tag in items if rate > 0.0]

    def _tree_vertices(self):
        for j in range(self.k):
            for w, (m, _) in self.tn[j].items():
                yield j, w, m

    # bookkeeping --------------------------------------------------------

    def _decouple(self, t: float, cause: str):
        if self.coupled:
            self.coupled = False
            self.decouple_time = t
            self.cause = cause

    def _kill_f(self, t: float):
        self.f_alive = False
        self.f_death = t

    def _f_reveal(self, j: int, parent: Word | None, y: int,
                  check: bool = True) -> Word | None:
        """Reveal one ball vertex, zero-checking it against the unexamined
        part first; None means the check hit and the ball is lost.

        The check runs before the vertex enters the unexamined pool, so
        every pair of revealed vertices is examined exactly once, at the
        reveal of its later endpoint.  Growth events whose rate already
        conditions on the fresh row (vertex updating) pass check=False.
        """
        if check and self._hit_unexamined(y):
            return None
        if parent is None:
            w: Word = ()
            self.fn[j][w] = (y, None)
        else:
            idx = self.fcc[j][parent] + 1
            self.fcc[j][parent] = idx
            w = parent + (idx,)
            self.fn[j][w] = (y, OPEN)
        self.fcc[j][w] = 0
        self.R[y] += 1
        self.U[y] += 1
        return w

    def _t_reveal(self, j: int, parent: Word | None, y: int) -> Word:
        if parent is None:
            w: Word = ()
            self.tn[j][w] = (y, None)
        else:
            idx = self.tcc[j][parent] + 1
            self.tcc[j][parent] = idx
            w = parent + (idx,)
            self.tn[j][w] = (y, OPEN)
        self.tcc[j][w] = 0
        return w

    def _snap_f(self, j: int, t: float):
        if not self.record or not self.f_alive:
            return
        state = OrderedSegmentedTree(dict(self.fn[j]))
        if self.f_states[j] and state == self.f_states[j][-1]:
            return
        if self.f_times[j] and self.f_times[j][-1] == t:
            self.f_states[j][-1] = state
            return
        self.f_times[j].append(t)
        self.f_states[j].append(state)

    def _snap_t(self, j: int, t: float):
        if not self.record:
            return
        state = OrderedSegmentedTree(dict(self.tn[j]))
        if self.t_states[j] and state == self.t_states[j][-1]:
            return
        if self.t_times[j] and self.t_times[j][-1] == t:
            self.t_states[j][-1] = state
            return
        self.t_times[j].append(t)
        self.t_states[j].append(state)

    # exploration --------------------------------------------------------

    def _hit_unexamined(self, y: int) -> bool:
        for z in range(self.r):
            m = self.U[z]
            if m <= 0:
                continue
            q = self.p[y][z]
            if q <= 0.0:
                continue
            if self.rng.random() < 1.0 - (1.0 - q) ** m:
                return True
        return False

    def _f_solo_children(self, j: int, w: Word) -> tuple[list[Word], bool]:
        x = self.fn[j][w][0]
        out: list[Word] = []
        for y in range(self.r):
            avail = self.counts[y] - self.R[y]
            if avail <= 0 or self.p[x][y] <= 0.0:
                continue
            c = int(self.rng.binomial(avail, self.p[x][y]))
            for _ in range(c):
                fw = self._f_reveal(j, w, y)
                if fw is None:
                    return out, False
                out.append(fw)
        return out, True

    def _t_solo_children(self, j: int, w: Word) -> list[Word]:
        x = self.tn[j][w][0]
        out = []
        for y in range(self.r):
            lam = self.kappa(x, y) * self.mu[y]
            c = int(self.rng.poisson(lam)) if lam > 0 else 0
            out.extend(self._t_reveal(j, w, y) for _ in range(c))
        return out

    def _f_solo_explore(self, j: int, frontier: list[Word], t: float) -> bool:
        """Finish the ball-side reveal alone; False means the ball died."""
        queue = deque(frontier)
        while queue:
            w = queue.popleft()
            if len(w) < self.d:
                self.U[self.fn[j][w][0]] -= 1
                kids, alive = self._f_solo_children(j, w)
                if not alive:
                    self._kill_f(t)
                    return False
                queue.extend(kids)
        return True

    def _t_solo_explore(self, j: int, frontier: list[Word]):
        queue = deque(frontier)
        while queue:
            w = queue.popleft()
            if len(w) < self.d:
                queue.extend(self._t_solo_children(j, w))

    def _joint_children(self, j: int, w: Word, tw: Word):
        """Coupled offspring batch at one matched interior site.

        Returns (fkids, tkids, matched, alive).  The tree side always
        completes its draws; the ball side stops at the first reveal that
        wires into the unexamined part of the ball.
        """
        x = self.fn[j][w][0]
        fkids: list[Word] = []
        tkids: list[Word] = []
        matched = True
        alive = True
        for y in range(self.r):
            lam = self.kappa(x, y) * self.mu[y]
            if not alive:
                c = int(self.rng.poisson(lam)) if lam > 0 else 0
                tkids.extend(self._t_reveal(j, tw, y) for _ in range(c))
                continue
            avail = max(self.counts[y] - self.R[y], 0)
            if matched:
                b, q, ok = maximal_binpoi_coupling(
                    avail, self.p[x][y], lam, self.rng)
                matched = ok
            else:
                b = (int(self.rng.binomial(avail, self.p[x][y]))
                     if avail > 0 and self.p[x][y] > 0.0 else 0)
                q = int(self.rng.poisson(lam)) if lam > 0 else 0
            tkids.extend(self._t_reveal(j, tw, y) for _ in range(q))
            for _ in range(b):
                fw = self._f_reveal(j, w, y)
                if fw is None:
                    alive = False
                    break
                fkids.append(fw)
        return fkids, tkids, matched, alive

    def _joint_explore(self, j: int, frontier: list[Word], t: float):
        """Lockstep reveal of matching frontiers on both sides.

        While matched the two frontiers consist of the same words; an
        offspring mismatch or a ball death splits the remainder into the
        two solo explorations.
        """
        fq = deque(frontier)
        tq = deque(frontier)
        while fq:
            w = fq.popleft()
            tw = tq.popleft()
            if len(w) >= self.d:
                continue
            x = self.fn[j][w][0]
            self.U[x] -= 1
            fkids, tkids, matched, alive = self._joint_children(j, w, tw)
            if not matched:
                self._decouple(t, "offspring_mismatch")
            if not alive:
                self._kill_f(t)
                self._decouple(t, "collision_or_cycle")
                self._t_solo_explore(j, list(tq) + tkids)
                return
            if matched:
                fq.extend(fkids)
                tq.extend(tkids)
                continue
            self._f_solo_explore(j, list(fq) + fkids, t)
            self._t_solo_explore(j, list(tq) + tkids)
            return

    # events -------------------------------------------------------------

    def _segment_f(self, j: int, w: Word):
        self.fn[j][w] = (self.fn[j][w][0], SEGMENTED)

    def _segment_t(self, j: int, w: Word):
        self.tn[j][w] = (self.tn[j][w][0], SEGMENTED)

    def _dispatch(self, tag, t: float):
        kind = tag[0]
        if kind in ("eseg_sh", "fseg"):
            _, j, w = tag
            self._segment_f(j, w)
            if kind == "eseg_sh":
                self._segment_t(j, w)
                self._snap_t(j, t)
            self._snap_f(j, t)
        elif kind == "eseg_t":
            _, j, w = tag
            self._decouple(t, "rate_discrepancy_event")
            self._segment_t(j, w)
            self._snap_t(j, t)
        elif kind == "tseg":
            _, j, w = tag
            self._segment_t(j, w)
            self._snap_t(j, t)
        elif kind in ("egrow_sh", "vgrow_sh"):
            _, j, w, y = tag
            fw = self._f_reveal(j, w, y, check=(kind == "egrow_sh"))
            tw = self._t_reveal(j, w, y)
            if fw is None:
                self._kill_f(t)
                self._decouple(t, "collision_or_cycle")
                self._t_solo_explore(j, [tw])
            else:
                self._joint_explore(j, [fw], t)
            self._snap_f(j, t)
            self._snap_t(j, t)
        elif kind in ("egrow_f", "fgrow", "vgrow_f", "fvgrow"):
            _, j, w, y = tag
            if kind in ("egrow_f", "vgrow_f"):
                self._decouple(t, "rate_discrepancy_event")
            fw = self._f_reveal(j, w, y, check=kind in ("egrow_f", "fgrow"))
            if fw is None:
                self._kill_f(t)
            else:
                self._f_solo_explore(j, [fw], t)
            self._snap_f(j, t)
        elif kind in ("egrow_t", "tgrow", "vgrow_t", "tvgrow"):
            _, j, w, y = tag
            if kind in ("egrow_t", "vgrow_t"):
                self._decouple(t, "rate_discrepancy_event")
            tw = self._t_reveal(j, w, y)
            self._t_solo_explore(j, [tw])
            self._snap_t(j, t)
        elif kind in ("ecem", "fcem"):
            if kind == "ecem":
                self._decouple(t, "collision_or_cycle")
            self._kill_f(t)
        elif kind in ("vcem", "fvcem"):
            if kind == "vcem":
                self._decouple(t, "collision_or_cycle")
            self._kill_f(t)
        elif kind == "vupd_sh":
            _, j, w = tag
            self._joint_update(j, w, t)
        elif kind == "fvupd":
            _, j, w = tag
            self._f_solo_update(j, w, t)
        elif kind == "tvupd":
            _, j, w = tag
            self._t_solo_update(j, w, t)
        else:
            raise RuntimeError(f"unknown event {tag}")

    def _open_incident(self, nodes, cc, j: int, w: Word) -> list[Word]:
        """Open edges at w as child-side words, parent edge first."""
        out = []
        if w and nodes[j][w][1] == OPEN:
            out.append(w)
        for c in range(1, cc[j].get(w, 0) + 1):
            cw = w + (c,)
            if nodes[j][cw][1] == OPEN:
                out.append(cw)
        return out

    def _f_update_checks(self, j: int, w: Word, skip: set) -> bool:
        """Fresh-row draws of an updating vertex against the rest of the
        ball; True means a collision killed the ball."""
        x = self.fn[j][w][0]
        others = [(jj, ww, mm) for jj, ww, mm in self._ball_vertices()
                  if not (jj == j and (ww == w or ww in skip))]
        others.sort(key=lambda it: (it[0], it[1]))
        for jj, ww, mm in others:
            q = self.p[x][mm]
            if q > 0.0 and self.rng.random() < q:
                return True
        return False

    def _joint_update(self, j: int, w: Word, t: float):
        x = self.fn[j][w][0]
        edges = self._open_incident(self.fn, self.fcc, j, w)
        diverged_at = None
        for i, e in enumerate(edges):
            mp = self.fn[j][e[:-1]][0]
            mc = self.fn[j][e][0]
            other = mp if e == w else mc
            if self.rng.random() < self.p[x][other]:
                diverged_at = i   # ball keeps the edge, tree refreshes it
                break
            self._segment_f(j, e)
            self._segment_t(j, e)
        if diverged_at is not None:
            self._decouple(t, "rate_discrepancy_event")
            for e in edges[diverged_at + 1:]:
                mp = self.fn[j][e[:-1]][0]
                mc = self.fn[j][e][0]
                other = mp if e == w else mc
                if not (self.rng.random() < self.p[x][other]):
                    self._segment_f(j, e)
            for e in edges[diverged_at:]:
                self._segment_t(j, e)
            partners = set(edges)
            if self._f_update_checks(j, w, partners):
                self._kill_f(t)
            elif len(w) < self.d:
                kids, alive = self._f_solo_children(j, w)
                if not alive:
                    self._kill_f(t)
                else:
                    self._f_solo_explore(j, kids, t)
            self._t_fuse_solo(j, w)
            self._snap_f(j, t)
            self._snap_t(j, t)
            return
        partners = set(edges)
        if self._f_update_checks(j, w, partners):
            self._kill_f(t)
            self._decouple(t, "collision_or_cycle")
            self._t_fuse_solo(j, w)
            self._snap_t(j, t)
            return
        if len(w) < self.d:
            fkids, tkids, matched, alive = self._joint_children(j, w, w)
            if not matched:
                self._decouple(t, "offspring_mismatch")
            if not alive:
                self._kill_f(t)
                self._decouple(t, "collision_or_cycle")
                self._t_solo_explore(j, tkids)
            elif matched:
                self._joint_explore(j, fkids, t)
            else:
                self._f_solo_explore(j, fkids, t)
                self._t_solo_explore(j, tkids)
        self._snap_f(j, t)
        self._snap_t(j, t)

    def _f_solo_update(self, j: int, w: Word, t: float):
        x = self.fn[j][w][0]
        edges = self._open_incident(self.fn, self.fcc, j, w)
        for e in edges:
            mp = self.fn[j][e[:-1]][0]
            mc = self.fn[j][e][0]
            other = mp if e == w else mc
            if not (self.rng.random() < self.p[x][other]):
                self._segment_f(j, e)
        if self._f_update_checks(j, w, set(edges)):
            self._kill_f(t)
            return
        if len(w) < self.d:
            kids, alive = self._f_solo_children(j, w)
            if not alive:
                self._kill_f(t)
                return
            self._f_solo_explore(j, kids, t)
        self._snap_f(j, t)

    def _t_fuse_solo(self, j: int, w: Word):
        for e in self._open_incident(self.tn, self.tcc, j, w):
            self._segment_t(j, e)
        if len(w) < self.d:
            kids = self._t_solo_children(j, w)
            self._t_solo_explore(j, kids)

    def _t_solo_update(self, j: int, w: Word, t: float):
        self._t_fuse_solo(j, w)
        self._snap_t(j, t)

    # main loop ------------------------------------------------------------

    def _draw_roots(self):
        remaining = self.counts.astype(float).copy()
        for j in range(self.k):
            if not self.f_alive:
                zt = _inverse_cdf(list(self.mu), self.rng.random())
                self._t_reveal(j, None, zt)
                continue
            tot = remaining.sum()
            q = remaining / tot
            if self.coupled:
                overlap = np.minimum(q, self.mu)
                s = float(overlap.sum())
                u = self.rng.random()
                if u < s:
                    z = _inverse_cdf(list(overlap), u)
                    zf = zt = z
                else:
                    v = u - s
                    zf = _inverse_cdf(list(np.maximum(q - self.mu, 0.0)), v)
                    w2 = self.rng.random() * (1.0 - s)
                    zt = _inverse_cdf(list(np.maximum(self.mu - q, 0.0)), w2)
                    self._decouple(0.0, "root_mismatch")
            else:
                zf = _inverse_cdf(list(q), self.rng.random())
                zt = _inverse_cdf(list(self.mu), self.rng.random())
            self._t_reveal(j, None, zt)
            if self._f_reveal(j, None, zf) is None:
                self._kill_f(0.0)
                self._decouple(0.0, "collision_or_cycle")
            remaining[zf] -= 1.0

    def run(self) -> CoupleResult:
        self._draw_roots()
        for j in range(self.k):
            if self.coupled:
                self._joint_explore(j, [()], 0.0)
            else:
                if self.f_alive:
                    self._f_solo_explore(j, [()], 0.0)
                self._t_solo_explore(j, [()])
        t = 0.0
        if self.f_alive:
            for j in range(self.k):
                self._snap_f(j, 0.0)
        for j in range(self.k):
            self._snap_t(j, 0.0)
        while True:
            items = self._rate_items()
            total = sum(rate for rate, _ in items)
            if total <= 0.0:
                break
            t += self.rng.exponential(1.0 / total)
            if t >= self.T:
                break
            u = self.rng.random() * total
            acc = 0.0
            chosen = items[-1][1]
            for rate, tag in items:
                acc += rate
                if u < acc:
                    chosen = tag
                    break
            self._dispatch(chosen, t)

        ball = []
        tree = []
        for j in range(self.k):
            if self.f_death is not None:
                horizon = min(self.T, self.f_death)
                ball.append(SegTreeTrajectory(
                    self.f_times[j] if self.f_states[j] else [],
                    self.f_states[j], horizon, self.d, self.f_death))
            else:
                ball.append(SegTreeTrajectory(
                    self.f_times[j], self.f_states[j], self.T, self.d, None))
            tree.append(SegTreeTrajectory(
                self.t_times[j], self.t_states[j], self.T, self.d, None))
        report = CoupleReport(
            success=self.coupled,
            decouple_time=self.decouple_time,
            failure_cause=self.cause,
            ball_failure_time=self.f_death,
            bound=failure_bound(self.n, self.T, self.d, self.k, self.kappa,
                                self.beta, self.vs.discrepancy()).explicit,
        )
        return CoupleResult(ball, tree, report)


def couple_ball_with_tree(vs: VertexSpaceRealization, kappa: Kernel, beta,
                          k: int, radius: int, horizon: float,
                          rng: np.random.Generator, record: bool = True,
                          dynamics: str = "edge") -> CoupleResult:
    """Joint run of the k-root dynamical ball and k limit trees.

    Both marginals are exact; report.success says whether the two sides
    agreed as marked forests through the whole window.  With record off,
    only the report is kept, which is much faster for failure-rate sweeps.
    """
    return _Run(vs, kappa, beta, k, radius, horizon, rng, record,
                dynamics).run()
