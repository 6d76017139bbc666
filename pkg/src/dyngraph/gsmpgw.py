"""Local limit processes: multitype Poisson trees with growth and segmentation.

The static object is a depth-truncated multitype Poisson Galton-Watson tree
(MPGW): a vertex of type x begets an independent Poisson(kappa(x, y) mu_y)
number of type-y children for every y, children listed in type order, and
vertices at the depth cap beget nothing.

Two dynamics run on top of it.  In the edge-updating limit each open edge
is segmented at rate beta(x_u, x_v) and every vertex u above the depth cap
grows a fresh MPGW(kappa, y) child subtree at rate kappa(x_u, y) beta(x_u, y)
mu_y.  In the vertex-updating limit each vertex u fires at rate beta(x_u),
segmenting all its open incident edges and fusing a fresh MPGW(kappa, x_u)
at u, while growth uses rate kappa(x_u, y) beta(y) mu_y.
"""

from __future__ import annotations

from dataclasses import dataclass
import heapq
import math

import numpy as np

from .kernels import MatrixKernel, VertexRateKernel, MarkSpace
from .segtree import OPEN, SEGMENTED, OrderedSegmentedTree, SegTreeTrajectory

__all__ = [
    "LimitProcessParams",
    "sample_mpgw",
    "simulate_gsmpgw",
    "simulate_vgsmpgw",
    "monotone_coupled_sample",
]


@dataclass(frozen=True)
class LimitProcessParams:
    """Inputs shared by the limit-process samplers.

    beta is a MatrixKernel for the edge-updating dynamics or a
    VertexRateKernel for the vertex-updating dynamics.  root_type None
    means the root type is drawn from the mark weights.
    """

    kappa: MatrixKernel
    beta: object
    mark_space: MarkSpace
    depth: int
    horizon: float
    root_type: int | None = None

    def __post_init__(self):
        if not isinstance(self.kappa, MatrixKernel):
            raise TypeError(
                "limit processes need finite types; project unit-interval "
                "kernels with finitary_approximation first")
        if self.mark_space.kind != "finite":
            raise TypeError("mark space must be finite")
        if self.kappa.r != self.mark_space.r:
            raise ValueError("kernel and mark space disagree on r")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def vertex_updating(self) -> bool:
        return isinstance(self.beta, VertexRateKernel)


def _poisson_children(kappa_row: np.ndarray, mu: np.ndarray,
                      rng: np.random.Generator) -> list[int]:
    """Types of one vertex's offspring, in well order (type order)."""
    out = []
    for y, rate in enumerate(kappa_row * mu):
        if rate > 0:
            out.extend([y] * int(rng.poisson(rate)))
    return out


def _mpgw_nodes(kappa: np.ndarray, mu: np.ndarray, root_type: int,
                depth: int, rng: np.random.Generator) -> dict:
    """Node map of a depth-truncated MPGW, all edges open."""
    nodes = {(): (root_type, None)}
    queue = [()]
    while queue:
        u = queue.pop()
        if len(u) >= depth:
            continue
        for i, y in enumerate(_poisson_children(kappa[nodes[u][0]], mu, rng), 1):
            w = u + (i,)
            nodes[w] = (y, OPEN)
            queue.append(w)
    return nodes


def sample_mpgw(kappa: MatrixKernel, mark_space: MarkSpace,
                root_type: int | None, depth: int,
                rng: np.random.Generator) -> OrderedSegmentedTree:
    """Draw a depth-truncated MPGW(kappa) tree.

    root_type None draws the root type from the mark weights.
    """
    if mark_space.kind != "finite" or kappa.r != mark_space.r:
        raise ValueError("need a finite mark space matching the kernel")
    mu = mark_space.weight_array
    if root_type is None:
        root_type = int(rng.choice(mark_space.r, p=mu))
    return OrderedSegmentedTree(
        _mpgw_nodes(kappa.array, mu, int(root_type), depth, rng))


class _TrajectoryRecorder:
    def __init__(self, nodes: dict, horizon: float, depth: int):
        self.times = [0.0]
        self.states = [OrderedSegmentedTree(dict(nodes))]
        self.horizon = horizon
        self.depth = depth

    def snapshot(self, t: float, nodes: dict):
        self.times.append(t)
        self.states.append(OrderedSegmentedTree(dict(nodes)))

    def done(self) -> SegTreeTrajectory:
        return SegTreeTrajectory(self.times, self.states, self.horizon,
                                 depth_cap=self.depth)


def simulate_gsmpgw(params: LimitProcessParams,
                    rng: np.random.Generator) -> SegTreeTrajectory:
    """Edge-updating limit dynamics started from a fresh MPGW."""
    if params.vertex_updating:
        raise TypeError("edge-updating dynamics need a binary beta kernel")
    kappa = params.kappa.array
    beta = params.beta.array
    mu = params.mark_space.weight_array
    d, T = params.depth, params.horizon
    growth_rate = (kappa * beta * mu[None, :]).sum(axis=1)

    nodes = _mpgw_nodes(kappa, mu,
                        int(rng.choice(params.mark_space.r, p=mu))
                        if params.root_type is None else params.root_type,
                        d, rng)
    child_counts = {w: 0 for w in nodes}
    for w in nodes:
        if w:
            child_counts[w[:-1]] += 1

    heap: list = []
    seq = 0

    def push(t, kind, word):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, word))
        seq += 1

    def arm_vertex(word, now):
        x = nodes[word][0]
        if len(word) <= d - 1 and growth_rate[x] > 0:
            push(now + rng.exponential(1.0 / growth_rate[x]), "grow", word)

    def arm_edge(word, now):
        x = nodes[word[:-1]][0]
        y = nodes[word][0]
        rate = beta[x, y]
        if rate > 0:
            push(now + rng.exponential(1.0 / rate), "seg", word)

    for w in nodes:
        arm_vertex(w, 0.0)
        if w:
            arm_edge(w, 0.0)

    rec = _TrajectoryRecorder(nodes, T, d)
    while heap:
        t, _, kind, word = heapq.heappop(heap)
        if t >= T:
            break
        if kind == "seg":
            nodes[word] = (nodes[word][0], SEGMENTED)
            rec.snapshot(t, nodes)
        else:  # grow
            x = nodes[word][0]
            weights = kappa[x] * beta[x] * mu
            y = int(rng.choice(params.mark_space.r, p=weights / weights.sum()))
            sub = _mpgw_nodes(kappa, mu, y, d - len(word) - 1, rng)
            child_counts[word] += 1
            base = word + (child_counts[word],)
            for sw, (m, _) in sub.items():
                full = base + sw
                nodes[full] = (m, OPEN)
                child_counts[full] = 0
                arm_vertex(full, t)
                arm_edge(full, t)
            for sw in sub:
                if sw:
                    child_counts[base + sw[:-1]] += 1
            rec.snapshot(t, nodes)
            push(t + rng.exponential(1.0 / growth_rate[x]), "grow", word)
    return rec.done()


def simulate_vgsmpgw(params: LimitProcessParams,
                     rng: np.random.Generator) -> SegTreeTrajectory:
    """Vertex-updating limit dynamics started from a fresh MPGW."""
    if not params.vertex_updating:
        raise TypeError("vertex-updating dynamics need a VertexRateKernel beta")
    kappa = params.kappa.array
    r = params.mark_space.r
    beta = np.array([params.beta(x) for x in range(r)])
    mu = params.mark_space.weight_array
    d, T = params.depth, params.horizon
    growth_rate = (kappa * beta[None, :] * mu[None, :]).sum(axis=1)

    nodes = _mpgw_nodes(kappa, mu,
                        int(rng.choice(r, p=mu))
                        if params.root_type is None else params.root_type,
                        d, rng)
    child_counts = {w: 0 for w in nodes}
    for w in nodes:
        if w:
            child_counts[w[:-1]] += 1

    heap: list = []
    seq = 0

    def push(t, kind, word):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, word))
        seq += 1

    def arm_vertex(word, now):
        x = nodes[word][0]
        if beta[x] > 0:
            push(now + rng.exponential(1.0 / beta[x]), "update", word)
        if len(word) <= d - 1 and growth_rate[x] > 0:
            push(now + rng.exponential(1.0 / growth_rate[x]), "grow", word)

    def attach(sub_nodes, base, now):
        for sw, (m, _) in sub_nodes.items():
            full = base + sw
            nodes[full] = (m, OPEN)
            child_counts[full] = 0
            arm_vertex(full, now)
        for sw in sub_nodes:
            if sw:
                child_counts[base + sw[:-1]] += 1

    for w in nodes:
        arm_vertex(w, 0.0)

    rec = _TrajectoryRecorder(nodes, T, d)
    while heap:
        t, _, kind, word = heapq.heappop(heap)
        if t >= T:
            break
        x = nodes[word][0]
        if kind == "update":
            changed = False
            if word and nodes[word][1] == OPEN:
                nodes[word] = (x, SEGMENTED)
                changed = True
            for i in range(1, child_counts[word] + 1):
                c = word + (i,)
                if nodes[c][1] == OPEN:
                    nodes[c] = (nodes[c][0], SEGMENTED)
                    changed = True
            # fuse a fresh tree rooted at the updating vertex; only its
            # offspring are new, the root itself is the existing vertex
            sub = _mpgw_nodes(kappa, mu, x, d - len(word), rng)
            kiddies = {sw: ms for sw, ms in sub.items() if sw != ()}
            if kiddies:
                offset = child_counts[word]
                relabeled = {}
                for sw, ms in kiddies.items():
                    relabeled[(sw[0] + offset,) + sw[1:]] = ms
                for sw, (m, _) in sorted(relabeled.items()):
                    full = word + sw
                    nodes[full] = (m, OPEN)
                    child_counts[full] = 0
                    arm_vertex(full, t)
                for sw in relabeled:
                    parent_w = word + sw[:-1]
                    child_counts[parent_w] = max(child_counts[parent_w], 0) + 1
                changed = True
            if changed:
                rec.snapshot(t, nodes)
            push(t + rng.exponential(1.0 / beta[x]), "update", word)
        else:  # grow
            weights = kappa[x] * beta * mu
            y = int(rng.choice(r, p=weights / weights.sum()))
            sub = _mpgw_nodes(kappa, mu, y, d - len(word) - 1, rng)
            child_counts[word] += 1
            attach(sub, word + (child_counts[word],), t)
            rec.snapshot(t, nodes)
            push(t + rng.exponential(1.0 / growth_rate[x]), "grow", word)
    return rec.done()


# -- nested monotone coupling -------------------------------------------------


class _SkeletonNode:
    """One vertex of the temporal-first construction.

    Creation marks let every approximation level decide inclusion by
    thinning, so the level trees are nested subforests of the limit tree.
    """

    __slots__ = ("ident", "parent", "type", "birth", "kind", "umark",
                 "order_key", "children", "seg_points", "event_id")

    def __init__(self, ident, parent, type_, birth, kind, umark, order_key,
                 event_id):
        self.ident = ident
        self.parent = parent
        self.type = type_
        self.birth = birth
        self.kind = kind          # "root" | "init" | "graft"
        self.umark = umark
        self.order_key = order_key
        self.children = []
        self.seg_points = []      # [(time, umark), ...] for the parent edge
        self.event_id = event_id  # shared by vertices born in one graft


def _build_skeleton(kappa, beta, mu, root_type, d, T, rng):
    nodes = []
    counter = [0]

    def new_node(parent, type_, birth, kind, umark, order_key, event_id):
        node = _SkeletonNode(counter[0], parent, type_, birth, kind, umark,
                             order_key, event_id)
        counter[0] += 1
        nodes.append(node)
        if parent is not None:
            parent.children.append(node)
        return node

    def populate(node, event_id):
        """Initial offspring, growth events and edge points below node."""
        depth = _depth_of(node)
        if node.parent is not None:
            rate = beta[node.parent.type, node.type]
            t = node.birth
            while rate > 0:
                t += rng.exponential(1.0 / rate)
                if t > T:
                    break
                node.seg_points.append((t, rng.random()))
        if depth < d:
            seqno = 0
            for y in range(len(mu)):
                lam = kappa[node.type, y] * mu[y]
                if lam <= 0:
                    continue
                for _ in range(int(rng.poisson(lam))):
                    child = new_node(node, y, node.birth, "init", rng.random(),
                                     (node.birth, 0, y, seqno), event_id)
                    seqno += 1
                    populate(child, event_id)
        if depth <= d - 1:
            g = float((kappa[node.type] * beta[node.type] * mu).sum())
            t = node.birth
            while g > 0:
                t += rng.exponential(1.0 / g)
                if t > T:
                    break
                w = kappa[node.type] * beta[node.type] * mu
                y = int(rng.choice(len(mu), p=w / w.sum()))
                eid = (node.ident, t)
                child = new_node(node, y, t, "graft", rng.random(),
                                 (t, 1, 0, 0), eid)
                populate(child, eid)

    root = new_node(None, root_type, 0.0, "root", None, (0.0, 0, 0, 0), None)
    populate(root, None)
    return root, nodes


def _depth_of(node) -> int:
    k = 0
    while node.parent is not None:
        node = node.parent
        k += 1
    return k


def _level_trajectory(root, d, T, kappa_m, beta_m, kappa, beta, mu):
    """Replay the skeleton for one approximation level."""

    def accept(node) -> bool:
        if node.kind == "root":
            return True
        px, py = node.parent.type, node.type
        if node.kind == "init":
            ratio = kappa_m[px, py] / kappa[px, py]
        else:
            num = kappa_m[px, py] * beta_m[px, py]
            den = kappa[px, py] * beta[px, py]
            ratio = num / den
        return node.umark <= ratio

    included = {}

    def walk(node):
        if node.parent is not None and not accept(node):
            return
        included[node.ident] = node
        for c in node.children:
            walk(c)

    walk(root)

    # per-node word assignment in order of appearance
    words = {root.ident: ()}
    events = []  # (time, seq, kind, payload)
    seq = 0

    def assign(node):
        nonlocal seq
        kids = sorted((c for c in node.children if c.ident in included),
                      key=lambda c: c.order_key)
        for i, c in enumerate(kids, 1):
            words[c.ident] = words[node.ident] + (i,)
            assign(c)

    assign(root)

    births = {}
    for ident, node in included.items():
        births.setdefault((node.birth, node.event_id), []).append(node)
    for (t, _eid), group in births.items():
        if t > 0.0:
            events.append((t, seq, "birth", group))
            seq += 1
    for ident, node in included.items():
        if node.parent is None:
            continue
        px, py = node.parent.type, node.type
        ratio = beta_m[px, py] / beta[px, py] if beta[px, py] > 0 else 0.0
        for (t, u) in node.seg_points:
            if u <= ratio:
                events.append((t, seq, "seg", node))
                seq += 1
                break

    nodes_now = {(): (root.type, None)}
    times = [0.0]
    for ident, node in included.items():
        if node.birth == 0.0 and node.parent is not None:
            nodes_now[words[node.ident]] = (node.type, OPEN)
    states = [OrderedSegmentedTree(dict(nodes_now))]
    for t, _s, kind, payload in sorted(events, key=lambda e: (e[0], e[1])):
        if kind == "birth":
            for node in payload:
                nodes_now[words[node.ident]] = (node.type, OPEN)
        else:
            w = words[payload.ident]
            if nodes_now[w][1] == OPEN:
                nodes_now[w] = (nodes_now[w][0], SEGMENTED)
            else:
                continue
        times.append(t)
        states.append(OrderedSegmentedTree(dict(nodes_now)))
    return SegTreeTrajectory(times, states, T, depth_cap=d)


def monotone_coupled_sample(kappa_family: list[MatrixKernel],
                            beta_family: list[MatrixKernel],
                            mark_space: MarkSpace, depth: int, horizon: float,
                            rng: np.random.Generator,
                            root_type: int | None = None
                            ) -> list[SegTreeTrajectory]:
    """Couple nested limit processes on one randomness source.

    The last entries of kappa_family / beta_family are the dominating
    kernels; earlier entries must be pointwise below them.  One skeleton is
    drawn from the dominating pair with uniform marks on every creation and
    segmentation event, and each level keeps an event iff its mark clears
    the level's rate ratio.  The returned list holds one trajectory per
    level, the limit last; trajectories are nested and agree exactly with
    the limit when every mark passes.
    """
    if len(kappa_family) != len(beta_family) or not kappa_family:
        raise ValueError("kernel families must align and be nonempty")
    kappa = kappa_family[-1].array
    beta = beta_family[-1].array
    for km, bm in zip(kappa_family, beta_family):
        if np.any(km.array > kappa + 1e-12) or np.any(bm.array > beta + 1e-12):
            raise ValueError("family members must be dominated by the limit")
    mu = mark_space.weight_array
    if root_type is None:
        root_type = int(rng.choice(mark_space.r, p=mu))
    root, _ = _build_skeleton(kappa, beta, mu, root_type, depth, horizon, rng)
    return [
        _level_trajectory(root, depth, horizon, km.array, bm.array,
                          kappa, beta, mu)
        for km, bm in zip(kappa_family, beta_family)
    ]
