"""Ordered segmented trees with word labels, and their trajectories.

Vertices are labeled by tuples of positive integers: the root is (), and
u + (i,) is the i-th child of u.  Every non-root vertex carries the state
of the edge to its parent, either OPEN or SEGMENTED.  A segmented edge
remains part of the tree structure; only its state changes.  Trees are
treated as immutable: every operation returns a new tree.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
import json

__all__ = [
    "OPEN",
    "SEGMENTED",
    "Word",
    "OrderedSegmentedTree",
    "SegTreeTrajectory",
    "grow",
    "segment",
    "merge_at_root",
    "truncate",
    "well_order",
    "subtree_at",
    "without_subtree",
]

OPEN = 1
SEGMENTED = 2

_STATE_NAMES = {OPEN: "open", SEGMENTED: "segmented"}
_STATE_CODES = {v: k for k, v in _STATE_NAMES.items()}

Word = tuple[int, ...]


class TreeStructureError(ValueError):
    """Raised on malformed words or illegal tree edits."""


def parent(word: Word) -> Word:
    if not word:
        raise TreeStructureError("root has no parent")
    return word[:-1]


@dataclass(frozen=True)
class OrderedSegmentedTree:
    """Mapping from words to (mark, parent-edge state) pairs.

    nodes[()] has edge state None.  Children of each vertex are indexed
    contiguously from 1 in their order of appearance.
    """

    nodes: dict

    def __post_init__(self):
        object.__setattr__(self, "_child_counts", None)

    # -- construction ------------------------------------------------------

    @classmethod
    def single(cls, mark) -> "OrderedSegmentedTree":
        return cls({(): (mark, None)})

    @classmethod
    def from_nodes(cls, nodes: dict) -> "OrderedSegmentedTree":
        t = cls(dict(nodes))
        t.validate()
        return t

    def validate(self) -> None:
        if () not in self.nodes:
            raise TreeStructureError("tree must contain the root ()")
        # orphans first: child_counts assumes every parent is present
        for w, (mark, state) in self.nodes.items():
            if w:
                if w[:-1] not in self.nodes:
                    raise TreeStructureError(f"orphan word {w}")
                if state not in (OPEN, SEGMENTED):
                    raise TreeStructureError(f"bad edge state at {w}")
            elif state is not None:
                raise TreeStructureError("root must not carry an edge state")
        counts = self.child_counts()
        for w in self.nodes:
            if w and (w[-1] < 1 or w[-1] > counts[w[:-1]]):
                raise TreeStructureError(f"non-contiguous child index at {w}")

    # -- basic queries ------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, word: Word) -> bool:
        return word in self.nodes

    def mark(self, word: Word):
        return self.nodes[word][0]

    def edge_state(self, word: Word) -> int:
        if not word:
            raise TreeStructureError("root has no parent edge")
        return self.nodes[word][1]

    def child_counts(self) -> dict:
        cached = self._child_counts
        if cached is None:
            cached = {w: 0 for w in self.nodes}
            for w in self.nodes:
                if w:
                    cached[w[:-1]] += 1
            object.__setattr__(self, "_child_counts", cached)
        return cached

    def children(self, word: Word) -> list[Word]:
        c = self.child_counts()[word]
        return [word + (i,) for i in range(1, c + 1)]

    def words(self) -> list[Word]:
        """All words in depth-first preorder (lexicographic)."""
        return sorted(self.nodes)

    def height(self) -> int:
        return max(len(w) for w in self.nodes)

    def open_edges(self) -> list[Word]:
        return [w for w, (_, s) in self.nodes.items() if s == OPEN]

    def segmented_edges(self) -> list[Word]:
        return [w for w, (_, s) in self.nodes.items() if s == SEGMENTED]

    def size(self) -> int:
        return len(self.nodes)


def grow(tree: OrderedSegmentedTree, sub: OrderedSegmentedTree,
         at: Word) -> OrderedSegmentedTree:
    """Attach sub as the new last child of `at`, its root edge open."""
    if at not in tree.nodes:
        raise TreeStructureError(f"graft point {at} not in tree")
    base = at + (tree.child_counts()[at] + 1,)
    nodes = dict(tree.nodes)
    for w, (mark, state) in sub.nodes.items():
        nodes[base + w] = (mark, OPEN if w == () else state)
    return OrderedSegmentedTree(nodes)


def segment(tree: OrderedSegmentedTree, at: Word) -> OrderedSegmentedTree:
    """Mark the edge between `at` and its parent as segmented."""
    if at == () or at not in tree.nodes:
        raise TreeStructureError(f"no edge above {at}")
    mark, state = tree.nodes[at]
    if state != OPEN:
        raise TreeStructureError(f"edge above {at} is not open")
    nodes = dict(tree.nodes)
    nodes[at] = (mark, SEGMENTED)
    return OrderedSegmentedTree(nodes)


def merge_at_root(tree: OrderedSegmentedTree, sub: OrderedSegmentedTree,
                  at: Word) -> OrderedSegmentedTree:
    """Fuse the root of sub with vertex `at` (marks must agree).

    The children of sub's root are appended after the existing children
    of `at`; deeper structure and edge states are preserved.
    """
    if at not in tree.nodes:
        raise TreeStructureError(f"merge point {at} not in tree")
    if tree.mark(at) != sub.mark(()):
        raise TreeStructureError("root mark mismatch in merge")
    offset = tree.child_counts()[at]
    nodes = dict(tree.nodes)
    for w, (mark, state) in sub.nodes.items():
        if w == ():
            continue
        nodes[at + (w[0] + offset,) + w[1:]] = (mark, state)
    return OrderedSegmentedTree(nodes)


def truncate(tree: OrderedSegmentedTree, depth: int) -> OrderedSegmentedTree:
    """Restrict to words of length at most depth."""
    if depth < 0:
        raise TreeStructureError("depth must be nonnegative")
    return OrderedSegmentedTree(
        {w: ms for w, ms in tree.nodes.items() if len(w) <= depth})


def subtree_at(tree: OrderedSegmentedTree, at: Word) -> OrderedSegmentedTree:
    """The branch hanging at `at`, re-rooted there."""
    if at not in tree.nodes:
        raise TreeStructureError(f"{at} not in tree")
    k = len(at)
    nodes = {}
    for w, (mark, state) in tree.nodes.items():
        if w[:k] == at:
            rest = w[k:]
            nodes[rest] = (mark, None if rest == () else state)
    return OrderedSegmentedTree(nodes)


def without_subtree(tree: OrderedSegmentedTree, at: Word) -> OrderedSegmentedTree:
    """The root side left after pruning the branch at `at`.

    Sibling indices of the removed branch are not compacted; callers that
    need contiguous indices should re-index via well_order.
    """
    if at == ():
        raise TreeStructureError("cannot prune the root")
    if at not in tree.nodes:
        raise TreeStructureError(f"{at} not in tree")
    k = len(at)
    kept = {w: ms for w, ms in tree.nodes.items() if w[:k] != at}
    # re-index the dropped child slot so indices stay contiguous
    out = {}
    pref, idx = at[:-1], at[-1]
    for w, ms in kept.items():
        if len(w) > len(pref) and w[:len(pref)] == pref and w[len(pref)] > idx:
            out[pref + (w[len(pref)] - 1,) + w[len(pref) + 1:]] = ms
        else:
            out[w] = ms
    return OrderedSegmentedTree(out)


def well_order(tree: OrderedSegmentedTree) -> OrderedSegmentedTree:
    """Reorder siblings everywhere by mark, stably in the existing order.

    Stable sorting keeps the relative order of equal-mark siblings, so
    applying well_order twice is the same as applying it once.
    """
    relabel = {(): ()}
    stack = [()]
    while stack:
        u = stack.pop()
        kids = tree.children(u)
        order = sorted(range(len(kids)), key=lambda i: (tree.mark(kids[i]), i))
        for new_i, old_i in enumerate(order, start=1):
            relabel[kids[old_i]] = relabel[u] + (new_i,)
            stack.append(kids[old_i])
    return OrderedSegmentedTree(
        {relabel[w]: ms for w, ms in tree.nodes.items()})


# -- trajectories -------------------------------------------------------------


@dataclass
class SegTreeTrajectory:
    """Piecewise-constant tree-valued path on [0, horizon).

    jump_times[0] is 0 and states[i] holds on [jump_times[i],
    jump_times[i+1]).  cemetery_time marks the instant a ball extraction
    or coupling stopped being a segmented tree, if it did.
    """

    jump_times: list[float]
    states: list[OrderedSegmentedTree]
    horizon: float
    depth_cap: int | None = None
    cemetery_time: float | None = None

    def __post_init__(self):
        if len(self.jump_times) != len(self.states):
            raise ValueError("one state per jump time")
        if self.jump_times:
            if self.jump_times[0] != 0.0:
                raise ValueError("trajectories start at time 0")
            for a, b in zip(self.jump_times, self.jump_times[1:]):
                if b <= a:
                    raise ValueError("jump times must be strictly increasing")

    def state_at(self, t: float) -> OrderedSegmentedTree:
        # closed at the right end: the state at the horizon is the final one
        if not (0.0 <= t <= self.horizon):
            raise ValueError(f"time {t} outside the defined window")
        if self.cemetery_time is not None and t >= self.cemetery_time:
            raise ValueError(f"time {t} not before the cemetery time")
        if not self.states:
            raise ValueError("empty trajectory")
        return self.states[bisect_right(self.jump_times, t) - 1]

    def final_state(self) -> OrderedSegmentedTree:
        return self.states[-1]

    def birth_index(self, word: Word) -> int:
        """Index of the first state containing word."""
        for i, s in enumerate(self.states):
            if word in s:
                return i
        raise KeyError(word)

    def accumulated_words(self) -> list[Word]:
        return self.states[-1].words() if self.states else []

    def to_json(self) -> str:
        payload = {
            "horizon": self.horizon,
            "depth_cap": self.depth_cap,
            "cemetery_time": self.cemetery_time,
            "jumps": [
                {
                    "time": t,
                    "tree": [
                        {
                            "word": list(w),
                            "mark": _mark_out(s.nodes[w][0]),
                            "edge": None if w == () else _STATE_NAMES[s.nodes[w][1]],
                        }
                        for w in s.words()
                    ],
                }
                for t, s in zip(self.jump_times, self.states)
            ],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SegTreeTrajectory":
        payload = json.loads(text)
        times, states = [], []
        for rec in payload["jumps"]:
            times.append(float(rec["time"]))
            nodes = {}
            for v in rec["tree"]:
                w = tuple(v["word"])
                state = None if w == () else _STATE_CODES[v["edge"]]
                nodes[w] = (v["mark"], state)
            states.append(OrderedSegmentedTree(nodes))
        return cls(times, states, payload["horizon"],
                   payload.get("depth_cap"), payload.get("cemetery_time"))


def _mark_out(mark):
    return int(mark) if isinstance(mark, (int,)) else float(mark)
