"""History invariants and distances: canonical codes, isomorphism,
the local metric, and plug-in total variation."""

import math

import numpy as np
import pytest

from dyngraph.metrics import (
    canonical_code,
    isomorphic,
    local_distance,
    tv_estimate,
)
from dyngraph.segtree import OPEN, SEGMENTED, OrderedSegmentedTree, SegTreeTrajectory


def tree(nodes):
    return OrderedSegmentedTree(dict(nodes))


def traj(steps, horizon, cemetery=None):
    times = [t for t, _ in steps]
    states = [tree(s) for _, s in steps]
    return SegTreeTrajectory(times, states, horizon, cemetery_time=cemetery)


ROOT = {(): (0, None)}


def two_kids(seg_word=None):
    """Root with a mark-1 and a mark-2 child, one grandchild each."""
    nodes = {
        (): (0, None),
        (1,): (1, OPEN),
        (2,): (1, OPEN),
        (1, 1): (2, OPEN),
        (2, 1): (2, OPEN),
    }
    if seg_word:
        nodes[seg_word] = (nodes[seg_word][0], SEGMENTED)
    return nodes


def test_codes_ignore_sibling_order():
    # the histories differ only in which sibling carries the segmenting
    # grandchild; a root isomorphism swaps them
    a = traj([(0.0, two_kids()), (0.5, two_kids((1, 1)))], 1.0)
    b = traj([(0.0, two_kids()), (0.5, two_kids((2, 1)))], 1.0)
    assert canonical_code(a).key == canonical_code(b).key
    assert canonical_code(a).kind == "tree"
    assert isomorphic(a, b)


def test_exact_codes_see_jump_times():
    a = traj([(0.0, two_kids()), (0.5, two_kids((1, 1)))], 1.0)
    c = traj([(0.0, two_kids()), (0.6, two_kids((1, 1)))], 1.0)
    assert canonical_code(a).key != canonical_code(c).key
    assert not isomorphic(a, c)


def test_grid_codes_bucket_jump_times():
    a = traj([(0.0, two_kids()), (0.55, two_kids((1, 1)))], 1.0)
    c = traj([(0.0, two_kids()), (0.6, two_kids((1, 1)))], 1.0)
    assert canonical_code(a).key != canonical_code(c).key
    assert canonical_code(a, grid_step=0.5).key == \
        canonical_code(c, grid_step=0.5).key
    # moving the jump across a grid point changes the observed profile
    d = traj([(0.0, two_kids()), (0.4, two_kids((1, 1)))], 1.0)
    assert canonical_code(d, grid_step=0.5).key != \
        canonical_code(c, grid_step=0.5).key


def test_codes_distinguish_marks_and_missing_vertices():
    base = traj([(0.0, two_kids())], 1.0)
    remarked = {w: ((5, s[1]) if w == (1, 1) else s)
                for w, s in two_kids().items()}
    assert canonical_code(base).key != \
        canonical_code(traj([(0.0, remarked)], 1.0)).key
    fewer = dict(two_kids())
    del fewer[(2, 1)]
    assert canonical_code(base).key != \
        canonical_code(traj([(0.0, fewer)], 1.0)).key


def test_late_births_enter_the_profile():
    grown = dict(two_kids())
    born = dict(grown)
    del grown[(2, 1)]
    a = traj([(0.0, grown), (0.7, born)], 1.0)
    b = traj([(0.0, born)], 1.0)
    assert canonical_code(a, grid_step=0.5).key != \
        canonical_code(b, grid_step=0.5).key
    # births in the same grid cell are indistinguishable
    c = traj([(0.0, grown), (0.6, born)], 1.0)
    assert canonical_code(a).key != canonical_code(c).key
    assert canonical_code(a, grid_step=0.5).key == \
        canonical_code(c, grid_step=0.5).key


def test_radius_restriction_drops_deep_jumps():
    a = traj([(0.0, two_kids()), (0.5, two_kids((1, 1)))], 1.0)
    const = traj([(0.0, two_kids())], 1.0)
    assert canonical_code(a, radius=1).key == \
        canonical_code(const, radius=1).key
    assert canonical_code(a, radius=2).key != \
        canonical_code(const, radius=2).key


def test_dagger_codes():
    dead = traj([(0.0, ROOT)], 2.0, cemetery=0.7)
    code = canonical_code(dead, grid_step=0.5)
    assert code.kind == "dagger" and code.key == b"dagger|2"
    assert canonical_code(traj([(0.0, ROOT)], 2.0, cemetery=0.95),
                          grid_step=0.5).key == b"dagger|2"
    assert canonical_code(traj([(0.0, ROOT)], 2.0, cemetery=1.2),
                          grid_step=0.5).key == b"dagger|3"
    exact = canonical_code(dead)
    assert exact.key == b"dagger|" + repr(0.7).encode()
    # a cemetery after the observation window is invisible
    assert canonical_code(dead, horizon=0.5).kind == "tree"


def test_horizon_cannot_exceed_the_recorded_window():
    a = traj([(0.0, ROOT)], 1.0)
    with pytest.raises(ValueError):
        canonical_code(a, horizon=1.5)
    with pytest.raises(ValueError):
        canonical_code(a, grid_step=0.0)


def test_isomorphic_cemetery_pairs():
    dead = traj([(0.0, ROOT)], 1.0, cemetery=0.5)
    dead2 = traj([(0.0, ROOT)], 1.0, cemetery=0.5)
    late = traj([(0.0, ROOT)], 1.0, cemetery=0.8)
    alive = traj([(0.0, ROOT)], 1.0)
    assert isomorphic(dead, dead2)
    assert not isomorphic(dead, late)
    assert not isomorphic(dead, alive)


def test_isomorphic_with_mark_tolerance():
    a = traj([(0.0, {(): (0.5, None), (1,): (0.50, OPEN)})], 1.0)
    b = traj([(0.0, {(): (0.5, None), (1,): (0.55, OPEN)})], 1.0)
    assert not isomorphic(a, b)
    assert isomorphic(a, b, mark_tol=0.1)
    assert not isomorphic(a, b, mark_tol=0.01)


def test_isomorphic_tolerance_needs_a_full_matching():
    # child marks (0.0, 0.3) against (0.15, 0.45): a greedy pairing of
    # 0.15 with 0.0 or 0.3 both work, but only 0.0-0.15 / 0.3-0.45 matches
    # both pairs at tolerance 0.2
    a = traj([(0.0, {(): (0, None), (1,): (0.0, OPEN), (2,): (0.3, OPEN)})],
             1.0)
    b = traj([(0.0, {(): (0, None), (1,): (0.15, OPEN), (2,): (0.45, OPEN)})],
             1.0)
    assert isomorphic(a, b, mark_tol=0.2)
    assert not isomorphic(a, b, mark_tol=0.1)


def test_local_distance_extremes():
    same = traj([(0.0, two_kids())], 4.0)
    other = traj([(0.0, two_kids())], 4.0)
    assert local_distance(same, other) == (0.0, 2.0 ** -4)
    # root marks differ: no radius agrees, every term is 1
    stranger = traj([(0.0, {(): (9, None)})], 4.0)
    total, tail = local_distance(same, stranger)
    assert total == pytest.approx(sum(2.0 ** -k for k in range(5)))
    assert tail == 2.0 ** -4


def test_local_distance_radius_one_agreement():
    # identical one-neighborhoods, different grandchild marks: each term
    # contributes 1 / (1 + 1)
    a = traj([(0.0, two_kids())], 4.0)
    nodes = dict(two_kids())
    nodes[(1, 1)] = (7, OPEN)
    nodes[(2, 1)] = (7, OPEN)
    b = traj([(0.0, nodes)], 4.0)
    total, tail = local_distance(a, b)
    assert total == pytest.approx(0.5 * (1 + 0.5 + 0.25 + 0.125 + 0.0625))
    assert tail == 0.0625
    # symmetry
    assert local_distance(b, a)[0] == total


def test_local_distance_time_of_divergence_sets_the_weight():
    # same until 1.5, then one grandchild segments: terms k >= 2 pay 1/2
    a = traj([(0.0, two_kids())], 4.0)
    b = traj([(0.0, two_kids()), (1.5, two_kids((1, 1)))], 4.0)
    total, _ = local_distance(a, b)
    assert total == pytest.approx(0.5 * (0.25 + 0.125 + 0.0625))


def test_local_distance_term_control():
    a = traj([(0.0, two_kids())], 4.0)
    b = traj([(0.0, {(): (9, None)})], 4.0)
    total, tail = local_distance(a, b, terms=2)
    assert total == pytest.approx(1.75) and tail == 0.25
    with pytest.raises(ValueError):
        local_distance(a, b, terms=5)
    dead = traj([(0.0, ROOT)], 4.0, cemetery=1.0)
    with pytest.raises(ValueError):
        local_distance(a, dead)


def test_tv_estimate_hand_case():
    est = tv_estimate(list("AAB"), list("ABB"))
    assert est.tv == pytest.approx(1 / 3)
    # delta-method variance 4/27 and the two-cell null floor
    assert est.sampling_se == pytest.approx(math.sqrt(4 / 27))
    assert est.null_floor == pytest.approx(math.sqrt(2 / (6 * math.pi)))
    assert est.stderr == pytest.approx(
        math.sqrt(4 / 27 + 2 / (6 * math.pi)))
    assert (est.n_a, est.n_b) == (3, 3)
    with pytest.raises(ValueError):
        tv_estimate([], list("A"))


def test_tv_estimate_identical_samples():
    est = tv_estimate(list("AABBB"), list("AABBB"))
    assert est.tv == 0.0 and est.sampling_se == 0.0
    assert est.null_floor > 0.0


def test_tv_estimate_recovers_a_known_distance():
    rng = np.random.default_rng(61)
    n = 3000
    a = rng.choice(["x", "y"], size=n, p=[0.5, 0.5])
    b = rng.choice(["x", "y"], size=n, p=[0.8, 0.2])
    est = tv_estimate(a.tolist(), b.tolist())
    assert abs(est.tv - 0.3) <= 4 * est.stderr
    # same law: the statistic hides below its combined scale
    c = rng.choice(["x", "y"], size=n, p=[0.5, 0.5])
    d = rng.choice(["x", "y"], size=n, p=[0.5, 0.5])
    null = tv_estimate(c.tolist(), d.tolist())
    assert null.tv <= 4 * null.stderr
