"""Ball extraction and space-time reachability on recorded traces."""

import math
from collections import deque

import numpy as np
import pytest

from dyngraph.dirg import DynGraphTrace, simulate_edge_updating
from dyngraph.dynball import (
    extract_ball,
    extract_component,
    spacetime_distance,
    spacetime_distances,
)
from dyngraph.kernels import MarkSpace, constant_kernel
from dyngraph.segtree import OPEN, SEGMENTED, truncate
from dyngraph.vertexspace import realize


def _trace(n, timelines, horizon=2.0, marks=None):
    marks = np.zeros(n, dtype=int) if marks is None else np.asarray(marks)
    return DynGraphTrace(n, marks, horizon, timelines)


def test_clean_growth_and_segmentation():
    trace = _trace(6, {
        (0, 1): [(0.0, 2.0)],
        (1, 2): [(0.0, 0.6)],
        (0, 3): [(0.9, 2.0)],
    })
    ball = extract_ball(trace, 0, 2)
    assert not ball.failed
    traj = ball.trajectory
    assert traj.jump_times == [0.0, 0.6, 0.9]
    assert ball.vertex_map == {(): 0, (1,): 1, (1, 1): 2, (2,): 3}
    s0, s1, s2 = traj.states
    assert s0.nodes == {(): (0, None), (1,): (0, OPEN), (1, 1): (0, OPEN)}
    assert s1.edge_state((1, 1)) == SEGMENTED
    assert s2.nodes[(2,)] == (0, OPEN)
    assert traj.cemetery_time is None


def test_cycle_event_fails_the_ball():
    trace = _trace(3, {
        (0, 1): [(0.0, 2.0)],
        (0, 2): [(0.0, 2.0)],
        (1, 2): [(0.7, 2.0)],
    })
    ball = extract_ball(trace, 0, 2)
    assert ball.failed and ball.tree_failure_time == 0.7
    assert ball.trajectory.cemetery_time == 0.7
    assert ball.trajectory.jump_times == [0.0]


def test_open_edge_found_during_reveal_fails():
    # vertex 2 is revealed at 0.5 and already carries an open edge back
    # into the ball
    trace = _trace(4, {
        (0, 1): [(0.0, 2.0)],
        (1, 2): [(0.5, 2.0)],
        (0, 2): [(0.4, 2.0)],
    })
    ball = extract_ball(trace, 0, 2)
    assert ball.failed and ball.tree_failure_time == 0.5


def test_segmented_edge_reopening_fails():
    trace = _trace(2, {(0, 1): [(0.0, 0.3), (0.6, 2.0)]})
    ball = extract_ball(trace, 0, 1)
    assert ball.failed and ball.tree_failure_time == 0.6
    # the segmentation itself is recorded before the failure
    assert ball.trajectory.jump_times == [0.0, 0.3]


def test_boundary_pair_opening_fails_even_without_growth():
    trace = _trace(3, {
        (0, 1): [(0.0, 2.0)],
        (0, 2): [(0.0, 2.0)],
        (1, 2): [(0.5, 2.0)],
    })
    ball = extract_ball(trace, 0, 1)
    assert ball.failed and ball.tree_failure_time == 0.5


def test_openings_at_the_boundary_to_unseen_are_ignored():
    trace = _trace(6, {
        (0, 1): [(0.0, 2.0)],
        (1, 5): [(0.5, 1.0)],          # boundary-to-unseen: no growth
        (1, 2): [(0.0, 2.0)],
        (2, 3): [(0.0, 2.0)],          # beyond the radius at time 0
    })
    ball = extract_ball(trace, 0, 1)
    assert not ball.failed
    assert set(ball.vertex_map.values()) == {0, 1}
    assert ball.trajectory.jump_times == [0.0]

    # at radius 2 the same vertex is interior, so the opening grows the ball,
    # while the edge hanging off boundary vertex 2 still does nothing
    deeper = extract_ball(trace, 0, 2)
    assert not deeper.failed
    assert set(deeper.vertex_map.values()) == {0, 1, 2, 5}
    # growth at 0.5, then the same edge segments when it closes at 1.0
    assert deeper.trajectory.jump_times == [0.0, 0.5, 1.0]
    assert deeper.trajectory.final_state().segmented_edges() == [(1, 2)]


def test_failure_at_time_zero_leaves_empty_trajectory():
    trace = _trace(3, {
        (0, 1): [(0.0, 2.0)],
        (0, 2): [(0.0, 2.0)],
        (1, 2): [(0.0, 2.0)],
    })
    ball = extract_ball(trace, 0, 2)
    assert ball.failed and ball.tree_failure_time == 0.0
    assert ball.trajectory.jump_times == []
    assert ball.trajectory.cemetery_time == 0.0


def test_children_are_ordered_by_mark_then_id():
    trace = _trace(4, {
        (0, 3): [(0.0, 2.0)],
        (0, 1): [(0.0, 2.0)],
        (0, 2): [(0.0, 2.0)],
    }, marks=[0, 1, 0, 0])
    ball = extract_ball(trace, 0, 1)
    assert ball.vertex_map == {(): 0, (1,): 2, (2,): 3, (3,): 1}


def test_radius_and_horizon_arguments():
    trace = _trace(2, {(0, 1): [(0.0, 2.0)]})
    with pytest.raises(ValueError):
        extract_ball(trace, 0, -1)
    with pytest.raises(ValueError):
        extract_ball(trace, 0, 1, horizon=3.0)
    ball = extract_ball(trace, 0, 0)
    assert ball.vertex_map == {(): 0}


def _bfs_ball(trace, root, radius):
    """Vertex set and parent map of the static breadth-first ball at 0."""
    dist = {root: 0}
    order = deque([root])
    while order:
        u = order.popleft()
        if dist[u] >= radius:
            continue
        for v in sorted(trace.open_neighbors(u, 0.0)):
            if v not in dist:
                dist[v] = dist[u] + 1
                order.append(v)
    return dist


def test_time_zero_ball_matches_static_bfs():
    ms = MarkSpace.single_type()
    vs = realize(ms, 40)
    kappa, beta = constant_kernel(1.5), constant_kernel(1.0)
    rng = np.random.default_rng(13)
    checked_ok = checked_fail = 0
    for _ in range(200):
        trace = simulate_edge_updating(vs, kappa, beta, 0.01, rng)
        dist = _bfs_ball(trace, 0, 2)
        inner = sum(1 for (u, v) in trace.edges_at(0.0)
                    if u in dist and v in dist)
        ball = extract_ball(trace, 0, 2, horizon=0.0)
        if inner == len(dist) - 1:
            # the induced ball is a tree: extraction must agree with BFS
            assert not ball.failed
            assert sorted(ball.vertex_map.values()) == sorted(dist)
            for w, v in ball.vertex_map.items():
                assert len(w) == dist[v]
            checked_ok += 1
        else:
            assert ball.failed and ball.tree_failure_time == 0.0
            checked_fail += 1
    assert checked_ok > 100 and checked_fail > 3


def test_radius_one_history_is_the_truncated_radius_two_history():
    ms = MarkSpace.single_type()
    vs = realize(ms, 250)
    kappa, beta = constant_kernel(2.0), constant_kernel(1.0)
    rng = np.random.default_rng(17)
    both_ok = 0
    for _ in range(120):
        trace = simulate_edge_updating(vs, kappa, beta, 1.0, rng)
        b1 = extract_ball(trace, 0, 1)
        b2 = extract_ball(trace, 0, 2)
        if b1.failed:
            # whatever failed the small ball is revealed in the larger one
            assert b2.failed
            assert b2.tree_failure_time <= b1.tree_failure_time
        if b1.failed or b2.failed:
            continue
        both_ok += 1
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            assert truncate(b2.trajectory.state_at(t), 1).nodes == \
                b1.trajectory.state_at(t).nodes
    assert both_ok > 40


def test_spacetime_distances_hand_case():
    trace = _trace(5, {
        (0, 1): [(0.5, 2.0)],
        (1, 2): [(0.2, 0.4)],
        (2, 3): [(1.5, 2.0)],
        (0, 4): [(0.0, 0.1)],
    })
    assert spacetime_distances(trace, 0, 2.0) == {0: 0, 1: 1, 4: 1}
    assert spacetime_distances(trace, 0, 0.3) == {0: 0, 4: 1}
    assert spacetime_distance(trace, 0, 2, 2.0) == math.inf
    with pytest.raises(ValueError):
        spacetime_distances(trace, 0, 3.0)


def test_spacetime_distances_need_multiple_sweeps():
    # the direct 0-1 edge opens late; routing through 2 lowers the arrival
    # at 1 enough to catch the short-lived 1-3 window
    trace = _trace(4, {
        (0, 1): [(1.0, 2.0)],
        (0, 2): [(0.0, 2.0)],
        (1, 2): [(0.0, 2.0)],
        (1, 3): [(0.5, 0.7)],
    })
    dist = spacetime_distances(trace, 0, 2.0)
    assert dist == {0: 0, 1: 1, 2: 1, 3: 3}
    reach = extract_component(trace, 0, 2.0)
    assert reach == {0: 0.0, 2: 0.0, 1: 0.0, 3: 0.5}


def test_extract_component_respects_time_bound():
    trace = _trace(3, {(0, 1): [(0.8, 2.0)], (1, 2): [(0.0, 0.5)]})
    assert extract_component(trace, 0, 0.5) == {0: 0.0}
    assert extract_component(trace, 0, 1.0) == {0: 0.0, 1: 0.8}
    assert extract_component(trace, 0, 2.0) == {0: 0.0, 1: 0.8}
