import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hand_world
from navflywheel.datastore import env_record
from navflywheel.world import (
    NUM_SECTORS,
    UnknownNode,
    WorldGenConfig,
    generate_environment,
    hop_matrix,
    norm_delta,
    norm_heading,
    observation,
    sector_of,
    shortest_distance,
    shortest_path,
)


def test_two_node_world_has_one_edge():
    env = generate_environment(WorldGenConfig(num_nodes=2, mean_degree=1), 7)
    assert env.num_nodes == 2
    assert env.edges == frozenset({(0, 1)})


@pytest.mark.parametrize("n, d", [(30, 1.5), (5, 0), (2, 2), (1, 1), (10, 12)])
def test_rejects_configs_that_cannot_connect(n, d):
    with pytest.raises(ValueError):
        generate_environment(WorldGenConfig(num_nodes=n, mean_degree=d), 0)


def test_generation_is_deterministic():
    a = generate_environment(WorldGenConfig(), 1)
    b = generate_environment(WorldGenConfig(), 1)
    assert env_record(a) == env_record(b)


def test_seeds_give_different_positions():
    a = generate_environment(WorldGenConfig(), 1)
    b = generate_environment(WorldGenConfig(), 2)
    assert sorted(n.position for n in a.nodes) != sorted(n.position for n in b.nodes)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_worlds_are_connected_with_target_degree(seed):
    cfg = WorldGenConfig()
    env = generate_environment(cfg, seed)
    assert env.is_connected()
    assert len(env.edges) <= round(cfg.num_nodes * cfg.mean_degree / 2)
    assert len(env.edges) >= cfg.num_nodes - 1
    assert all(env.nodes[i].all_landmarks() for i in range(env.num_nodes))


def test_heading_normalisation():
    env = generate_environment(WorldGenConfig(), 3)
    assert observation(env, 4, 0.0) == observation(env, 4, 360.0)
    assert norm_heading(-90.0) == 270.0
    assert norm_delta(270.0) == -90.0
    assert norm_delta(-180.0) == 180.0


@pytest.mark.parametrize("deg, sector", [(0, 0), (22.4, 0), (22.5, 1), (-22.5, 0), (-22.6, 7), (180, 4), (359.9, 0)])
def test_sector_boundaries(deg, sector):
    assert sector_of(deg) == sector


def test_candidate_count_matches_degree():
    env = hand_world([(0, 0), (0, 5), (5, 0), (-5, 0)], [(0, 1), (0, 2), (0, 3)])
    obs = observation(env, 0, 0.0)
    assert len(obs.candidates) == 3
    assert sorted(c[0] for c in obs.candidates) == [1, 2, 3]


def test_north_landmark_seen_on_the_left_when_facing_east():
    # landmark 9 sits due north of node 0 only
    lms = [tuple((9,) if s == 0 else () for s in range(8)), tuple((1,) if s == 0 else () for s in range(8))]
    env = hand_world([(0, 0), (0, 5)], [(0, 1)], landmarks=lms)
    obs = observation(env, 0, 90.0)
    assert obs.visible[6] == (9,)  # relative sector 6 is 90 degrees left
    assert [r for r in range(NUM_SECTORS) if obs.visible[r]] == [6]
    assert obs.sector_for_delta(-90.0) == 6


def test_unknown_node_raises():
    env = hand_world([(0, 0), (0, 5)], [(0, 1)])
    with pytest.raises(UnknownNode):
        observation(env, 7, 0.0)


def test_shortest_path_trivial_cases():
    env = hand_world([(0, 0), (0, 5)], [(0, 1)])
    assert shortest_path(env, 1, 1) == [1]
    assert shortest_path(env, 0, 1) == [0, 1]


def _simple_paths(env, a, b, seen=()):
    if a == b:
        yield [b]
        return
    for v in env.neighbors(a):
        if v not in seen:
            for rest in _simple_paths(env, v, b, seen + (a,)):
                yield [a] + rest


def _length(env, path):
    return sum(env.distance(u, v) for u, v in zip(path, path[1:]))


def test_four_cycle_takes_the_cheaper_arc():
    env = hand_world([(0, 0), (0, 4), (3, 4), (6, 0)], [(0, 1), (1, 2), (2, 3), (3, 0)])
    best = min(_simple_paths(env, 0, 2), key=lambda p: (_length(env, p), p))
    assert best == [0, 1, 2]
    assert shortest_path(env, 0, 2) == best
    assert shortest_distance(env, 0, 2) == pytest.approx(7.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_dijkstra_matches_enumeration_on_small_worlds(seed):
    env = generate_environment(WorldGenConfig(num_nodes=7, mean_degree=3), seed)
    for a, b in itertools.product(range(7), repeat=2):
        best = min(_simple_paths(env, a, b), key=lambda p: (round(_length(env, p), 9), p))
        assert math.isclose(shortest_distance(env, a, b), _length(env, best), abs_tol=1e-9)
        assert len(shortest_path(env, a, b)) - 1 >= hop_matrix(env)[a, b]
