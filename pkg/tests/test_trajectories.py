import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hand_world
from navflywheel.trajectories import (
    STOP,
    Action,
    InvalidPath,
    actions_from_path,
    check_trajectory,
    make_trajectory,
    path_length,
    replay_actions,
    sample_trajectories,
)
from navflywheel.world import WorldGenConfig, generate_environment, hop_matrix


@pytest.fixture(scope="module")
def world():
    return generate_environment(WorldGenConfig(), 4)


def test_two_node_world_single_trajectory():
    env = generate_environment(WorldGenConfig(num_nodes=2, mean_degree=1), 7)
    trajs = sample_trajectories(env, 5, (1, 1), 0)
    assert sorted(t.nodes for t in trajs) == [(0, 1), (1, 0)]


def test_short_pool_is_reported(caplog):
    env = generate_environment(WorldGenConfig(num_nodes=2, mean_degree=1), 7)
    with caplog.at_level(logging.WARNING):
        trajs = sample_trajectories(env, 5, (1, 1), 0)
    assert len(trajs) == 2
    assert "only 2 of 5" in caplog.text


def test_sampling_is_deterministic(world):
    assert sample_trajectories(world, 100, (2, 5), 9) == sample_trajectories(world, 100, (2, 5), 9)


def test_hop_counts_in_range(world):
    hi = min(7, int(hop_matrix(world).max()))
    trajs = sample_trajectories(world, 200, (4, hi), 1)
    assert trajs
    assert all(4 <= t.num_steps <= hi for t in trajs)
    assert len({(t.start, t.goal) for t in trajs}) == len(trajs)


def test_single_node_path():
    env = hand_world([(0, 0), (0, 5)], [(0, 1)])
    assert actions_from_path(env, [0], 12.0) == ((12.0,), (STOP,))


def test_straight_path_has_no_turns():
    env = hand_world([(0, 0), (0, 5), (0, 10)], [(0, 1), (1, 2)])
    _, actions = actions_from_path(env, [0, 1, 2], 0.0)
    assert [a.kind for a in actions] == ["forward", "forward", "stop"]


def test_right_angle_gives_one_ninety_degree_turn():
    env = hand_world([(0, 0), (0, 5), (5, 5)], [(0, 1), (1, 2)])
    headings, actions = actions_from_path(env, [0, 1, 2], 0.0)
    turns = [a for a in actions if a.is_turn]
    assert turns == [Action("right", 90.0)]
    assert headings == (0.0, 0.0, 90.0)


def test_non_adjacent_path_rejected():
    env = hand_world([(0, 0), (0, 5), (5, 5)], [(0, 1), (1, 2)])
    with pytest.raises(InvalidPath):
        actions_from_path(env, [0, 2], 0.0)
    with pytest.raises(InvalidPath):
        path_length(env, [0, 2])


def test_path_length():
    env = hand_world([(0, 0), (0, 5), (3, 9)], [(0, 1), (1, 2)])
    assert path_length(env, [1]) == 0.0
    assert path_length(env, [0, 1]) == 5.0
    assert path_length(env, [0, 1, 2]) == pytest.approx(10.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 500), st.floats(0, 359.99))
def test_actions_replay_to_the_same_path(seed, h0):
    env = generate_environment(WorldGenConfig(), seed)
    for traj in sample_trajectories(env, 10, (1, 5), seed):
        assert replay_actions(env, traj.start, traj.headings[0], traj.actions) == list(traj.nodes)
        check_trajectory(env, traj)
        t2 = make_trajectory(env, traj.nodes, h0)
        assert replay_actions(env, t2.start, h0, t2.actions) == list(traj.nodes)


def test_token_round_trip():
    for a in (Action("left", 135.71234), Action("forward"), STOP):
        assert Action.from_token(a.to_token()) == a
