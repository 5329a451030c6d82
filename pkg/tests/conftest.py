import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from navflywheel.generator import GenTrainConfig, train_generator  # noqa: E402
from navflywheel.lang import oracle_annotate  # noqa: E402
from navflywheel.navigator import NavTrainConfig, train_navigator  # noqa: E402
from navflywheel.scoring import SEED, PairedSample  # noqa: E402
from navflywheel.trajectories import sample_trajectories  # noqa: E402
from navflywheel.world import Environment, Node, WorldGenConfig, generate_environment, hop_matrix  # noqa: E402

EMPTY8 = ((),) * 8


def hand_world(positions, edges, landmarks=None, env_id="hand", split="train") -> Environment:
    """Small hand-built world; every node gets landmark ``i`` due north unless given."""
    nodes = []
    for i, pos in enumerate(positions):
        lms = landmarks[i] if landmarks else tuple((i,) if s == 0 else () for s in range(8))
        nodes.append(Node(i, tuple(map(float, pos)), lms))
    env = Environment(env_id, split, tuple(nodes), frozenset((min(a, b), max(a, b)) for a, b in edges), 0)
    env.check()
    return env


@pytest.fixture(scope="session")
def fixture_env() -> Environment:
    return generate_environment(WorldGenConfig(), 11, "fix-000")


@pytest.fixture(scope="session")
def fixture_pairs(fixture_env):
    """150 zero-corruption pairs on the fixture world."""
    env = fixture_env
    hi = min(7, int(hop_matrix(env).max()))
    trajs = sample_trajectories(env, 150, (min(4, hi), hi), 5)
    return [PairedSample(f"{t.traj_id}#c", t, oracle_annotate(env, t), SEED) for t in trajs]


@pytest.fixture(scope="session")
def fixture_envs(fixture_env):
    return {fixture_env.env_id: fixture_env}


@pytest.fixture(scope="session")
def fixture_navigator(fixture_pairs, fixture_envs):
    """Navigator pretrained and fine-tuned on the first 50 fixture pairs."""
    train = fixture_pairs[:50]
    params, _ = train_navigator(train, train, None, NavTrainConfig(), 0, fixture_envs)
    return params


@pytest.fixture(scope="session")
def fixture_generator(fixture_pairs, fixture_envs):
    return train_generator(fixture_pairs[:100], None, GenTrainConfig(), 0, fixture_envs)
