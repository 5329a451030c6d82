"""Trajectory pools and node-path / action conversion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .world import Environment, hop_matrix, norm_delta, norm_heading, shortest_path

log = logging.getLogger(__name__)

TURN_THRESHOLD = 30.0
DEFAULT_HOP_RANGE = (4, 7)


class InvalidPath(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    """One step of a trajectory.

    ``left``/``right`` rotate by ``degrees`` and then move forward along the
    new heading; ``forward`` moves without an explicit rotation.
    """

    kind: str
    degrees: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("forward", "left", "right", "stop"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.is_turn and not 0.0 < self.degrees <= 180.0:
            raise ValueError(f"turn magnitude {self.degrees} outside (0, 180]")

    @property
    def is_turn(self) -> bool:
        return self.kind in ("left", "right")

    @property
    def signed(self) -> float:
        """Clockwise rotation in degrees (left turns are negative)."""
        if self.kind == "left":
            return -self.degrees
        if self.kind == "right":
            return self.degrees
        return 0.0

    def to_token(self) -> str:
        if self.is_turn:
            return f"{self.kind}:{self.degrees!r}"
        return self.kind

    @classmethod
    def from_token(cls, tok: str) -> "Action":
        kind, _, deg = tok.partition(":")
        return cls(kind, float(deg) if deg else 0.0)


FORWARD = Action("forward")
STOP = Action("stop")


@dataclass(frozen=True)
class Trajectory:
    traj_id: str
    env_id: str
    nodes: tuple[int, ...]
    headings: tuple[float, ...]
    actions: tuple[Action, ...]

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("trajectory needs at least one node")
        if not (len(self.nodes) == len(self.headings) == len(self.actions)):
            raise ValueError("nodes, headings and actions must have equal length")
        if self.actions[-1].kind != "stop" or any(a.kind == "stop" for a in self.actions[:-1]):
            raise ValueError("stop must be the final action and only the final action")

    @property
    def num_steps(self) -> int:
        """Number of edges traversed."""
        return len(self.nodes) - 1

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def goal(self) -> int:
        return self.nodes[-1]


def _closest_neighbor(env: Environment, node: int, heading: float) -> int:
    return min(env.neighbors(node), key=lambda v: (abs(norm_delta(env.bearing(node, v) - heading)), v))


def actions_from_path(
    env: Environment,
    nodes: Sequence[int],
    initial_heading: float,
    turn_threshold: float = TURN_THRESHOLD,
) -> tuple[tuple[float, ...], tuple[Action, ...]]:
    """Convert a node path into per-node headings and actions.

    A turn is emitted when the bearing to the next node deviates from the
    current heading by more than ``turn_threshold``, or when moving forward
    would not pick the intended neighbor (the replay picks the neighbor
    closest to the heading).
    """
    h = norm_heading(initial_heading)
    headings = [h]
    actions: list[Action] = []
    for u, v in zip(nodes, nodes[1:]):
        if not env.adjacent(u, v):
            raise InvalidPath(f"nodes {u} and {v} are not adjacent in {env.env_id}")
        b = env.bearing(u, v)
        delta = norm_delta(b - h)
        if abs(delta) > turn_threshold or _closest_neighbor(env, u, h) != v:
            if delta == 0.0:
                raise InvalidPath(f"cannot disambiguate collinear neighbors at node {u}")
            actions.append(Action("right" if delta > 0 else "left", abs(delta)))
        else:
            actions.append(FORWARD)
        h = b
        headings.append(h)
    actions.append(STOP)
    return tuple(headings), tuple(actions)


def replay_actions(env: Environment, start: int, initial_heading: float, actions: Sequence[Action]) -> list[int]:
    """Execute an action sequence and return the visited nodes."""
    node, h = start, norm_heading(initial_heading)
    out = [node]
    for act in actions:
        if act.kind == "stop":
            break
        h = norm_heading(h + act.signed)
        nxt = _closest_neighbor(env, node, h)
        h = env.bearing(node, nxt)
        node = nxt
        out.append(node)
    return out


def path_length(env: Environment, nodes: Sequence[int]) -> float:
    total = 0.0
    for u, v in zip(nodes, nodes[1:]):
        if not env.adjacent(u, v):
            raise InvalidPath(f"nodes {u} and {v} are not adjacent in {env.env_id}")
        total += env.distance(u, v)
    return total


def make_trajectory(env: Environment, nodes: Sequence[int], initial_heading: float, traj_id: str | None = None) -> Trajectory:
    headings, actions = actions_from_path(env, nodes, initial_heading)
    if traj_id is None:
        traj_id = f"{env.env_id}:{nodes[0]}-{nodes[-1]}"
    return Trajectory(traj_id, env.env_id, tuple(nodes), headings, actions)


def sample_trajectories(
    env: Environment,
    count: int,
    hop_range: tuple[int, int] = DEFAULT_HOP_RANGE,
    seed: int = 0,
    exclude: set[tuple[int, int]] | None = None,
) -> list[Trajectory]:
    """Shortest-path trajectories between distinct (start, goal) pairs.

    May return fewer than ``count`` when the world has too few eligible
    pairs; a warning is logged and callers compare the length themselves.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = hop_range
    hops = hop_matrix(env)
    if hi > hops.max():
        raise ValueError(f"max hops {hi} exceeds the diameter {hops.max()} of {env.env_id}")
    exclude = exclude or set()
    pairs = [
        (a, b)
        for a in range(env.num_nodes)
        for b in range(env.num_nodes)
        if lo <= hops[a, b] <= hi and (a, b) not in exclude
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    starts = rng.uniform(0.0, 360.0, size=len(pairs))
    out = []
    for k in order[:count]:
        a, b = pairs[k]
        h0 = round(float(starts[k]), 2) % 360.0
        out.append(make_trajectory(env, shortest_path(env, a, b), h0))
    if len(out) < count:
        log.warning("%s: only %d of %d trajectories in hop range %s", env.env_id, len(out), count, hop_range)
    return out


def trajectory_points(env: Environment, traj: Trajectory) -> list[tuple[float, float]]:
    return [env.position(n) for n in traj.nodes]


def check_trajectory(env: Environment, traj: Trajectory) -> None:
    """Raise if ``traj`` is not a valid trajectory of ``env``."""
    if traj.env_id != env.env_id:
        raise InvalidPath(f"trajectory {traj.traj_id} belongs to {traj.env_id}, not {env.env_id}")
    for n in traj.nodes:
        if not env.has_node(n):
            raise InvalidPath(f"unknown node {n}")
    headings, actions = actions_from_path(env, traj.nodes, traj.headings[0])
    if actions != traj.actions or any(not math.isclose(a, b, abs_tol=1e-9) for a, b in zip(headings, traj.headings)):
        raise InvalidPath(f"trajectory {traj.traj_id} actions do not match its path")
