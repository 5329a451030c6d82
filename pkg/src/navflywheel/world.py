"""Procedural landmark-annotated navigation graphs.

Headings are compass degrees: 0 is north (+y), angles grow clockwise.
Landmarks are bucketed into 8 absolute sectors of 45 degrees each; sector
``k`` is centred on bearing ``45 * k``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

NUM_SECTORS = 8
SECTOR_WIDTH = 360.0 / NUM_SECTORS
SPLITS = ("train", "val_seen", "val_unseen")


def norm_heading(deg: float) -> float:
    """Map an angle into [0, 360)."""
    h = math.fmod(deg, 360.0)
    if h < 0:
        h += 360.0
    if h >= 360.0:
        h = 0.0
    return h + 0.0


def norm_delta(deg: float) -> float:
    """Map an angle difference into (-180, 180]."""
    d = math.fmod(deg, 360.0)
    if d <= -180.0:
        d += 360.0
    elif d > 180.0:
        d -= 360.0
    return d + 0.0


def sector_of(deg: float) -> int:
    return int(math.floor((norm_heading(deg) + SECTOR_WIDTH / 2) / SECTOR_WIDTH)) % NUM_SECTORS


def bearing(p: tuple[float, float], q: tuple[float, float]) -> float:
    """Compass bearing from ``p`` to ``q``."""
    return norm_heading(math.degrees(math.atan2(q[0] - p[0], q[1] - p[1])))


@dataclass(frozen=True)
class WorldGenConfig:
    num_nodes: int = 30
    mean_degree: float = 4.0
    vocab_size: int = 40
    side: float = 30.0
    # probability that a sector holds landmarks, and that it holds two
    sector_fill: float = 0.6
    double_fill: float = 0.2
    min_separation: float = 1.5
    # extra edges closer than this angle to an existing edge are skipped
    min_edge_angle: float = 20.0

    def validate(self) -> None:
        n, d = self.num_nodes, self.mean_degree
        if n < 2:
            raise ValueError(f"num_nodes must be >= 2, got {n}")
        if n == 2:
            if d != 1:
                raise ValueError("a 2-node world has mean degree exactly 1")
        elif d < 2:
            raise ValueError(f"mean_degree {d} < 2 cannot keep {n} nodes connected")
        elif d > n - 1:
            raise ValueError(f"mean_degree {d} exceeds n - 1 = {n - 1}")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.side <= 0:
            raise ValueError("side must be positive")


@dataclass(frozen=True)
class Node:
    node_id: int
    position: tuple[float, float]
    # absolute sector -> sorted landmark ids; all 8 sectors present
    landmarks: tuple[tuple[int, ...], ...]

    def all_landmarks(self) -> set[int]:
        return {lm for group in self.landmarks for lm in group}


@dataclass
class Environment:
    env_id: str
    split: str
    nodes: tuple[Node, ...]
    edges: frozenset[tuple[int, int]]
    rng_seed: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def has_node(self, node_id: int) -> bool:
        return 0 <= node_id < len(self.nodes)

    def position(self, node_id: int) -> tuple[float, float]:
        return self.nodes[node_id].position

    def neighbors(self, node_id: int) -> tuple[int, ...]:
        adj = self._cache.get("adj")
        if adj is None:
            lists: list[list[int]] = [[] for _ in self.nodes]
            for a, b in self.edges:
                lists[a].append(b)
                lists[b].append(a)
            adj = tuple(tuple(sorted(x)) for x in lists)
            self._cache["adj"] = adj
        return adj[node_id]

    def adjacent(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def distance(self, a: int, b: int) -> float:
        pa, pb = self.nodes[a].position, self.nodes[b].position
        return math.hypot(pb[0] - pa[0], pb[1] - pa[1])

    def bearing(self, a: int, b: int) -> float:
        return bearing(self.nodes[a].position, self.nodes[b].position)

    def landmarks_at(self, node_id: int, sector: int) -> tuple[int, ...]:
        return self.nodes[node_id].landmarks[sector % NUM_SECTORS]

    def ahead(self, node_id: int, heading: float) -> tuple[int, ...]:
        """Landmarks in the sector straight ahead when facing ``heading``."""
        return self.landmarks_at(node_id, sector_of(heading))

    def flanking(self, node_id: int, heading: float) -> tuple[int, ...]:
        """Landmarks in the two sectors either side of straight ahead."""
        s = sector_of(heading)
        return tuple(sorted(set(self.landmarks_at(node_id, s - 1)) | set(self.landmarks_at(node_id, s + 1))))

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)

    def check(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise ValueError("node ids must be 0..n-1 in order")
        for a, b in self.edges:
            if a == b or not (self.has_node(a) and self.has_node(b)) or a > b:
                raise ValueError(f"bad edge {(a, b)}")
        if len({n.position for n in self.nodes}) != len(self.nodes):
            raise ValueError("node positions must be distinct")
        for n in self.nodes:
            if len(n.landmarks) != NUM_SECTORS:
                raise ValueError(f"node {n.node_id} must cover all {NUM_SECTORS} sectors")
            if not n.all_landmarks():
                raise ValueError(f"node {n.node_id} has no landmark")
        if not self.is_connected():
            raise ValueError("graph is not connected")


@dataclass(frozen=True)
class Observation:
    at_node: int
    heading: float
    # relative sector -> landmark ids; sector 0 is straight ahead
    visible: tuple[tuple[int, ...], ...]
    # (neighbor id, heading delta in (-180, 180], distance)
    candidates: tuple[tuple[int, float, float], ...]

    def sector_for_delta(self, delta: float) -> int:
        """Relative sector that contains a candidate at ``delta``."""
        return (sector_of(self.heading + delta) - sector_of(self.heading)) % NUM_SECTORS


class UnknownNode(KeyError):
    pass


def generate_environment(
    config: WorldGenConfig, seed: int, env_id: str | None = None, split: str = "train"
) -> Environment:
    """Sample a connected landmark world.

    Positions are uniform in a square with a minimum separation. The edge set
    is a Euclidean minimum spanning tree topped up with the shortest
    remaining pairs until the target edge count ``round(n * d / 2)`` is met.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.num_nodes
    pts: list[tuple[float, float]] = []
    tries = 0
    while len(pts) < n:
        x, y = rng.uniform(0.0, config.side, size=2)
        p = (round(float(x), 3), round(float(y), 3))
        tries += 1
        sep = config.min_separation if tries < 200 * n else 0.0
        if p in pts or any(math.hypot(p[0] - q[0], p[1] - q[1]) < sep for q in pts):
            continue
        pts.append(p)

    dist = np.array([[math.hypot(a[0] - b[0], a[1] - b[1]) for b in pts] for a in pts])

    # Prim's MST, ties by (length, ids)
    in_tree = [False] * n
    in_tree[0] = True
    edges: set[tuple[int, int]] = set()
    heap = [(dist[0, j], 0, j) for j in range(1, n)]
    heapq.heapify(heap)
    while len(edges) < n - 1:
        d, a, b = heapq.heappop(heap)
        if in_tree[b]:
            continue
        in_tree[b] = True
        edges.add((min(a, b), max(a, b)))
        for j in range(n):
            if not in_tree[j]:
                heapq.heappush(heap, (dist[b, j], b, j))

    target = max(n - 1, int(round(n * config.mean_degree / 2)))
    target = min(target, n * (n - 1) // 2)
    bearings: dict[int, list[float]] = {i: [] for i in range(n)}
    for a, b in edges:
        bearings[a].append(bearing(pts[a], pts[b]))
        bearings[b].append(bearing(pts[b], pts[a]))

    def too_close(node: int, brg: float) -> bool:
        return any(abs(norm_delta(brg - other)) < config.min_edge_angle for other in bearings[node])

    pairs = sorted((dist[a, b], a, b) for a in range(n) for b in range(a + 1, n) if (a, b) not in edges)
    for d, a, b in pairs:
        if len(edges) >= target:
            break
        ab, ba = bearing(pts[a], pts[b]), bearing(pts[b], pts[a])
        if too_close(a, ab) or too_close(b, ba):
            continue
        edges.add((a, b))
        bearings[a].append(ab)
        bearings[b].append(ba)

    nodes = []
    for i in range(n):
        sectors = []
        for _ in range(NUM_SECTORS):
            fill = rng.random() < config.sector_fill
            two = rng.random() < config.double_fill
            picks = rng.choice(config.vocab_size, size=2, replace=config.vocab_size < 2)
            if fill:
                chosen = {int(picks[0])} | ({int(picks[1])} if two else set())
            else:
                chosen = set()
            sectors.append(tuple(sorted(chosen)))
        if not any(sectors):
            s = int(rng.integers(NUM_SECTORS))
            sectors[s] = (int(rng.integers(config.vocab_size)),)
        nodes.append(Node(i, pts[i], tuple(sectors)))

    env = Environment(
        env_id=env_id if env_id is not None else f"{split}-{seed}",
        split=split,
        nodes=tuple(nodes),
        edges=frozenset(edges),
        rng_seed=seed,
    )
    env.check()
    return env


def observation(env: Environment, node: int, heading: float) -> Observation:
    if not env.has_node(node):
        raise UnknownNode(node)
    h = norm_heading(heading)
    base = sector_of(h)
    visible = tuple(env.landmarks_at(node, base + r) for r in range(NUM_SECTORS))
    cands = tuple(
        (v, norm_delta(env.bearing(node, v) - h), env.distance(node, v)) for v in env.neighbors(node)
    )
    return Observation(node, h, visible, cands)


def shortest_path(env: Environment, start: int, goal: int) -> list[int]:
    """Minimum-length path; equal lengths resolve to the smallest id sequence."""
    for x in (start, goal):
        if not env.has_node(x):
            raise UnknownNode(x)
    table = env._cache.get(("sp", start))
    if table is None:
        table = _dijkstra(env, start)
        env._cache[("sp", start)] = table
    return list(table[goal][1])


def shortest_distance(env: Environment, start: int, goal: int) -> float:
    shortest_path(env, start, goal)
    return env._cache[("sp", start)][goal][0]


def _dijkstra(env: Environment, start: int) -> dict[int, tuple[float, tuple[int, ...]]]:
    done: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (start,))]
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done[u] = (d, path)
        for v in env.neighbors(u):
            if v not in done:
                heapq.heappush(heap, (d + env.distance(u, v), path + (v,)))
    return done


def hop_matrix(env: Environment) -> np.ndarray:
    """Hop counts of the metric shortest paths between all node pairs."""
    hops = env._cache.get("hops")
    if hops is None:
        n = env.num_nodes
        hops = np.zeros((n, n), dtype=int)
        for a in range(n):
            for b in range(n):
                hops[a, b] = len(shortest_path(env, a, b)) - 1
        env._cache["hops"] = hops
    return hops

