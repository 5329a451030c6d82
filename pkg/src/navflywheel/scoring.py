"""Pair records, pair scorers and the navigator-based filters."""

from __future__ import annotations

import hashlib
import logging
import math
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .generator import GeneratorParams, likelihood
from .lang import Instruction, Move, Stop, parse_clauses
from .nav_metrics import NavScores, score_episode
from .navigator import NavigatorParams, follow
from .text_metrics import TextScores
from .trajectories import Trajectory
from .world import Environment, observation

log = logging.getLogger(__name__)

SCORERS = ("navigator_ndtw", "navigator_spl", "random", "embedding_cosine", "generator_self")

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map; ``threads > 1`` runs on a thread pool."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def derive_seed(*parts: int | str) -> int:
    """Seed from a tuple of ints and strings, independent of call order."""
    ints = [p if isinstance(p, int) else stable_hash(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass(frozen=True)
class Provenance:
    kind: str  # "seed" or "generated"
    round: int | None = None
    decode: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("seed", "generated"):
            raise ValueError(f"unknown provenance {self.kind!r}")
        if self.kind == "generated" and (self.round is None or self.decode is None):
            raise ValueError("generated pairs need a round and a decode mode")

    def tag(self) -> str:
        return "seed" if self.kind == "seed" else f"generated:{self.round}:{self.decode}"

    @classmethod
    def from_tag(cls, tag: str) -> "Provenance":
        if tag == "seed":
            return cls("seed")
        kind, rnd, decode = tag.split(":")
        return cls(kind, int(rnd), decode)


SEED = Provenance("seed")


@dataclass(frozen=True)
class PairScores:
    navigator: str  # tag of the scoring navigator
    nav: NavScores
    text: TextScores | None = None


@dataclass(frozen=True)
class PairedSample:
    pair_id: str
    traj: Trajectory
    instr: Instruction
    provenance: Provenance
    scores: PairScores | None = None

    @property
    def env_id(self) -> str:
        return self.traj.env_id

    def with_scores(self, scores: PairScores) -> "PairedSample":
        return replace(self, scores=scores)


@dataclass(frozen=True)
class FilterThresholds:
    spl_exact: float = 1.0
    ndtw_min: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 < self.spl_exact <= 1.0:
            raise ValueError(f"spl_exact={self.spl_exact} outside (0, 1]")
        if not 0.0 <= self.ndtw_min < 1.0:
            raise ValueError(f"ndtw_min={self.ndtw_min} outside [0, 1)")


@dataclass(frozen=True)
class FilterSummary:
    name: str
    input_size: int
    kept_size: int
    spl_exact: float
    ndtw_min: float
    navigator: str


def navigator_tag(params: NavigatorParams) -> str:
    digest = hashlib.sha256(params.weights.tobytes()).hexdigest()[:12]
    return f"v{params.version}:{digest}"


# ---------------------------------------------------------------- scoring


def follow_pair(params: NavigatorParams, env: Environment, pair: PairedSample) -> NavScores:
    traj = pair.traj
    ep = follow(params, env, pair.instr, traj.start, traj.headings[0])
    return score_episode(env, traj, ep.followed)


def nav_scored(
    pool: Sequence[PairedSample], navigator: NavigatorParams, envs: Mapping[str, Environment], threads: int = 1
) -> list[PairedSample]:
    """Attach navigation scores, reusing those made by the same navigator."""
    tag = navigator_tag(navigator)

    def one(pair: PairedSample) -> PairedSample:
        if pair.scores is not None and pair.scores.navigator == tag:
            return pair
        return pair.with_scores(PairScores(tag, follow_pair(navigator, envs[pair.env_id], pair)))

    return parallel_map(one, pool, threads)


def landmark_bag(instr: Instruction) -> Counter:
    bag: Counter = Counter()
    for c in parse_clauses(instr):
        if isinstance(c, (Move, Stop)) and c.landmark is not None:
            bag[c.landmark] += 1
    return bag


def trajectory_bag(env: Environment, traj: Trajectory) -> Counter:
    bag: Counter = Counter()
    for node, h in zip(traj.nodes, traj.headings):
        for group in observation(env, node, h).visible:
            bag.update(group)
    return bag


def cosine(a: Counter, b: Counter) -> float:
    dot = sum(v * b.get(k, 0) for k, v in a.items())
    if dot == 0:
        return 0.0
    return dot / math.sqrt(sum(v * v for v in a.values()) * sum(v * v for v in b.values()))


def score_pair(
    scorer: str,
    models: tuple[NavigatorParams | None, GeneratorParams | None],
    env: Environment,
    pair: PairedSample,
    seed: int = 0,
) -> float:
    navigator, generator = models
    if scorer in ("navigator_ndtw", "navigator_spl"):
        if navigator is None:
            raise ValueError(f"scorer {scorer} needs navigator params")
        if pair.scores is not None and pair.scores.navigator == navigator_tag(navigator):
            nav = pair.scores.nav
        else:
            nav = follow_pair(navigator, env, pair)
        return nav.ndtw if scorer == "navigator_ndtw" else nav.spl
    if scorer == "random":
        return float(np.random.default_rng(derive_seed(seed, pair.pair_id)).uniform())
    if scorer == "embedding_cosine":
        return cosine(landmark_bag(pair.instr), trajectory_bag(env, pair.traj))
    if scorer == "generator_self":
        if generator is None:
            raise ValueError("scorer generator_self needs generator params")
        ll, n = likelihood(generator, env, pair.traj, pair.instr)
        return ll / n
    raise ValueError(f"unknown scorer {scorer!r}")


# ---------------------------------------------------------------- filters


def filter_generator_data(
    pool: Sequence[PairedSample],
    navigator: NavigatorParams,
    thresholds: FilterThresholds,
    envs: Mapping[str, Environment],
    threads: int = 1,
) -> tuple[list[PairedSample], FilterSummary]:
    """Keep the pairs the navigator follows along a shortest successful path."""
    scored = nav_scored(pool, navigator, envs, threads)
    kept = [p for p in scored if p.scores.nav.spl >= thresholds.spl_exact]
    summary = FilterSummary("generator", len(pool), len(kept), thresholds.spl_exact, thresholds.ndtw_min, navigator_tag(navigator))
    if not kept:
        log.warning("generator filter kept nothing out of %d pairs", len(pool))
    return kept, summary


def filter_navigator_data(
    pool: Sequence[PairedSample],
    navigator: NavigatorParams,
    thresholds: FilterThresholds,
    envs: Mapping[str, Environment],
    threads: int = 1,
) -> tuple[list[PairedSample], list[PairedSample], FilterSummary]:
    """Split the pool into (kept, rejected) at the nDTW threshold."""
    scored = nav_scored(pool, navigator, envs, threads)
    kept = [p for p in scored if p.scores.nav.ndtw >= thresholds.ndtw_min]
    rejected = [p for p in scored if p.scores.nav.ndtw < thresholds.ndtw_min]
    summary = FilterSummary("navigator", len(pool), len(kept), thresholds.spl_exact, thresholds.ndtw_min, navigator_tag(navigator))
    return kept, rejected, summary


def rank_and_take_top(
    pool: Sequence[PairedSample],
    scorer: str,
    models: tuple[NavigatorParams | None, GeneratorParams | None],
    q: int,
    seed: int,
    envs: Mapping[str, Environment],
    threads: int = 1,
) -> list[PairedSample]:
    """The ``q`` best pairs by descending score, ties by pair id."""
    if not 0 <= q <= len(pool):
        raise ValueError(f"q={q} outside [0, {len(pool)}]")
    scores = parallel_map(lambda p: score_pair(scorer, models, envs[p.env_id], p, seed), pool, threads)
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], pool[i].pair_id))
    return [pool[i] for i in order[:q]]


def ids(pool: Iterable[PairedSample]) -> set[str]:
    return {p.pair_id for p in pool}
