"""Path-fidelity metrics: NE, SR, OSR, SPL, DTW, nDTW, sDTW."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .trajectories import Trajectory, path_length
from .world import Environment, shortest_distance

SUCCESS_RADIUS = 3.0

Point = tuple[float, float]


@dataclass(frozen=True)
class NavScores:
    ne: float
    sr: float
    osr: float
    spl: float
    dtw: float
    ndtw: float
    sdtw: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def dtw(ref: Sequence[Point], query: Sequence[Point]) -> float:
    """Dynamic time warping cost with Euclidean point distance."""
    if len(ref) == 0 or len(query) == 0:
        raise ValueError("dtw needs two non-empty sequences")
    inf = math.inf
    prev = [0.0] + [inf] * len(query)
    for p in ref:
        cur = [inf] * (len(query) + 1)
        for j, q in enumerate(query, 1):
            cur[j] = math.dist(p, q) + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return prev[-1]


def ndtw(ref: Sequence[Point], query: Sequence[Point], d_th: float = SUCCESS_RADIUS) -> float:
    return math.exp(-dtw(ref, query) / (len(ref) * d_th))


def score_episode(
    env: Environment, reference: Trajectory, followed: Trajectory, d_th: float = SUCCESS_RADIUS
) -> NavScores:
    if reference.env_id != env.env_id or followed.env_id != env.env_id:
        raise ValueError(
            f"episode mixes environments: {reference.env_id}, {followed.env_id} vs {env.env_id}"
        )
    ref_pts = [env.position(n) for n in reference.nodes]
    fol_pts = [env.position(n) for n in followed.nodes]
    goal = ref_pts[-1]
    ne = math.dist(fol_pts[-1], goal)
    sr = 1.0 if ne <= d_th else 0.0
    osr = 1.0 if min(math.dist(p, goal) for p in fol_pts) <= d_th else 0.0
    # l from the environment, never from the record
    l = shortest_distance(env, reference.start, reference.goal)
    p = path_length(env, followed.nodes)
    spl = sr if l == 0.0 else sr * l / max(p, l)
    d = dtw(ref_pts, fol_pts)
    nd = math.exp(-d / (len(ref_pts) * d_th))
    return NavScores(ne=ne, sr=sr, osr=osr, spl=spl, dtw=d, ndtw=nd, sdtw=sr * nd)


def mean_scores(scores: Sequence[NavScores]) -> dict[str, float]:
    if not scores:
        raise ValueError("no scores to average")
    keys = NavScores.__dataclass_fields__.keys()
    return {k: float(np.mean([getattr(s, k) for s in scores])) for k in keys}
