"""Linear softmax instruction follower.

At every node the agent scores each neighbor plus a stop option with a dot
product between hand-built features and a weight vector, then acts greedily.
A monotone cursor tracks which instruction clause is being executed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .lang import Clause, Instruction, Move, Stop, Turn, parse_clauses
from .trajectories import Trajectory, actions_from_path
from .world import NUM_SECTORS, Environment, Observation, observation, sector_of

log = logging.getLogger(__name__)

TURN_TYPES = ("none", "slight_left", "left", "around", "slight_right", "right")
STALL_LIMIT = 3
MAX_STEPS = 15
AROUND_MIN = 120.0


def _feature_names() -> tuple[str, ...]:
    names = ["past_ahead", "past_side", "toward_ahead", "toward_side", "match_next"]
    names += [f"turn_{t}_s{r}" for t in TURN_TYPES for r in range(NUM_SECTORS)]
    names += ["distance", "backtrack", "visited", "overrun"]
    names += ["stop_bias", "stop_exhausted", "stop_landmark_here", "stop_landmark_unseen", "stop_pending"]
    return tuple(names)


FEATURE_NAMES = _feature_names()
_IDX = {n: i for i, n in enumerate(FEATURE_NAMES)}
_TURN0 = _IDX["turn_none_s0"]
NUM_FEATURES = len(FEATURE_NAMES)


@dataclass
class NavigatorParams:
    weights: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    version: int = 0

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.feature_names),):
            raise ValueError("weights and feature_names differ in length")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("navigator weights must be finite")

    @classmethod
    def fresh(cls) -> "NavigatorParams":
        return cls(np.zeros(NUM_FEATURES))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, NavigatorParams)
            and self.feature_names == other.feature_names
            and self.version == other.version
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class NavTrainConfig:
    pretrain_epochs: int = 150
    finetune_epochs: int = 40
    lr: float = 2.0
    l2: float = 1e-4


class CursorState(NamedTuple):
    index: int = 0
    stalled: int = 0
    prev_node: int | None = None
    visited: frozenset = frozenset()


@dataclass(frozen=True)
class EpisodeResult:
    followed: Trajectory
    terminated: str
    action_log_likelihoods: tuple[float, ...] = field(default=())


# ---------------------------------------------------------------- cursor


def _pending(clauses: Sequence[Clause], i: int) -> tuple[Turn | None, Move | None, int, Move | None, int]:
    """Pending (turn, move, move index, lookahead move, lookahead index)."""
    turn = clauses[i] if isinstance(clauses[i], Turn) else None
    j = i + 1 if turn is not None else i
    move = clauses[j] if j < len(clauses) and isinstance(clauses[j], Move) else None
    k = j + 1 if move is not None else j
    if k < len(clauses) and isinstance(clauses[k], Turn):
        k += 1
    nxt = clauses[k] if k < len(clauses) and isinstance(clauses[k], Move) else None
    return turn, move, j, nxt, k


def turn_matches(turn: Turn, delta: float) -> bool:
    if turn.direction == "around":
        return abs(delta) >= AROUND_MIN
    return delta < 0 if turn.direction == "left" else delta > 0


def turn_type(turn: Turn | None) -> int:
    if turn is None:
        return 0
    if turn.direction == "around":
        return 3
    base = 1 if turn.direction == "left" else 4
    return base if turn.magnitude == "slight" else base + 1


def _seen(lm: int, groups: Sequence[Sequence[int]]) -> bool:
    return any(lm in g for g in groups)


def advance(
    clauses: Sequence[Clause], state: CursorState, obs: Observation, choice: int
) -> CursorState:
    """Cursor update after moving to candidate ``choice`` of ``obs``."""
    v, delta, _ = obs.candidates[choice]
    i = state.index
    visited = state.visited | {obs.at_node}
    if isinstance(clauses[i], Stop):
        return CursorState(i, 0, obs.at_node, visited)
    r = obs.sector_for_delta(delta)
    ahead = obs.visible[r]
    near = (ahead, obs.visible[(r - 1) % NUM_SECTORS], obs.visible[(r + 1) % NUM_SECTORS])
    turn, move, j, nxt, k = _pending(clauses, i)
    new = i
    if turn is not None:
        if turn_matches(turn, delta):
            new = i + 1
            if move is not None and _seen(move.landmark, near):
                new = j + 1
        elif move is not None and _seen(move.landmark, near):
            new = j + 1
    elif move is not None:
        if _seen(move.landmark, near):
            new = j + 1
        elif nxt is not None and _seen(nxt.landmark, near):
            new = k + 1
    if new != i:
        return CursorState(new, 0, obs.at_node, visited)
    if state.stalled + 1 >= STALL_LIMIT:
        return CursorState(min(i + 1, len(clauses) - 1), 0, obs.at_node, visited)
    return CursorState(i, state.stalled + 1, obs.at_node, visited)


# ---------------------------------------------------------------- features


def _option_entries(clauses: Sequence[Clause], state: CursorState, obs: Observation) -> list[list[tuple[int, float]]]:
    """Sparse feature rows: stop option first, then candidates in order."""
    i = state.index
    cur = clauses[i]
    rows: list[list[tuple[int, float]]] = []
    stop_row = [(_IDX["stop_bias"], 1.0)]
    if isinstance(cur, Stop):
        stop_row.append((_IDX["stop_exhausted"], 1.0))
        if cur.landmark is not None:
            here = _seen(cur.landmark, obs.visible)
            stop_row.append((_IDX["stop_landmark_here" if here else "stop_landmark_unseen"], 1.0))
        turn = move = nxt = None
    else:
        pending = sum(1 for c in clauses[i:] if not isinstance(c, Stop))
        stop_row.append((_IDX["stop_pending"], min(pending, 3) / 3.0))
        turn, move, _, nxt, _ = _pending(clauses, i)
    rows.append(stop_row)
    tt = turn_type(turn) * NUM_SECTORS
    for v, delta, dist in obs.candidates:
        r = obs.sector_for_delta(delta)
        ahead = obs.visible[r]
        side = (obs.visible[(r - 1) % NUM_SECTORS], obs.visible[(r + 1) % NUM_SECTORS])
        row = [(_TURN0 + tt + sector_of(delta), 1.0), (_IDX["distance"], dist / 10.0)]
        if move is not None:
            verb = "toward" if move.verb == "toward" else "past"
            if move.landmark in ahead:
                row.append((_IDX[f"{verb}_ahead"], 1.0))
            elif _seen(move.landmark, side):
                row.append((_IDX[f"{verb}_side"], 1.0))
        if nxt is not None and (nxt.landmark in ahead or _seen(nxt.landmark, side)):
            row.append((_IDX["match_next"], 1.0))
        if v == state.prev_node:
            row.append((_IDX["backtrack"], 1.0))
        if v in state.visited:
            row.append((_IDX["visited"], 1.0))
        if isinstance(cur, Stop):
            row.append((_IDX["overrun"], 1.0))  # moving with nothing left to do
        rows.append(row)
    return rows


def extract_features(
    instr_state: tuple[Sequence[Clause], int | CursorState], obs: Observation, candidate: int | None
) -> np.ndarray:
    """Dense feature vector for one option; ``candidate=None`` is stop."""
    clauses, cursor = instr_state
    state = cursor if isinstance(cursor, CursorState) else CursorState(cursor)
    if not 0 <= state.index < len(clauses):
        raise IndexError(f"cursor {state.index} outside {len(clauses)} clauses")
    rows = _option_entries(clauses, state, obs)
    vec = np.zeros(NUM_FEATURES)
    for j, val in rows[0 if candidate is None else candidate + 1]:
        vec[j] += val
    return vec


# ---------------------------------------------------------------- episodes


def _log_softmax(scores: list[float]) -> list[float]:
    m = max(scores)
    z = m + math.log(sum(math.exp(s - m) for s in scores))
    return [s - z for s in scores]


def follow(
    params: NavigatorParams,
    env: Environment,
    instr: Instruction,
    start: int,
    start_heading: float,
    max_steps: int = MAX_STEPS,
    traj_id: str | None = None,
) -> EpisodeResult:
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if not env.has_node(start):
        raise KeyError(start)
    clauses = parse_clauses(instr)
    w = params.weights
    state = CursorState(0, 0, None, frozenset())
    node, h = start, start_heading
    nodes = [start]
    lls: list[float] = []
    terminated = "max_steps"
    for _ in range(max_steps):
        obs = observation(env, node, h)
        rows = _option_entries(clauses, state, obs)
        scores = [sum(w[j] * x for j, x in row) for row in rows]
        # first maximum wins: stop, then neighbors by ascending id
        best = max(range(len(scores)), key=lambda o: (scores[o], -o))
        lls.append(_log_softmax(scores)[best])
        if best == 0:
            terminated = "stopped"
            break
        cand = best - 1
        state = advance(clauses, state, obs, cand)
        nxt = obs.candidates[cand][0]
        h = env.bearing(node, nxt)
        node = nxt
        nodes.append(node)
    headings, actions = actions_from_path(env, nodes, start_heading)
    traj = Trajectory(traj_id or f"{env.env_id}:followed", env.env_id, tuple(nodes), headings, actions)
    return EpisodeResult(traj, terminated, tuple(lls))


# ---------------------------------------------------------------- training


class Decisions(NamedTuple):
    x: sparse.csr_matrix  # one row per option
    starts: np.ndarray  # first option row of each decision
    target: np.ndarray  # absolute row of the teacher option


def teacher_rows(env: Environment, instr: Instruction, traj: Trajectory) -> tuple[list[list[tuple[int, float]]], list[int]]:
    """Option rows and per-decision (first row, teacher row) under teacher forcing."""
    clauses = parse_clauses(instr)
    state = CursorState(0, 0, None, frozenset())
    rows: list[list[tuple[int, float]]] = []
    marks: list[int] = []
    for i, node in enumerate(traj.nodes):
        obs = observation(env, node, traj.headings[i])
        opts = _option_entries(clauses, state, obs)
        first = len(rows)
        rows.extend(opts)
        if i == len(traj.nodes) - 1:
            marks.extend((first, first))
            break
        cand = [c[0] for c in obs.candidates].index(traj.nodes[i + 1])
        marks.extend((first, first + 1 + cand))
        state = advance(clauses, state, obs, cand)
    return rows, marks


def build_decisions(pairs: Sequence, envs: Mapping[str, Environment]) -> Decisions:
    data: list[float] = []
    cols: list[int] = []
    indptr = [0]
    starts: list[int] = []
    target: list[int] = []
    offset = 0
    for pair in pairs:
        rows, marks = teacher_rows(envs[pair.traj.env_id], pair.instr, pair.traj)
        for row in rows:
            for j, x in row:
                cols.append(j)
                data.append(x)
            indptr.append(len(cols))
        starts.extend(offset + m for m in marks[0::2])
        target.extend(offset + m for m in marks[1::2])
        offset += len(rows)
    x = sparse.csr_matrix((np.array(data), np.array(cols, dtype=np.int64), np.array(indptr)), shape=(offset, NUM_FEATURES))
    return Decisions(x, np.array(starts, dtype=np.int64), np.array(target, dtype=np.int64))


def _loss_grad(w: np.ndarray, dec: Decisions, l2: float) -> tuple[float, np.ndarray]:
    s = dec.x @ w
    seg_max = np.maximum.reduceat(s, dec.starts)
    counts = np.diff(np.append(dec.starts, len(s)))
    shifted = s - np.repeat(seg_max, counts)
    e = np.exp(shifted)
    z = np.add.reduceat(e, dec.starts)
    logz = np.log(z)
    n = len(dec.starts)
    loss = float(np.sum(logz - shifted[dec.target]) / n + 0.5 * l2 * w @ w)
    p = e / np.repeat(z, counts)
    p[dec.target] -= 1.0
    grad = dec.x.T @ p / n + l2 * w
    return loss, grad


def training_loss(params: NavigatorParams, pairs: Sequence, envs: Mapping[str, Environment], l2: float = 0.0) -> float:
    return _loss_grad(params.weights, build_decisions(pairs, envs), l2)[0]


def gradient_descent(
    w0: np.ndarray, dec: Decisions, epochs: int, lr: float, l2: float
) -> tuple[np.ndarray, list[float]]:
    """Full-batch descent; the step halves until the loss does not rise."""
    w = w0.copy()
    loss, grad = _loss_grad(w, dec, l2)
    curve = [loss]
    step = lr
    for _ in range(epochs):
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite navigator loss {loss} at epoch {len(curve) - 1}")
        for _ in range(40):
            cand = w - step * grad
            new_loss, new_grad = _loss_grad(cand, dec, l2)
            if math.isfinite(new_loss) and new_loss <= loss:
                break
            step *= 0.5
        else:
            break
        w, loss, grad = cand, new_loss, new_grad
        curve.append(loss)
    return w, curve


def train_navigator(
    pretrain: Sequence,
    finetune: Sequence,
    init: NavigatorParams | None,
    hyper: NavTrainConfig,
    seed: int,
    envs: Mapping[str, Environment],
    version: int | None = None,
) -> tuple[NavigatorParams, dict[str, list[float]]]:
    """Pool pretraining followed by fine-tuning, both on teacher actions.

    Full-batch descent is deterministic, so ``seed`` only labels the run.
    Returns the params and the loss curve of each stage.
    """
    if not pretrain and not finetune:
        raise ValueError("navigator training needs data")
    params = init if init is not None else NavigatorParams.fresh()
    w = params.weights
    curves: dict[str, list[float]] = {}
    for name, pool, epochs in (("pretrain", pretrain, hyper.pretrain_epochs), ("finetune", finetune, hyper.finetune_epochs)):
        if not pool or epochs == 0:
            continue
        dec = build_decisions(pool, envs)
        w, curves[name] = gradient_descent(w, dec, epochs, hyper.lr, hyper.l2)
        log.debug("navigator %s seed=%d loss %.4f -> %.4f", name, seed, curves[name][0], curves[name][-1])
    return replace(params, weights=w, version=params.version if version is None else version), curves
