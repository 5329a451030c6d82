"""Trajectory-to-instruction generator.

Each trajectory step emits a short *step template*: a tuple of abstract
clauses such as ``("T:left:slight", "M:past:ahead")``. Templates refer to
landmarks by slot (``ahead``, ``adj``) instead of by id, so one table serves
every world. Template probabilities are conditioned on a fine step context
(action kind, last-segment flag, which view sectors are non-empty) and backed
off to a coarse context (action kind, last flag, whether the ahead and
adjacent slots can be filled). Surface forms come from a per-landmark naming
distribution.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .lang import (
    DEFAULT_VOCAB,
    STOP_SEARCH,
    Clause,
    Instruction,
    Move,
    Stop,
    Turn,
    decode_encoding,
    encode_trajectory,
    parse_clauses,
    render,
    turn_for_action,
)
from .trajectories import Action, Trajectory
from .world import NUM_SECTORS, Environment

SLOT_OF_VERB = {"past": "ahead", "to": "ahead", "toward": "adj"}
# probability factor for a template the decoder could not have produced
UNFILLABLE_PENALTY = 1e-3
EMPTY: tuple[str, ...] = ()
BARE_STOP = ("S:none",)


@dataclass(frozen=True)
class GenTrainConfig:
    alpha: float = 0.1  # additive smoothing, in units of a mean coarse context
    kappa: float = 0.5  # backoff strength, in units of a mean fine context
    encoding: str = "interleaved"


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"
    k: int = 1
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("greedy", "top_k"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def top_k(cls, k: int, seed: int, temperature: float = 1.0) -> "DecodeConfig":
        return cls("top_k", k, temperature, seed)


GREEDY = DecodeConfig()


# ---------------------------------------------------------------- step views


class StepView(NamedTuple):
    kind: str  # action kind as seen through the encoding
    last: bool  # final movement step
    final: bool  # the goal node
    sig: int  # bitmask of non-empty relative sectors
    ahead: tuple[int, ...]
    adj: tuple[int, ...]
    stop_lm: int | None

    @property
    def fine(self) -> tuple:
        return (self.kind, self.last, self.sig)

    @property
    def coarse(self) -> tuple:
        return (self.kind, self.last, bool(self.ahead), bool(self.adj))


def action_kind(action: Action | None) -> str:
    if action is None:
        return "unk"
    if action.kind == "stop":
        return "end"
    if action.kind == "forward":
        return "fwd"
    turn = turn_for_action(action)
    if turn.direction == "around":
        return "around"
    return f"slight_{turn.direction}" if turn.magnitude == "slight" else turn.direction


def step_views(env: Environment, traj: Trajectory, encoding: str = "interleaved") -> list[StepView]:
    """Per-step context read back from the trajectory encoding (cached)."""
    key = ("views", traj, encoding)
    hit = env._cache.get(key)
    if hit is None:
        hit = env._cache[key] = _step_views(env, traj, encoding)
    return hit


def _step_views(env: Environment, traj: Trajectory, encoding: str) -> list[StepView]:
    steps = decode_encoding(encode_trajectory(env, traj, encoding))
    k = len(steps) - 1
    out = []
    for i, st in enumerate(steps):
        vis = st.visible
        final = i == k
        kind = "end" if final else action_kind(st.action)
        sig = sum(1 << r for r in range(NUM_SECTORS) if vis[r])
        adj = tuple(sorted(set(vis[1]) | set(vis[NUM_SECTORS - 1])))
        stop_lm = next((vis[r][0] for r in STOP_SEARCH if vis[r]), None)
        out.append(StepView(kind, i == k - 1, final, sig, vis[0], adj, stop_lm))
    return out


# ---------------------------------------------------------------- alignment


def _slot(lm: int, view: StepView) -> str:
    if view.final:
        return "off"
    if lm in view.ahead:
        return "ahead"
    if lm in view.adj:
        return "adj"
    return "off"


def clause_cost(c: Clause, i: int, views: Sequence[StepView], actions: Sequence[Action]) -> float:
    """Incompatibility of clause ``c`` with step ``i`` (inf where illegal)."""
    final = i == len(views) - 1
    if isinstance(c, Stop):
        return 0.0 if final else math.inf
    if isinstance(c, Turn):
        act = actions[i]
        return 0.0 if act.is_turn and turn_for_action(act).direction == c.direction else 1.0
    slot = _slot(c.landmark, views[i])
    if slot == "off":
        return 1.0
    return 0.0 if slot == SLOT_OF_VERB[c.verb] else 0.5


def _extra_cost(c: Clause, has_turn: bool, has_move: bool) -> float:
    """Penalty for placing ``c`` on a step that already holds clauses."""
    if isinstance(c, Turn):
        return 1.0 if has_turn or has_move else 0.0
    if isinstance(c, Move):
        return 1.0 if has_move else 0.0
    return 0.0


def _flags(c: Clause, has_turn: bool, has_move: bool) -> tuple[bool, bool]:
    return has_turn or isinstance(c, Turn), has_move or isinstance(c, Move)


def assignment_cost(
    clauses: Sequence[Clause], steps: Sequence[int], views: Sequence[StepView], actions: Sequence[Action]
) -> float:
    total = 0.0
    prev, ht, hm = -1, False, False
    for c, s in zip(clauses, steps):
        if s != prev:
            ht, hm = False, False
        total += clause_cost(c, s, views, actions) + _extra_cost(c, ht, hm)
        ht, hm = _flags(c, ht, hm)
        prev = s
    return total


def best_assignment(
    clauses: Sequence[Clause], views: Sequence[StepView], actions: Sequence[Action]
) -> tuple[float, list[int]]:
    """Minimum-cost monotone assignment; ties go to the lexicographically
    smallest step sequence."""
    n, m = len(clauses), len(views)
    base = [[clause_cost(c, i, views, actions) for i in range(m)] for c in clauses]
    # suffix table: best[j][(s, ht, hm)] = (cost, steps) for clauses j.. given
    # clause j-1 sits on step s with flags (ht, hm)
    memo: dict[tuple[int, int, bool, bool], tuple[float, tuple[int, ...]]] = {}

    def solve(j: int, s_prev: int, ht: bool, hm: bool) -> tuple[float, tuple[int, ...]]:
        if j == n:
            return 0.0, ()
        key = (j, s_prev, ht, hm)
        hit = memo.get(key)
        if hit is not None:
            return hit
        c = clauses[j]
        best: tuple[float, tuple[int, ...]] = (math.inf, ())
        for s in range(max(s_prev, 0), m):
            cost = base[j][s]
            if cost == math.inf:
                continue
            if s == s_prev:
                cost += _extra_cost(c, ht, hm)
                nt, nm = _flags(c, ht, hm)
            else:
                nt, nm = _flags(c, False, False)
            rest, tail = solve(j + 1, s, nt, nm)
            if cost + rest < best[0]:
                best = (cost + rest, (s,) + tail)
        memo[key] = best
        return best

    cost, steps = solve(0, -1, False, False)
    return cost, list(steps)


def brute_force_assignment(
    clauses: Sequence[Clause], views: Sequence[StepView], actions: Sequence[Action]
) -> tuple[float, list[int]]:
    """Exhaustive reference for :func:`best_assignment` on small inputs."""
    best: tuple[float, list[int]] = (math.inf, [])
    for steps in itertools.combinations_with_replacement(range(len(views)), len(clauses)):
        cost = assignment_cost(clauses, steps, views, actions)
        if cost < best[0]:
            best = (cost, list(steps))
    return best


def align_clauses(instr: Instruction, traj: Trajectory, env: Environment) -> dict[int, list[int]]:
    """Map every trajectory step to the indices of the clauses it explains."""
    clauses = parse_clauses(instr)
    views = step_views(env, traj)
    _, steps = best_assignment(clauses, views, traj.actions)
    out: dict[int, list[int]] = {i: [] for i in range(len(views))}
    for j, s in enumerate(steps):
        out[s].append(j)
    return out


# ---------------------------------------------------------------- templates


def clause_template(c: Clause, view: StepView) -> str:
    if isinstance(c, Turn):
        return f"T:{c.direction}:{c.magnitude}"
    if isinstance(c, Move):
        return f"M:{c.verb}:{_slot(c.landmark, view)}"
    if c.landmark is None:
        return "S:none"
    return "S:here" if c.landmark == view.stop_lm else "S:off"


def fillable(template: tuple[str, ...], view: StepView) -> bool:
    if view.final != (bool(template) and template[-1].startswith("S:")):
        return False
    for part in template:
        tag, _, slot = part.rpartition(":")
        if slot == "off" or (slot == "ahead" and not view.ahead) or (slot == "adj" and not view.adj):
            return False
        if slot == "here" and view.stop_lm is None:
            return False
    return True


def realize(template: tuple[str, ...], view: StepView, forms: Sequence[int] | None = None) -> list[Clause]:
    """Clauses for a fillable template; ``forms`` picks surface forms per landmark."""
    out: list[Clause] = []
    for part in template:
        head, a, b = (part.split(":") + [""])[:3]
        if head == "T":
            out.append(Turn(a, b))
        elif head == "M":
            lm = view.ahead[0] if b == "ahead" else view.adj[0]
            out.append(Move(a, lm, forms[lm] if forms is not None else 0))
        elif a == "none":
            out.append(Stop())
        else:
            out.append(Stop(view.stop_lm, forms[view.stop_lm] if forms is not None else 0))
    return out


# ---------------------------------------------------------------- params


@dataclass
class GeneratorParams:
    """Normalized weight tables.

    ``fine[ctx] = (lam, freqs)`` mixes the context's relative frequencies
    with the coarse table using weight ``lam``; ``coarse[g] = (floor, probs)``
    where ``floor`` is the probability of any unlisted template.
    """

    fine: dict[tuple, tuple[float, dict[tuple[str, ...], float]]]
    coarse: dict[tuple, tuple[float, dict[tuple[str, ...], float]]]
    fallback: tuple[float, dict[tuple[str, ...], float]]
    naming: tuple[tuple[float, float], ...]
    version: int = 0
    encoding: str = "interleaved"
    _dist: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        tables = [self.fallback, *self.coarse.values()]
        for floor, probs in tables:
            if not math.isfinite(floor) or not all(math.isfinite(p) for p in probs.values()):
                raise ValueError("emission weights must be finite")
        if not all(math.isfinite(p) for pair in self.naming for p in pair):
            raise ValueError("naming weights must be finite")

    @property
    def vocab_size(self) -> int:
        return len(self.naming)

    @property
    def templates(self) -> list[tuple[str, ...]]:
        seen = set(self.fallback[1])
        for _, probs in self.coarse.values():
            seen.update(probs)
        seen.update((EMPTY, BARE_STOP))
        return sorted(seen)

    def coarse_prob(self, t: tuple[str, ...], g: tuple) -> float:
        floor, probs = self.coarse.get(g, self.fallback)
        return probs.get(t, floor)

    def prob(self, t: tuple[str, ...], view: StepView) -> float:
        pc = self.coarse_prob(t, view.coarse)
        cell = self.fine.get(view.fine)
        if cell is None:
            return pc
        lam, freqs = cell
        return (1.0 - lam) * freqs.get(t, 0.0) + lam * pc

    def distribution(self, view: StepView) -> tuple[list[tuple[str, ...]], np.ndarray]:
        """Fillable templates in sorted order and their renormalized probs."""
        key = (view.fine, view.coarse, view.final, bool(view.ahead), bool(view.adj), view.stop_lm is not None)
        hit = self._dist.get(key)
        if hit is None:
            temps = [t for t in self.templates if fillable(t, view)]
            p = np.array([self.prob(t, view) for t in temps])
            hit = (temps, p / p.sum())
            self._dist[key] = hit
        return hit

    @classmethod
    def fresh(cls, vocab_size: int = DEFAULT_VOCAB, encoding: str = "interleaved") -> "GeneratorParams":
        uniform = (0.5, {EMPTY: 0.5, BARE_STOP: 0.5})
        return cls({}, {}, uniform, tuple((0.5, 0.5) for _ in range(vocab_size)), 0, encoding)


def _events(
    pair, envs: Mapping[str, Environment], encoding: str
) -> tuple[list[tuple[StepView, tuple[str, ...]]], list[tuple[int, int]]]:
    env = envs[pair.traj.env_id]
    clauses = parse_clauses(pair.instr)
    true_views = step_views(env, pair.traj)
    _, steps = best_assignment(clauses, true_views, pair.traj.actions)
    enc_views = true_views if encoding == "interleaved" else step_views(env, pair.traj, encoding)
    groups: list[list[str]] = [[] for _ in true_views]
    for c, s in zip(clauses, steps):
        groups[s].append(clause_template(c, true_views[s]))
    events = [(enc_views[i], tuple(g)) for i, g in enumerate(groups)]
    names = [(c.landmark, c.form) for c in clauses if getattr(c, "landmark", None) is not None]
    return events, names


def train_generator(
    pairs: Sequence,
    init: GeneratorParams | None,
    hyper: GenTrainConfig,
    seed: int,
    envs: Mapping[str, Environment],
    version: int | None = None,
) -> GeneratorParams:
    """Closed-form smoothed maximum-likelihood fit on aligned step events.

    Every pseudo-count is proportional to the data it smooths, so replicating
    the pool leaves the result unchanged. The estimate does not depend on
    ``init`` or ``seed``; ``init`` only supplies the vocabulary size.
    """
    if not pairs:
        raise ValueError("generator training needs data")
    fine_counts: dict[tuple, Counter] = defaultdict(Counter)
    fine_group: dict[tuple, tuple] = {}
    coarse_counts: dict[tuple, Counter] = defaultdict(Counter)
    total: Counter = Counter()
    name_counts: Counter = Counter()
    vocab = init.vocab_size if init is not None else DEFAULT_VOCAB
    parsed = 0
    for pair in pairs:
        try:
            events, names = _events(pair, envs, hyper.encoding)
        except ValueError:
            continue
        parsed += 1
        for view, t in events:
            fine_counts[view.fine][t] += 1
            fine_group[view.fine] = view.coarse
            coarse_counts[view.coarse][t] += 1
            total[t] += 1
        for lm, form in names:
            name_counts[(lm, form)] += 1
            vocab = max(vocab, lm + 1)
    if parsed == 0:
        raise ValueError("no parseable pair in the generator pool")

    templates = sorted(set(total) | {EMPTY, BARE_STOP})
    n_t = len(templates)
    mean_coarse = sum(total.values()) / len(coarse_counts)

    def smoothed(counts: Counter) -> tuple[float, dict]:
        n = sum(counts.values())
        pseudo = hyper.alpha * mean_coarse
        z = n + pseudo
        floor = pseudo / n_t / z
        return floor, {t: (c + pseudo / n_t) / z for t, c in sorted(counts.items())}

    coarse = {g: smoothed(c) for g, c in sorted(coarse_counts.items())}
    fallback = smoothed(total)
    # mean events per fine context inside each coarse group
    members: dict[tuple, list[int]] = defaultdict(list)
    for ctx, counts in fine_counts.items():
        members[fine_group[ctx]].append(sum(counts.values()))
    mean_fine = {g: sum(v) / len(v) for g, v in members.items()}
    fine = {}
    for ctx, counts in sorted(fine_counts.items()):
        n = sum(counts.values())
        prior = hyper.kappa * mean_fine[fine_group[ctx]]
        fine[ctx] = (prior / (n + prior), {t: c / n for t, c in sorted(counts.items())})

    mentions = sum(name_counts.values())
    name_prior = hyper.alpha * (mentions / vocab if mentions else 1.0)
    naming = []
    for lm in range(vocab):
        a, b = name_counts[(lm, 0)], name_counts[(lm, 1)]
        z = a + b + name_prior
        naming.append(((a + name_prior / 2) / z, (b + name_prior / 2) / z))
    if version is None:
        version = init.version + 1 if init is not None else 0
    return GeneratorParams(fine, coarse, fallback, tuple(naming), version, hyper.encoding)


# ---------------------------------------------------------------- decoding


def _pick(p: np.ndarray, decode: DecodeConfig, rng: np.random.Generator | None) -> int:
    # stable sort keeps the template order among equal probabilities
    order = np.argsort(-p, kind="stable")
    if decode.mode == "greedy" or decode.k == 1:
        return int(order[0])
    top = order[: decode.k]
    w = p[top] ** (1.0 / decode.temperature)
    return int(top[rng.choice(len(top), p=w / w.sum())])


def generate(
    params: GeneratorParams, env: Environment, traj: Trajectory, decode: DecodeConfig = GREEDY
) -> Instruction:
    views = step_views(env, traj, params.encoding)
    true_views = views if params.encoding == "interleaved" else step_views(env, traj)
    rng = np.random.default_rng(decode.seed) if decode.mode == "top_k" else None
    chosen = []
    for view in views:
        temps, p = params.distribution(view)
        chosen.append(temps[_pick(p, decode, rng)])
    forms = {}
    for lm in sorted({lm for v in true_views for lm in (*v.ahead, *v.adj, v.stop_lm) if lm is not None}):
        probs = np.array(params.naming[lm] if lm < params.vocab_size else (0.5, 0.5))
        forms[lm] = _pick(probs, decode, rng)
    clauses: list[Clause] = []
    for t, view in zip(chosen, true_views):
        clauses.extend(realize(t, view, forms))
    return render(clauses)


def likelihood(params: GeneratorParams, env: Environment, traj: Trajectory, instr: Instruction) -> tuple[float, int]:
    """Log-likelihood of ``instr`` under the decoding distribution, and the
    number of scored decisions (steps plus named landmarks)."""
    clauses = parse_clauses(instr)
    true_views = step_views(env, traj)
    views = true_views if params.encoding == "interleaved" else step_views(env, traj, params.encoding)
    _, steps = best_assignment(clauses, true_views, traj.actions)
    groups: list[list[str]] = [[] for _ in views]
    for c, s in zip(clauses, steps):
        groups[s].append(clause_template(c, true_views[s]))
    ll = 0.0
    for view, tv, g in zip(views, true_views, groups):
        t = tuple(g)
        temps, p = params.distribution(view)
        if fillable(t, tv) and t in temps:
            ll += math.log(p[temps.index(t)])
        else:
            ll += math.log(params.prob(t, view) * UNFILLABLE_PENALTY)
    named = [c for c in clauses if getattr(c, "landmark", None) is not None]
    for c in named:
        pair = params.naming[c.landmark] if c.landmark < params.vocab_size else (0.5, 0.5)
        ll += math.log(pair[c.form])
    return ll, len(views) + len(named)
