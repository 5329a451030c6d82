"""Toy instruction language.

Grammar (clauses are separated by ``,``; the last clause must be a stop)::

    clause := "turn" ("left" | "right" | "around" | "slightly" ("left" | "right"))
            | "walk" ("past" | "to" | "toward") LANDMARK
            | "stop" ["at" LANDMARK]

Every landmark id owns two single-token surface forms. Annotators (and the
generator) refer to the most prominent landmark in a sector, which by
convention is the one with the lowest id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .trajectories import Action, Trajectory
from .world import NUM_SECTORS, Environment, observation, sector_of

DEFAULT_VOCAB = 40

_FORMS = [
    ("bed", "cot"), ("sofa", "couch"), ("table", "bench"), ("chair", "stool"),
    ("lamp", "light"), ("door", "doorway"), ("window", "pane"), ("stairs", "staircase"),
    ("sink", "basin"), ("toilet", "commode"), ("mirror", "looking-glass"), ("rug", "carpet"),
    ("plant", "fern"), ("painting", "picture"), ("shelf", "bookcase"), ("fridge", "refrigerator"),
    ("oven", "stove"), ("tv", "television"), ("fireplace", "hearth"), ("closet", "wardrobe"),
    ("bathtub", "tub"), ("shower", "stall"), ("piano", "keyboard"), ("clock", "timepiece"),
    ("vase", "urn"), ("statue", "sculpture"), ("pillar", "column"), ("railing", "banister"),
    ("cabinet", "cupboard"), ("dresser", "drawers"), ("curtain", "drape"), ("fan", "ventilator"),
    ("arch", "archway"), ("hallway", "corridor"), ("kitchen", "galley"), ("bedroom", "bedchamber"),
    ("bathroom", "washroom"), ("office", "study"), ("balcony", "terrace"), ("garage", "carport"),
]

TURN_DIRECTIONS = ("left", "right", "around")
MOVE_VERBS = ("past", "to", "toward")
MAGNITUDES = ("slight", "normal", "full")
SEP = ","
# search order of relative sectors when picking a stop landmark
STOP_SEARCH = (0, 1, 7, 2, 6, 3, 5, 4)


def surface_forms(landmark: int) -> tuple[str, str]:
    if 0 <= landmark < len(_FORMS):
        return _FORMS[landmark]
    return (f"item{landmark}", f"object{landmark}")


_LEXICON: dict[str, tuple[int, int]] = {}


def lookup_surface(word: str) -> tuple[int, int] | None:
    """Surface token -> (landmark id, form index)."""
    if not _LEXICON:
        for lm in range(len(_FORMS)):
            for f, w in enumerate(_FORMS[lm]):
                _LEXICON[w] = (lm, f)
    hit = _LEXICON.get(word)
    if hit is not None:
        return hit
    for f, prefix in enumerate(("item", "object")):
        if word.startswith(prefix) and word[len(prefix):].isdigit():
            lm = int(word[len(prefix):])
            if lm >= len(_FORMS):
                return (lm, f)
    return None


class UnparseableInstruction(ValueError):
    pass


@dataclass(frozen=True)
class Turn:
    direction: str
    magnitude: str = "normal"


@dataclass(frozen=True)
class Move:
    verb: str
    landmark: int
    form: int = 0


@dataclass(frozen=True)
class Stop:
    landmark: int | None = None
    form: int = 0


Clause = Union[Turn, Move, Stop]


@dataclass(frozen=True)
class Instruction:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("instruction must be non-empty")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "Instruction":
        return cls(tuple(text.split()))


class PropositionSet(NamedTuple):
    semantic: frozenset[tuple[str, int]]
    directional: tuple[str, ...]


@dataclass(frozen=True)
class CorruptionConfig:
    landmark_dropout: float = 0.15
    synonym_swap: float = 0.15
    spurious_insert: float = 0.10
    direction_flip: float = 0.10

    def __post_init__(self) -> None:
        for name in ("landmark_dropout", "synonym_swap", "spurious_insert", "direction_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @classmethod
    def clean(cls) -> "CorruptionConfig":
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def total(cls) -> "CorruptionConfig":
        return cls(1.0, 1.0, 1.0, 1.0)

    def scaled(self, factor: float) -> "CorruptionConfig":
        return CorruptionConfig(
            *(min(1.0, factor * p) for p in (self.landmark_dropout, self.synonym_swap, self.spurious_insert, self.direction_flip))
        )


def turn_for_action(action: Action) -> Turn:
    if action.degrees >= 150.0:
        return Turn("around", "full")
    return Turn(action.kind, "slight" if action.degrees <= 60.0 else "normal")


def flip(turn: Turn) -> Turn:
    if turn.direction == "around":
        return Turn("left", "normal")
    return Turn("right" if turn.direction == "left" else "left", turn.magnitude)


def render_clause(c: Clause) -> list[str]:
    if isinstance(c, Turn):
        if c.direction == "around":
            return ["turn", "around"]
        if c.magnitude == "slight":
            return ["turn", "slightly", c.direction]
        return ["turn", c.direction]
    if isinstance(c, Move):
        return ["walk", c.verb, surface_forms(c.landmark)[c.form]]
    if c.landmark is None:
        return ["stop"]
    return ["stop", "at", surface_forms(c.landmark)[c.form]]


def render(clauses: Sequence[Clause]) -> Instruction:
    toks: list[str] = []
    for i, c in enumerate(clauses):
        if i:
            toks.append(SEP)
        toks.extend(render_clause(c))
    return Instruction(tuple(toks))


def _parse_clause(group: list[str]) -> Clause:
    head, rest = group[0], group[1:]
    if head == "turn":
        if rest == ["around"]:
            return Turn("around", "full")
        if len(rest) == 1 and rest[0] in ("left", "right"):
            return Turn(rest[0], "normal")
        if len(rest) == 2 and rest[0] == "slightly" and rest[1] in ("left", "right"):
            return Turn(rest[1], "slight")
    elif head == "walk":
        if len(rest) == 2 and rest[0] in MOVE_VERBS:
            hit = lookup_surface(rest[1])
            if hit is not None:
                return Move(rest[0], hit[0], hit[1])
    elif head == "stop":
        if not rest:
            return Stop()
        if len(rest) == 2 and rest[0] == "at":
            hit = lookup_surface(rest[1])
            if hit is not None:
                return Stop(hit[0], hit[1])
    raise UnparseableInstruction(f"cannot parse clause {' '.join(group)!r}")


def parse_clauses(instr: Instruction | Sequence[str]) -> list[Clause]:
    tokens = list(instr.tokens if isinstance(instr, Instruction) else instr)
    groups: list[list[str]] = [[]]
    for tok in tokens:
        if tok == SEP:
            groups.append([])
        else:
            groups[-1].append(tok)
    if any(not g for g in groups):
        raise UnparseableInstruction("empty clause")
    clauses = [_parse_clause(g) for g in groups]
    stops = [i for i, c in enumerate(clauses) if isinstance(c, Stop)]
    if stops != [len(clauses) - 1]:
        raise UnparseableInstruction("instruction must end with its only stop clause")
    return clauses


def propositions(clauses: Iterable[Clause]) -> PropositionSet:
    sem: set[tuple[str, int]] = set()
    dirs: list[str] = []
    for c in clauses:
        if isinstance(c, Turn):
            dirs.append(c.direction)
        elif isinstance(c, Move):
            sem.add((c.verb, c.landmark))
        elif c.landmark is not None:
            sem.add(("at", c.landmark))
    return PropositionSet(frozenset(sem), tuple(dirs))


def parse(instr: Instruction) -> tuple[list[Clause], PropositionSet]:
    clauses = parse_clauses(instr)
    return clauses, propositions(clauses)


# ---------------------------------------------------------------- annotation


def stop_landmark(env: Environment, node: int, heading: float) -> int | None:
    base = sector_of(heading)
    for r in STOP_SEARCH:
        group = env.landmarks_at(node, base + r)
        if group:
            return group[0]
    return None


def move_for_step(env: Environment, traj: Trajectory, i: int) -> Move | None:
    """Clean move clause for step ``i`` (edge ``nodes[i] -> nodes[i+1]``)."""
    u, b = traj.nodes[i], traj.headings[i + 1]
    last = i == traj.num_steps - 1
    ahead = env.ahead(u, b)
    if ahead:
        return Move("to" if last else "past", ahead[0])
    side = env.flanking(u, b)
    if side:
        return Move("toward", side[0])
    return None


def oracle_clauses(env: Environment, traj: Trajectory) -> tuple[list[Clause], list[int]]:
    """Clean clause sequence plus the step index that emitted each clause."""
    clauses: list[Clause] = []
    steps: list[int] = []
    for i in range(traj.num_steps):
        act = traj.actions[i]
        if act.is_turn:
            clauses.append(turn_for_action(act))
            steps.append(i)
        mv = move_for_step(env, traj, i)
        if mv is not None:
            clauses.append(mv)
            steps.append(i)
    clauses.append(Stop(stop_landmark(env, traj.goal, traj.headings[-1])))
    steps.append(traj.num_steps)
    return clauses, steps


def corrupt(
    clauses: Sequence[Clause], corruption: CorruptionConfig, rng: np.random.Generator, vocab_size: int
) -> list[Clause]:
    """Apply i.i.d. per-clause noise.

    A fixed number of draws is consumed per clause so that changing one
    probability never shifts the random stream of later clauses.
    """
    out: list[Clause] = []
    for c in clauses:
        u_drop, u_syn, u_spur, u_flip = rng.random(4)
        spur_lm = int(rng.integers(vocab_size))
        spurious = Move("past", spur_lm, 0) if u_spur < corruption.spurious_insert else None
        syn = 1 if u_syn < corruption.synonym_swap else 0
        if isinstance(c, Stop):
            if spurious is not None:
                out.append(spurious)
            if c.landmark is None or u_drop < corruption.landmark_dropout:
                out.append(Stop())
            else:
                out.append(Stop(c.landmark, syn))
            continue
        if isinstance(c, Turn):
            out.append(flip(c) if u_flip < corruption.direction_flip else c)
        elif u_drop >= corruption.landmark_dropout:
            out.append(Move(c.verb, c.landmark, syn))
        if spurious is not None:
            out.append(spurious)
    return out


def oracle_annotate(
    env: Environment,
    traj: Trajectory,
    corruption: CorruptionConfig | None = None,
    seed: int = 0,
    vocab_size: int = DEFAULT_VOCAB,
) -> Instruction:
    """Seed-style annotation: the clean description plus annotator noise."""
    clauses, _ = oracle_clauses(env, traj)
    if corruption is not None:
        clauses = corrupt(clauses, corruption, np.random.default_rng(seed), vocab_size)
    return render(clauses)


# ---------------------------------------------------------------- encodings

ENCODINGS = ("interleaved", "obs_only", "obs_then_actions")
OBS_OPEN, OBS_CLOSE, STOP_TOKEN = "<obs>", "</obs>", "stop"


class EncodedStep(NamedTuple):
    visible: tuple[tuple[int, ...], ...]
    action: Action | None


def view_heading(traj: Trajectory, i: int) -> float:
    """Heading of the key view at step ``i``: the leaving heading, or the
    arrival heading at the final node."""
    return traj.headings[min(i + 1, traj.num_steps)]


def _obs_block(env: Environment, node: int, heading: float) -> list[str]:
    obs = observation(env, node, heading)
    toks = [OBS_OPEN]
    for r, group in enumerate(obs.visible):
        if group:
            toks.append(f"s{r}")
            toks.extend(f"L{lm}" for lm in group)
    toks.append(OBS_CLOSE)
    return toks


def _action_token(act: Action) -> str:
    if act.is_turn:
        return f"{act.kind}({act.degrees:.2f})"
    return act.kind


def encode_trajectory(env: Environment, traj: Trajectory, fmt: str = "interleaved") -> list[str]:
    """Token encoding of a trajectory for the instruction generator.

    ``interleaved`` alternates a view block and the action taken there;
    ``obs_only`` drops the actions; ``obs_then_actions`` lists all views
    first and all actions after them. Every format ends with ``stop``.
    """
    if traj.env_id != env.env_id:
        raise ValueError(f"trajectory {traj.traj_id} is not in {env.env_id}")
    blocks = [_obs_block(env, traj.nodes[i], view_heading(traj, i)) for i in range(len(traj.nodes))]
    acts = [_action_token(a) for a in traj.actions[:-1]]
    if fmt == "interleaved":
        out: list[str] = []
        for i, block in enumerate(blocks):
            out.extend(block)
            out.append(acts[i] if i < len(acts) else STOP_TOKEN)
        return out
    if fmt == "obs_only":
        return [t for block in blocks for t in block] + [STOP_TOKEN]
    if fmt == "obs_then_actions":
        return [t for block in blocks for t in block] + acts + [STOP_TOKEN]
    raise ValueError(f"unknown encoding {fmt!r}")


def _parse_action(tok: str) -> Action:
    if "(" in tok:
        kind, deg = tok.rstrip(")").split("(")
        return Action(kind, float(deg))
    return Action(tok)


def decode_encoding(tokens: Sequence[str]) -> list[EncodedStep]:
    """Recover per-step views and actions from any of the encodings."""
    views: list[tuple[tuple[int, ...], ...]] = []
    acts: list[Action] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == OBS_OPEN:
            groups: list[list[int]] = [[] for _ in range(NUM_SECTORS)]
            cur = None
            i += 1
            while tokens[i] != OBS_CLOSE:
                t = tokens[i]
                if t.startswith("s"):
                    cur = int(t[1:])
                else:
                    groups[cur].append(int(t[1:]))
                i += 1
            views.append(tuple(tuple(g) for g in groups))
        elif tok == STOP_TOKEN:
            break
        else:
            acts.append(_parse_action(tok))
        i += 1
    # action k belongs to view k in both action-bearing formats
    return [EncodedStep(v, acts[k] if k < len(acts) else None) for k, v in enumerate(views)]


# ---------------------------------------------------------------- statistics


class VocabStats(NamedTuple):
    num_instructions: int
    vocab_size: int
    mean_length: float
    num_envs: int


def vocab_stats(pool: Iterable) -> VocabStats:
    """Counts in the style of a dataset statistics table.

    ``pool`` items need an ``instr`` (:class:`Instruction`) and an ``env_id``.
    """
    n = 0
    total = 0
    vocab: set[str] = set()
    envs: set[str] = set()
    for pair in pool:
        toks = pair.instr.tokens
        n += 1
        total += len(toks)
        vocab.update(toks)
        envs.add(pair.env_id)
    if n == 0:
        return VocabStats(0, 0, 0.0, 0)
    return VocabStats(n, len(vocab), total / n, len(envs))


def edit_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """1 - Levenshtein(a, b) / max(|a|, |b|); 1.0 when both are empty."""
    if not a and not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))

