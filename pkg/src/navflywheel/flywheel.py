"""The multi-round data flywheel.

Round 1 trains a generator on seed data, captions the trajectory pool, trains
a navigator on the captions and uses it to filter both kinds of data. Every
later round retrains the generator on its filtered greedy captions plus the
seed data, re-captions the navigator data that failed the filter, and trains
the next navigator on the refreshed pool.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .generator import GREEDY, DecodeConfig, GeneratorParams, GenTrainConfig, generate, train_generator
from .lang import CorruptionConfig, Instruction, oracle_annotate
from .nav_metrics import mean_scores
from .navigator import NavigatorParams, NavTrainConfig, train_navigator
from .scoring import (
    SEED,
    FilterSummary,
    FilterThresholds,
    PairedSample,
    Provenance,
    derive_seed,
    filter_generator_data,
    filter_navigator_data,
    follow_pair,
    ids,
    parallel_map,
)
from .text_metrics import text_scores
from .trajectories import Trajectory, sample_trajectories
from .world import Environment, WorldGenConfig, generate_environment, hop_matrix

log = logging.getLogger(__name__)

POOL_NAMES = ("D_N_t", "D_G_next", "FD_G_next", "FD_N_below_next", "LD_N_next", "ND_N_t", "FND_N_t")
NAV_METRICS = ("ne", "osr", "sr", "spl")
GEN_METRICS = ("prop_f1", "prop_f1_dir", "bleu1", "bleu4", "cider", "rouge_l")


class FlywheelError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlywheelConfig:
    rounds: int = 3
    k_sample: int = 6
    sample_decode: DecodeConfig = DecodeConfig("top_k", 3, 1.0, 0)
    greedy_decode: DecodeConfig = GREEDY
    thresholds: FilterThresholds = FilterThresholds()
    gen_train: GenTrainConfig = GenTrainConfig()
    nav_train: NavTrainConfig = NavTrainConfig()
    eval_split: str = "val_unseen"
    master_seed: int = 0
    threads: int = 1
    generator_post_pass: bool = False

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.k_sample < 1:
            raise ValueError("k_sample must be >= 1")


@dataclass(frozen=True)
class EvalItem:
    """A held-out trajectory with its reference instructions."""

    traj: Trajectory
    refs: tuple[Instruction, ...]


@dataclass
class RoundState:
    t: int
    G: GeneratorParams
    N: NavigatorParams
    pools: dict[str, list[PairedSample]]


@dataclass(frozen=True)
class RoundReport:
    label: str
    nav: dict[str, float]
    gen: dict[str, float]
    pool_sizes: dict[str, int]
    filters: tuple[FilterSummary, ...] = ()
    wall_clock: float = field(default=0.0, compare=False)

    def row(self) -> dict[str, float | str]:
        out: dict[str, float | str] = {"round": self.label}
        out.update({k: self.nav[k] for k in NAV_METRICS})
        out.update({k: self.gen[k] for k in GEN_METRICS})
        return out


# ---------------------------------------------------------------- desk data


@dataclass(frozen=True)
class DataConfig:
    train_worlds: int = 60
    eval_worlds: int = 20
    seed_size: int = 1000
    traj_size: int = 2000
    eval_trajs_per_world: int = 10
    eval_refs: int = 3
    hop_range: tuple[int, int] = (4, 7)
    corruption: CorruptionConfig = CorruptionConfig()
    world: WorldGenConfig = WorldGenConfig()


@dataclass
class DeskData:
    envs: dict[str, Environment]
    seed_pairs: list[PairedSample]
    traj_pool: list[Trajectory]
    eval_items: list[EvalItem]


def _quota(total: int, parts: int, i: int) -> int:
    return total // parts + (1 if i < total % parts else 0)


def _hops(env: Environment, cfg: DataConfig) -> tuple[int, int]:
    """The configured hop range, capped at the world's diameter."""
    lo, hi = cfg.hop_range
    hi = min(hi, int(hop_matrix(env).max()))
    return min(lo, hi), hi


def make_worlds(cfg: DataConfig, seed: int) -> dict[str, Environment]:
    envs = {}
    for split, count in (("train", cfg.train_worlds), ("val_unseen", cfg.eval_worlds)):
        for i in range(count):
            env_id = f"{split}-{i:03d}"
            envs[env_id] = generate_environment(cfg.world, derive_seed(seed, "world", env_id), env_id, split)
    return envs


def make_desk_data(cfg: DataConfig, seed: int, envs: Mapping[str, Environment] | None = None) -> DeskData:
    """Worlds, the seed pool, the unlabeled trajectory pool and eval items."""
    envs = dict(envs) if envs is not None else make_worlds(cfg, seed)
    train = sorted(e for e in envs if envs[e].split == "train")
    held = sorted(e for e in envs if envs[e].split == "val_unseen")
    seed_pairs: list[PairedSample] = []
    traj_pool: list[Trajectory] = []
    for i, env_id in enumerate(train):
        env = envs[env_id]
        n_seed = _quota(cfg.seed_size, len(train), i)
        n_traj = _quota(cfg.traj_size, len(train), i)
        trajs = sample_trajectories(env, n_seed + n_traj, _hops(env, cfg), derive_seed(seed, "trajs", env_id))
        if len(trajs) < n_seed + n_traj:
            raise FlywheelError(f"{env_id} supplied {len(trajs)} of {n_seed + n_traj} trajectories")
        for traj in trajs[:n_seed]:
            instr = oracle_annotate(env, traj, cfg.corruption, derive_seed(seed, "seed", traj.traj_id), cfg.world.vocab_size)
            seed_pairs.append(PairedSample(f"{traj.traj_id}#seed", traj, instr, SEED))
        traj_pool.extend(trajs[n_seed:])
    eval_items = []
    for env_id in held:
        env = envs[env_id]
        for traj in sample_trajectories(env, cfg.eval_trajs_per_world, _hops(env, cfg), derive_seed(seed, "eval", env_id)):
            refs = tuple(
                oracle_annotate(env, traj, cfg.corruption, derive_seed(seed, "ref", traj.traj_id, r), cfg.world.vocab_size)
                for r in range(cfg.eval_refs)
            )
            eval_items.append(EvalItem(traj, refs))
    return DeskData(envs, seed_pairs, traj_pool, eval_items)


# ---------------------------------------------------------------- helpers


def eval_pairs(items: Sequence[EvalItem]) -> list[PairedSample]:
    return [
        PairedSample(f"{it.traj.traj_id}#ref{r}", it.traj, instr, SEED)
        for it in items
        for r, instr in enumerate(it.refs)
    ]


def evaluate_round(
    N: NavigatorParams | None,
    G: GeneratorParams | None,
    items: Sequence[EvalItem],
    envs: Mapping[str, Environment],
    threads: int = 1,
) -> tuple[dict[str, float], dict[str, float]]:
    """Mean navigation scores over every (trajectory, reference) pair and
    mean text scores of greedy generations against all references."""
    if not items:
        raise ValueError("empty evaluation set")
    nav: dict[str, float] = {}
    gen: dict[str, float] = {}
    if N is not None:
        pairs = eval_pairs(items)
        scores = parallel_map(lambda p: follow_pair(N, envs[p.env_id], p), pairs, threads)
        nav = mean_scores(scores)
    if G is not None:
        outs = parallel_map(lambda it: generate(G, envs[it.traj.env_id], it.traj, GREEDY), items, threads)
        gen = mean_text_scores(outs, [it.refs for it in items])
    return nav, gen


def mean_text_scores(candidates: Sequence[Instruction], refs: Sequence[Sequence[Instruction]]) -> dict[str, float]:
    rows = text_scores(candidates, refs)
    return {k: float(np.mean([getattr(r, k) for r in rows])) for k in GEN_METRICS}


def check_split_hygiene(train_pairs: Sequence[PairedSample], traj_pool: Sequence[Trajectory], items: Sequence[EvalItem]) -> None:
    held = {it.traj.env_id for it in items}
    used = {p.env_id for p in train_pairs} | {t.env_id for t in traj_pool}
    leak = held & used
    if leak:
        raise FlywheelError(f"evaluation environments appear in training data: {sorted(leak)}")


def sampled_pairs(
    G: GeneratorParams,
    specs: Sequence[tuple[str, Trajectory]],
    t: int,
    config: FlywheelConfig,
    envs: Mapping[str, Environment],
) -> list[PairedSample]:
    """One top-k caption per (pair id, trajectory) spec."""
    prov = Provenance("generated", t, config.sample_decode.mode)

    def one(spec: tuple[str, Trajectory]) -> PairedSample:
        pid, traj = spec
        decode = replace(config.sample_decode, seed=derive_seed(config.master_seed, t, "sample", pid))
        return PairedSample(pid, traj, generate(G, envs[traj.env_id], traj, decode), prov)

    return parallel_map(one, specs, config.threads)


def greedy_pairs(G: GeneratorParams, trajs: Sequence[Trajectory], t: int, config: FlywheelConfig, envs) -> list[PairedSample]:
    prov = Provenance("generated", t, config.greedy_decode.mode)
    return parallel_map(
        lambda tr: PairedSample(f"{tr.traj_id}#g{t}", tr, generate(G, envs[tr.env_id], tr, config.greedy_decode), prov),
        trajs,
        config.threads,
    )


def _slot_id(traj: Trajectory, slot: int, t: int) -> str:
    return f"{traj.traj_id}#s{slot}r{t}"


def _by_id(pool: Sequence[PairedSample]) -> list[PairedSample]:
    return sorted(pool, key=lambda p: p.pair_id)


# ---------------------------------------------------------------- rounds


def run_round(
    prev: RoundState | None,
    config: FlywheelConfig,
    seed_pairs: Sequence[PairedSample],
    traj_pool: Sequence[Trajectory],
    envs: Mapping[str, Environment],
    eval_items: Sequence[EvalItem] = (),
) -> tuple[RoundState, RoundReport]:
    """One flywheel round; ``prev=None`` runs the bootstrap round."""
    if not seed_pairs or not traj_pool:
        raise FlywheelError("the flywheel needs seed pairs and a trajectory pool")
    start = time.perf_counter()
    t = 1 if prev is None else prev.t + 1
    ms = config.master_seed
    if prev is None:
        G = train_generator(seed_pairs, None, config.gen_train, derive_seed(ms, t, "G"), envs, version=t)
        specs = [(_slot_id(tr, s, t), tr) for tr in traj_pool for s in range(config.k_sample)]
        fd_n_below: list[PairedSample] = []
        n_init = None
    else:
        fd_g = prev.pools["FD_G_next"]
        if not fd_g:
            raise FlywheelError(
                f"round {t}: the generator filter kept no pair; the navigator is too weak for SPL={config.thresholds.spl_exact}"
            )
        G = train_generator(list(fd_g) + list(seed_pairs), prev.G, config.gen_train, derive_seed(ms, t, "G"), envs, version=t)
        # regenerate each rejected instruction in place of its slot
        specs = [(p.pair_id.rsplit("r", 1)[0] + f"r{t}", p.traj) for p in prev.pools["LD_N_next"]]
        fd_n_below = prev.pools["FD_N_below_next"]
        n_init = prev.N
    nd = sampled_pairs(G, specs, t, config, envs)
    d_g_next = greedy_pairs(G, traj_pool, t, config, envs)
    d_n = _by_id(nd + list(fd_n_below))
    if len(d_n) != len(traj_pool) * config.k_sample:
        raise FlywheelError(f"round {t}: |D_N| = {len(d_n)} != {len(traj_pool)} x {config.k_sample}")

    N, _ = train_navigator(d_n, seed_pairs, n_init, config.nav_train, derive_seed(ms, t, "N"), envs, version=t)

    fd_g_next, g_summary = filter_generator_data(d_g_next, N, config.thresholds, envs, config.threads)
    fnd, ld_next, n_summary = filter_navigator_data(nd, N, config.thresholds, envs, config.threads)
    fd_n_below_next = _by_id(list(fd_n_below) + fnd)

    # structural invariants
    if not ids(fd_n_below) <= ids(fd_n_below_next):
        raise FlywheelError(f"round {t}: filtered navigation data shrank")
    if not ids(fd_g_next) <= ids(d_g_next):
        raise FlywheelError(f"round {t}: FD_G is not a subset of D_G")
    if ids(fnd) & ids(ld_next) or ids(fnd) | ids(ld_next) != ids(nd):
        raise FlywheelError(f"round {t}: navigator filter is not a partition")
    again, _ = filter_generator_data(fd_g_next, N, config.thresholds, envs)
    if ids(again) != ids(fd_g_next):
        raise FlywheelError(f"round {t}: generator filter is not idempotent")
    check_split_hygiene(list(seed_pairs) + d_n, traj_pool, eval_items)

    pools = {
        "D_N_t": d_n,
        "D_G_next": d_g_next,
        "FD_G_next": fd_g_next,
        "FD_N_below_next": fd_n_below_next,
        "LD_N_next": ld_next,
        "ND_N_t": nd,
        "FND_N_t": fnd,
    }
    nav, gen = evaluate_round(N, G, eval_items, envs, config.threads) if eval_items else ({}, {})
    report = RoundReport(
        str(t), nav, gen, {k: len(v) for k, v in pools.items()}, (g_summary, n_summary), time.perf_counter() - start
    )
    log.info("round %d: %s", t, report.row() if eval_items else report.pool_sizes)
    return RoundState(t, G, N, pools), report


def baseline_report(
    seed_pairs: Sequence[PairedSample],
    config: FlywheelConfig,
    envs: Mapping[str, Environment],
    eval_items: Sequence[EvalItem],
) -> RoundReport:
    """Models trained on the seed data alone."""
    start = time.perf_counter()
    G = train_generator(seed_pairs, None, config.gen_train, derive_seed(config.master_seed, 0, "G"), envs, version=0)
    N, _ = train_navigator(seed_pairs, [], None, config.nav_train, derive_seed(config.master_seed, 0, "N"), envs, version=0)
    nav, gen = evaluate_round(N, G, eval_items, envs, config.threads)
    return RoundReport("baseline", nav, gen, {"D_Seed": len(seed_pairs)}, (), time.perf_counter() - start)


def run_flywheel(
    seed_pairs: Sequence[PairedSample],
    traj_pool: Sequence[Trajectory],
    config: FlywheelConfig,
    envs: Mapping[str, Environment],
    eval_items: Sequence[EvalItem] = (),
    out_dir: str | Path | None = None,
    baseline: bool = True,
) -> tuple[RoundState, list[RoundReport]]:
    """Bootstrap plus ``rounds - 1`` refinement rounds.

    With ``out_dir`` set, every pool and model version is written there.
    """
    check_split_hygiene(seed_pairs, traj_pool, eval_items)
    reports: list[RoundReport] = []
    if baseline and eval_items:
        reports.append(baseline_report(seed_pairs, config, envs, eval_items))
    state: RoundState | None = None
    sizes = []
    for _ in range(config.rounds):
        state, report = run_round(state, config, seed_pairs, traj_pool, envs, eval_items)
        sizes.append(report.pool_sizes["D_N_t"])
        if len(set(sizes)) != 1:
            raise FlywheelError(f"navigator pool size changed across rounds: {sizes}")
        reports.append(report)
        if out_dir is not None:
            from .datastore import save_round

            save_round(out_dir, state)
    assert state is not None
    if config.generator_post_pass:
        start = time.perf_counter()
        t = state.t
        G = train_generator(
            list(state.pools["FD_G_next"]) + list(seed_pairs), state.G, config.gen_train,
            derive_seed(config.master_seed, t, "G-post"), envs, version=t,
        )
        _, gen = evaluate_round(None, G, eval_items, envs, config.threads) if eval_items else ({}, {})
        reports.append(RoundReport(f"{t}+ft", reports[-1].nav, gen, {"FD_G_next": len(state.pools["FD_G_next"])}, (), time.perf_counter() - start))
        state = replace(state, G=G)
    return state, reports


def report_asdict(report: RoundReport) -> dict:
    out = asdict(report)
    out.pop("wall_clock")
    return out
