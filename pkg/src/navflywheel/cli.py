"""Command-line entry point: ``navflywheel <command> [flags]``.

Every command accepts ``--config`` (a flat YAML file of key: value pairs)
and ``--seed``. Failures print one JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from . import datastore as ds
from .flywheel import (
    DataConfig,
    EvalItem,
    FlywheelConfig,
    FlywheelError,
    evaluate_round,
    make_desk_data,
    make_worlds,
    run_flywheel,
)
from .generator import GenTrainConfig
from .lang import CorruptionConfig
from .navigator import NavTrainConfig
from .scoring import (
    SCORERS,
    FilterThresholds,
    PairedSample,
    filter_generator_data,
    filter_navigator_data,
    ids,
    rank_and_take_top,
    score_pair,
)
from .world import WorldGenConfig

log = logging.getLogger("navflywheel")

EXIT_ERROR = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


# ---------------------------------------------------------------- config

# flat key -> (section, field); sections are resolved in CommandConfig.build
_SECTIONS: dict[str, type] = {
    "flywheel": FlywheelConfig,
    "data": DataConfig,
    "gen_train": GenTrainConfig,
    "nav_train": NavTrainConfig,
    "thresholds": FilterThresholds,
    "corruption": CorruptionConfig,
    "world": WorldGenConfig,
}
_NESTED = {"sample_decode", "greedy_decode", "thresholds", "gen_train", "nav_train", "corruption", "world", "hop_range"}
_EXTRA = {"sample_k": int, "sample_temperature": float, "hop_min": int, "hop_max": int}


def _key_table() -> dict[str, tuple[str, type]]:
    table: dict[str, tuple[str, type]] = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name in _NESTED or f.name in table:
                continue
            table[f.name] = (section, type(getattr(cls(), f.name)))
    return table


CONFIG_KEYS = _key_table()


@dataclass(frozen=True)
class CommandConfig:
    """The resolved flywheel and data configuration of one invocation."""

    flywheel: FlywheelConfig
    data: DataConfig

    def snapshot(self) -> dict:
        return {"flywheel": asdict(self.flywheel), "data": asdict(self.data)}

    @classmethod
    def build(cls, values: dict[str, Any]) -> "CommandConfig":
        unknown = sorted(set(values) - set(CONFIG_KEYS) - set(_EXTRA))
        if unknown:
            raise CliError(f"unknown config keys: {unknown}")
        parts: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
        for key, value in values.items():
            if key in _EXTRA:
                continue
            section, typ = CONFIG_KEYS[key]
            parts[section][key] = _coerce(key, value, typ)
        built = {s: _SECTIONS[s](**parts[s]) for s in ("gen_train", "nav_train", "thresholds", "corruption", "world")}
        hop = DataConfig().hop_range
        hop = (int(values.get("hop_min", hop[0])), int(values.get("hop_max", hop[1])))
        data = DataConfig(**parts["data"], hop_range=hop, corruption=built["corruption"], world=built["world"])
        base = FlywheelConfig().sample_decode
        sample = replace(
            base,
            k=int(values.get("sample_k", base.k)),
            temperature=float(values.get("sample_temperature", base.temperature)),
        )
        fly = FlywheelConfig(
            **parts["flywheel"],
            sample_decode=sample,
            thresholds=built["thresholds"],
            gen_train=built["gen_train"],
            nav_train=built["nav_train"],
        )
        return cls(fly, data)


def _coerce(key: str, value: Any, typ: type) -> Any:
    if typ is bool:
        if not isinstance(value, bool):
            raise CliError(f"config key {key} needs true/false, got {value!r}")
        return value
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise CliError(f"config key {key} needs {typ.__name__}, got {value!r}") from None


def load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    values = yaml.safe_load(text) or {}
    if not isinstance(values, dict) or any(isinstance(v, (dict, list)) for v in values.values()):
        raise CliError(f"config {path} must be a flat mapping of key: value")
    return values


def resolve_config(args: argparse.Namespace) -> CommandConfig:
    values = load_config_file(args.config)
    overrides = {
        "master_seed": args.seed,
        "threads": args.threads,
        "rounds": getattr(args, "rounds", None),
        "k_sample": getattr(args, "k_sample", None),
        "ndtw_min": getattr(args, "ndtw_min", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return CommandConfig.build(values)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------- helpers


def _out(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out or default)


def _need(args: argparse.Namespace, name: str) -> str:
    value = getattr(args, name)
    if value is None:
        raise CliError(f"--{name.replace('_', '-')} is required for {args.command}")
    return value


def eval_items_from_pool(pool: Sequence[PairedSample]) -> list[EvalItem]:
    """Group reference pairs by trajectory, in first-seen order."""
    items: dict[str, tuple] = {}
    for p in pool:
        traj, refs = items.setdefault(p.traj.traj_id, (p.traj, []))
        refs.append(p.instr)
    return [EvalItem(traj, tuple(refs)) for traj, refs in items.values()]


def eval_pool(items: Sequence[EvalItem]) -> list[PairedSample]:
    from .flywheel import eval_pairs

    return eval_pairs(items)


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=False))


# ---------------------------------------------------------------- commands


def cmd_gen_worlds(args, cfg: CommandConfig) -> None:
    out = _out(args, "worlds")
    envs = make_worlds(cfg.data, cfg.flywheel.master_seed)
    for split in sorted({e.split for e in envs.values()}):
        path = ds.save_envs(out / f"{split}.jsonl", {k: e for k, e in envs.items() if e.split == split})
        _print_json({"split": split, "envs": sum(e.split == split for e in envs.values()), "path": str(path)})


def _load_worlds(args) -> dict:
    envs: dict = {}
    for path in _need(args, "worlds"):
        envs.update(ds.load_envs(path))
    return envs


def cmd_make_seed(args, cfg: CommandConfig) -> None:
    out = _out(args, "data")
    data = make_desk_data(cfg.data, cfg.flywheel.master_seed, _load_worlds(args) if args.worlds else None)
    ds.save_pool(out / "seed.jsonl", data.seed_pairs)
    ds.save_pool(out / "eval.jsonl", eval_pool(data.eval_items))
    _print_json({"seed_pairs": len(data.seed_pairs), "eval_pairs": sum(len(i.refs) for i in data.eval_items)})


def cmd_sample_trajs(args, cfg: CommandConfig) -> None:
    out = _out(args, "data")
    data = make_desk_data(cfg.data, cfg.flywheel.master_seed, _load_worlds(args) if args.worlds else None)
    ds.save_trajectories(out / "trajs.jsonl", data.traj_pool)
    _print_json({"trajectories": len(data.traj_pool)})


def cmd_run_flywheel(args, cfg: CommandConfig) -> None:
    out = _out(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.flywheel.master_seed
    data = make_desk_data(cfg.data, seed, _load_worlds(args) if args.worlds else None)
    envs = data.envs
    seed_pairs = ds.load_pool(args.seed_pool) if args.seed_pool else data.seed_pairs
    traj_pool = ds.load_trajectories(args.traj_pool) if args.traj_pool else data.traj_pool
    items = eval_items_from_pool(ds.load_pool(args.eval_pool)) if args.eval_pool else data.eval_items
    manifest = ds.RunManifest(f"seed{seed}", cfg.snapshot())
    written = [
        ds.save_envs(out / "worlds.jsonl", envs),
        ds.save_pool(out / "seed.jsonl", seed_pairs),
        ds.save_trajectories(out / "trajs.jsonl", traj_pool),
        ds.save_pool(out / "eval.jsonl", eval_pool(items)),
    ]
    state, reports = run_flywheel(seed_pairs, traj_pool, cfg.flywheel, envs, items, out_dir=out, baseline=not args.no_baseline)
    written += sorted(p for p in out.glob("round_*/*.jsonl"))
    written.append(ds.save_report_records(out / "reports.jsonl", reports))
    for fmt, name in (("csv", "report.csv"), ("markdown", "report.md")):
        ds.emit_report(reports, fmt, out / name)
        written.append(out / name)
    for path in written:
        manifest.add(out, path)
    manifest.save(out / "manifest.json")
    for r in reports:
        _print_json(r.row())


def _models(args):
    from .datastore import load_generator, load_navigator

    N = load_navigator(args.navigator) if args.navigator else None
    G = load_generator(args.generator) if args.generator else None
    return N, G


def cmd_score(args, cfg: CommandConfig) -> None:
    envs = _load_worlds(args)
    pool = ds.load_pool(_need(args, "pool"))
    models = _models(args)
    seed = cfg.flywheel.master_seed
    from .scoring import parallel_map

    values = parallel_map(lambda p: score_pair(args.scorer, models, envs[p.env_id], p, seed), pool, cfg.flywheel.threads)
    lines = [{"pair_id": p.pair_id, "score": v} for p, v in zip(pool, values)]
    if args.top is not None:
        keep = ids(rank_and_take_top(pool, args.scorer, models, args.top, seed, envs, cfg.flywheel.threads))
        if args.out:
            ds.save_pool(args.out, [p for p in pool if p.pair_id in keep])
        lines = [ln for ln in lines if ln["pair_id"] in keep]
    for ln in lines:
        _print_json(ln)


def cmd_filter(args, cfg: CommandConfig) -> None:
    envs = _load_worlds(args)
    pool = ds.load_pool(_need(args, "pool"))
    N, _ = _models(args)
    if N is None:
        raise CliError("filter needs --navigator")
    out = _out(args, "filtered.jsonl")
    th, threads = cfg.flywheel.thresholds, cfg.flywheel.threads
    if args.kind == "generator":
        kept, summary = filter_generator_data(pool, N, th, envs, threads)
    else:
        kept, _rejected, summary = filter_navigator_data(pool, N, th, envs, threads)
    ds.save_pool(out, kept)
    _print_json(asdict(summary))


def cmd_eval(args, cfg: CommandConfig) -> None:
    envs = _load_worlds(args)
    items = eval_items_from_pool(ds.load_pool(_need(args, "pool")))
    N, G = _models(args)
    if N is None and G is None:
        raise CliError("eval needs --navigator and/or --generator")
    nav, gen = evaluate_round(N, G, items, envs, cfg.flywheel.threads)
    _print_json({"nav": nav, "gen": gen})


def cmd_stats(args, cfg: CommandConfig) -> None:
    _print_json(ds.dataset_stats(ds.load_pool(_need(args, "pool")))._asdict())


def cmd_report(args, cfg: CommandConfig) -> None:
    reports = ds.load_report_records(Path(_need(args, "run")) / "reports.jsonl")
    text = ds.emit_report(reports, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)


COMMANDS: dict[str, Callable] = {
    "gen-worlds": cmd_gen_worlds,
    "make-seed": cmd_make_seed,
    "sample-trajs": cmd_sample_trajs,
    "run-flywheel": cmd_run_flywheel,
    "score": cmd_score,
    "filter": cmd_filter,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "report": cmd_report,
}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one parseable line, usage exit code
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML file of configuration keys")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threads", type=int, help="worker threads for parallel maps")
    common.add_argument("--rounds", type=int)
    common.add_argument("--k-sample", type=int, dest="k_sample")
    common.add_argument("--ndtw-min", type=float, dest="ndtw_min")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="navflywheel", description="Navigation data flywheel on synthetic graph worlds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    worlds = argparse.ArgumentParser(add_help=False)
    worlds.add_argument("--worlds", nargs="+", help="environment files")
    models = argparse.ArgumentParser(add_help=False)
    models.add_argument("--navigator", help="navigator model file")
    models.add_argument("--generator", help="generator model file")
    pool = argparse.ArgumentParser(add_help=False)
    pool.add_argument("--pool", help="pair pool file")

    sub.add_parser("gen-worlds", parents=[common], help="write environment files per split")
    sub.add_parser("make-seed", parents=[common, worlds], help="write the seed pool and eval references")
    sub.add_parser("sample-trajs", parents=[common, worlds], help="write the unlabeled trajectory pool")
    run = sub.add_parser("run-flywheel", parents=[common, worlds], help="run every flywheel round")
    run.add_argument("--seed-pool")
    run.add_argument("--traj-pool")
    run.add_argument("--eval-pool")
    run.add_argument("--no-baseline", action="store_true")
    score = sub.add_parser("score", parents=[common, worlds, models, pool], help="score every pair of a pool")
    score.add_argument("--scorer", choices=SCORERS, default="navigator_ndtw")
    score.add_argument("--top", type=int, help="keep only the best N pairs")
    flt = sub.add_parser("filter", parents=[common, worlds, models, pool], help="apply a navigator filter")
    flt.add_argument("--kind", choices=("generator", "navigator"), default="navigator")
    sub.add_parser("eval", parents=[common, worlds, models, pool], help="evaluate models on reference pairs")
    sub.add_parser("stats", parents=[common, pool], help="dataset statistics of a pool")
    rep = sub.add_parser("report", parents=[common], help="render a run's report")
    rep.add_argument("--run", help="run directory")
    rep.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (CliError, FlywheelError, ds.SchemaError, OSError, ValueError, KeyError) as exc:
        kind = type(exc).__name__
        message = str(exc).replace("\n", " ")
        sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
        return EXIT_ERROR
    return 0


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
