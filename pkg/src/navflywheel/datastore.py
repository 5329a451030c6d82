"""Persistence for environments, pools, models and reports.

Every file is line-delimited JSON. The first line is a header naming the
schema and its version; each later line holds one record with its fields in
a fixed order. Floats go through ``json``, which writes the shortest decimal
that round-trips, so equal content always gives equal bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .flywheel import GEN_METRICS, NAV_METRICS, RoundReport, RoundState, report_asdict
from .generator import GeneratorParams
from .lang import Instruction, VocabStats, vocab_stats
from .nav_metrics import NavScores
from .navigator import NavigatorParams
from .scoring import FilterSummary, PairedSample, PairScores, Provenance
from .text_metrics import TextScores
from .trajectories import Action, Trajectory
from .world import Environment, Node

SCHEMA_VERSION = 1
POOL_SCHEMA = "navflywheel.pool"
ENV_SCHEMA = "navflywheel.envs"
TRAJ_SCHEMA = "navflywheel.trajs"
NAV_SCHEMA = "navflywheel.navigator"
GEN_SCHEMA = "navflywheel.generator"
POOL_FIELDS = ("pair_id", "env_id", "traj", "instr", "provenance", "scores")


class SchemaError(ValueError):
    """A persisted file does not match its schema."""

    def __init__(self, path: str | Path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_lines(path: str | Path, schema: str, records: Iterable[Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({"schema": schema, "version": SCHEMA_VERSION}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def _read_lines(path: str | Path, schema: str) -> Iterable[tuple[int, Any]]:
    """Yield ``(line number, decoded record)`` after checking the header."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError(path, 1, "missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(path, 1, f"bad header: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("schema") != schema:
        raise SchemaError(path, 1, f"expected schema {schema!r}")
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaError(path, 1, f"unsupported version {header.get('version')!r}")
    for no, text in enumerate(lines[1:], start=2):
        try:
            yield no, json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, no, f"invalid JSON: {exc.msg}") from None


# ---------------------------------------------------------------- records


def traj_record(traj: Trajectory) -> dict:
    return {
        "traj_id": traj.traj_id,
        "env_id": traj.env_id,
        "nodes": list(traj.nodes),
        "headings": list(traj.headings),
        "actions": [[a.kind, a.degrees] for a in traj.actions],
    }


def traj_from_record(rec: Mapping) -> Trajectory:
    return Trajectory(
        str(rec["traj_id"]),
        str(rec["env_id"]),
        tuple(int(n) for n in rec["nodes"]),
        tuple(float(h) for h in rec["headings"]),
        tuple(Action(str(k), float(d)) for k, d in rec["actions"]),
    )


def scores_record(scores: PairScores | None) -> dict | None:
    if scores is None:
        return None
    return {
        "navigator": scores.navigator,
        "nav": scores.nav.as_dict(),
        "text": None if scores.text is None else scores.text.as_dict(),
    }


def scores_from_record(rec: Mapping | None) -> PairScores | None:
    if rec is None:
        return None
    text = rec.get("text")
    return PairScores(str(rec["navigator"]), NavScores(**rec["nav"]), None if text is None else TextScores(**text))


def pair_record(pair: PairedSample) -> dict:
    traj = traj_record(pair.traj)
    del traj["env_id"]
    return {
        "pair_id": pair.pair_id,
        "env_id": pair.env_id,
        "traj": traj,
        "instr": pair.instr.text,
        "provenance": pair.provenance.tag(),
        "scores": scores_record(pair.scores),
    }


def pair_from_record(rec: Mapping) -> PairedSample:
    if not isinstance(rec, dict) or tuple(rec) != POOL_FIELDS:
        got = list(rec) if isinstance(rec, dict) else type(rec).__name__
        raise ValueError(f"fields must be {list(POOL_FIELDS)}, got {got}")
    traj = traj_from_record({**rec["traj"], "env_id": rec["env_id"]})
    return PairedSample(
        str(rec["pair_id"]),
        traj,
        Instruction.from_text(rec["instr"]),
        Provenance.from_tag(rec["provenance"]),
        scores_from_record(rec["scores"]),
    )


# ---------------------------------------------------------------- pools


def save_pool(path: str | Path, pairs: Iterable[PairedSample]) -> Path:
    return _write_lines(path, POOL_SCHEMA, (pair_record(p) for p in pairs))


def load_pool(path: str | Path) -> list[PairedSample]:
    out = []
    for no, rec in _read_lines(path, POOL_SCHEMA):
        try:
            out.append(pair_from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(path, no, f"bad pair record: {exc}") from None
    return out


def save_trajectories(path: str | Path, trajs: Iterable[Trajectory]) -> Path:
    return _write_lines(path, TRAJ_SCHEMA, (traj_record(t) for t in trajs))


def load_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    for no, rec in _read_lines(path, TRAJ_SCHEMA):
        try:
            out.append(traj_from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(path, no, f"bad trajectory record: {exc}") from None
    return out


# ---------------------------------------------------------------- environments


def env_record(env: Environment) -> dict:
    return {
        "env_id": env.env_id,
        "split": env.split,
        "rng_seed": env.rng_seed,
        "nodes": [[n.node_id, list(n.position), [list(g) for g in n.landmarks]] for n in env.nodes],
        "edges": sorted([a, b] for a, b in env.edges),
    }


def env_from_record(rec: Mapping) -> Environment:
    nodes = tuple(
        Node(int(i), (float(pos[0]), float(pos[1])), tuple(tuple(int(x) for x in g) for g in lms))
        for i, pos, lms in rec["nodes"]
    )
    edges = frozenset((int(a), int(b)) for a, b in rec["edges"])
    return Environment(str(rec["env_id"]), str(rec["split"]), nodes, edges, int(rec["rng_seed"]))


def save_envs(path: str | Path, envs: Mapping[str, Environment]) -> Path:
    return _write_lines(path, ENV_SCHEMA, (env_record(envs[k]) for k in sorted(envs)))


def load_envs(path: str | Path) -> dict[str, Environment]:
    out = {}
    for no, rec in _read_lines(path, ENV_SCHEMA):
        try:
            env = env_from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(path, no, f"bad environment record: {exc}") from None
        out[env.env_id] = env
    return out


# ---------------------------------------------------------------- models


def save_navigator(path: str | Path, params: NavigatorParams) -> Path:
    recs = [{"version": params.version}]
    recs += [[name, float(w)] for name, w in zip(params.feature_names, params.weights)]
    return _write_lines(path, NAV_SCHEMA, recs)


def load_navigator(path: str | Path) -> NavigatorParams:
    lines = list(_read_lines(path, NAV_SCHEMA))
    if not lines or not isinstance(lines[0][1], dict):
        raise SchemaError(path, 2, "missing navigator metadata")
    try:
        names = tuple(str(n) for _, (n, _w) in lines[1:])
        weights = np.array([float(w) for _, (_n, w) in lines[1:]])
        return NavigatorParams(weights, names, int(lines[0][1]["version"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(path, 2, f"bad navigator record: {exc}") from None


def _table(floor: float, probs: Mapping[tuple[str, ...], float]) -> list:
    return [floor, [[list(t), p] for t, p in sorted(probs.items())]]


def _untable(rec: Sequence) -> tuple[float, dict[tuple[str, ...], float]]:
    floor, items = rec
    return float(floor), {tuple(t): float(p) for t, p in items}


def _key(ctx: tuple) -> list:
    return [list(x) if isinstance(x, tuple) else x for x in ctx]


def _unkey(rec: Sequence) -> tuple:
    return tuple(tuple(x) if isinstance(x, list) else x for x in rec)


def save_generator(path: str | Path, params: GeneratorParams) -> Path:
    """Header, metadata, fallback and naming tables, then one line per context."""
    recs: list[Any] = [
        {"version": params.version, "encoding": params.encoding},
        ["fallback", _table(*params.fallback)],
        ["naming", [list(p) for p in params.naming]],
    ]
    recs += [["coarse", _key(k), _table(*params.coarse[k])] for k in sorted(params.coarse, key=repr)]
    recs += [["fine", _key(k), _table(*params.fine[k])] for k in sorted(params.fine, key=repr)]
    return _write_lines(path, GEN_SCHEMA, recs)


def load_generator(path: str | Path) -> GeneratorParams:
    meta: dict | None = None
    fallback = None
    naming: tuple = ()
    coarse: dict = {}
    fine: dict = {}
    for no, rec in _read_lines(path, GEN_SCHEMA):
        try:
            if isinstance(rec, dict):
                meta = rec
            elif rec[0] == "fallback":
                fallback = _untable(rec[1])
            elif rec[0] == "naming":
                naming = tuple((float(a), float(b)) for a, b in rec[1])
            elif rec[0] in ("coarse", "fine"):
                (coarse if rec[0] == "coarse" else fine)[_unkey(rec[1])] = _untable(rec[2])
            else:
                raise ValueError(f"unknown record kind {rec[0]!r}")
        except (IndexError, TypeError, ValueError) as exc:
            raise SchemaError(path, no, f"bad generator record: {exc}") from None
    if meta is None or fallback is None:
        raise SchemaError(path, 1, "generator file lacks metadata or fallback table")
    return GeneratorParams(fine, coarse, fallback, naming, int(meta["version"]), str(meta["encoding"]))


# ---------------------------------------------------------------- rounds and reports


def save_round(out_dir: str | Path, state: RoundState) -> dict[str, Path]:
    """Write every pool and both models of a round under ``round_{t}/``."""
    base = Path(out_dir) / f"round_{state.t}"
    paths = {name: save_pool(base / f"{name}.jsonl", pool) for name, pool in sorted(state.pools.items())}
    paths["navigator"] = save_navigator(base / "navigator.jsonl", state.N)
    paths["generator"] = save_generator(base / "generator.jsonl", state.G)
    return paths


def dataset_stats(pool: Iterable[PairedSample]) -> VocabStats:
    return vocab_stats(pool)


REPORT_COLUMNS = ("round", *NAV_METRICS, *GEN_METRICS)


def _cell(v: float | str) -> str:
    return v if isinstance(v, str) else f"{v:.4f}"


def report_rows(reports: Sequence[RoundReport]) -> list[list[str]]:
    return [[_cell(r.row()[c]) for c in REPORT_COLUMNS] for r in reports]


def emit_report(reports: Sequence[RoundReport], fmt: str = "csv", path: str | Path | None = None) -> str:
    """Render the round table; writes it to ``path`` when given."""
    rows = report_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(rows)
        text = buf.getvalue()
    elif fmt == "markdown":
        nav, gen = len(NAV_METRICS), len(GEN_METRICS)
        lines = [
            "| | " + " | ".join(["Instruction Following"] + [""] * (nav - 1) + ["Instruction Generation"] + [""] * (gen - 1)) + " |",
            "| " + " | ".join(REPORT_COLUMNS) + " |",
            "|" + "---|" * len(REPORT_COLUMNS),
        ]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


REPORT_SCHEMA = "navflywheel.reports"


def save_report_records(path: str | Path, reports: Sequence[RoundReport]) -> Path:
    """Reports without wall-clock time, so reruns give identical bytes."""
    return _write_lines(path, REPORT_SCHEMA, (report_asdict(r) for r in reports))


def load_report_records(path: str | Path) -> list[RoundReport]:
    out = []
    for no, rec in _read_lines(path, REPORT_SCHEMA):
        try:
            filters = tuple(FilterSummary(**f) for f in rec.pop("filters"))
            out.append(RoundReport(**rec, filters=filters))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(path, no, f"bad report record: {exc}") from None
    return out


def parse_csv_report(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------- manifests


@dataclass
class RunManifest:
    run_id: str
    config: dict
    artifacts: dict[str, str] = field(default_factory=dict)  # name -> path relative to root
    digests: dict[str, str] = field(default_factory=dict)

    def add(self, root: str | Path, path: str | Path) -> None:
        rel = Path(path).resolve().relative_to(Path(root).resolve()).as_posix()
        self.artifacts[rel] = rel
        self.digests[rel] = file_digest(path)

    def verify(self, root: str | Path) -> list[str]:
        """Names of artifacts that are missing or no longer match."""
        bad = []
        for name, rel in sorted(self.artifacts.items()):
            p = Path(root) / rel
            if not p.exists() or file_digest(p) != self.digests.get(name):
                bad.append(name)
        return bad

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        body = asdict(self)
        body["artifacts"] = dict(sorted(self.artifacts.items()))
        body["digests"] = dict(sorted(self.digests.items()))
        path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
