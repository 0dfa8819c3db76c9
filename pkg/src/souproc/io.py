"""Configuration files, run outputs and the manifest.

Config files are TOML::

    seed = 42
    [model]      gamma, beta, d, m0, mode
    [initial]    kind, mean, sd, points
    [numerics]   N, h, t_max, Q, particle_cap, stop_mass
    [scenario]   name, replicates, conditioning
    [scenario.params]   scenario-specific knobs
    [output]     dir, grid_stride

Unknown keys and type mismatches are errors.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io as _io
import json
import math
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import tomli
import tomli_w

from . import __version__
from .experiments import RunResult, Scenario, aggregate, make_scenario
from .experiments.core import ReplicateSummary, TrajectoryRecord
from .experiments.scenarios import KINDS
from .model import ConfigError, InitialMeasure, Mode, SimConfig, validate_config
from .rng import replicate_seed

NUM = (int, float)

# (section, key) -> (accepted types, default); a default of ... marks a required key.
SCHEMA: Dict[Tuple[str, str], Tuple[tuple, Any]] = {
    ("", "seed"): ((int,), 0),
    ("model", "gamma"): (NUM, ...),
    ("model", "beta"): (NUM, ...),
    ("model", "d"): ((int,), 1),
    ("model", "m0"): (NUM, 1.0),
    ("model", "mode"): ((str,), None),
    ("initial", "kind"): ((str,), "point"),
    ("initial", "mean"): ((list,), None),
    ("initial", "sd"): (NUM, 1.0),
    ("initial", "points"): ((list,), None),
    ("numerics", "N"): ((int,), 100),
    ("numerics", "h"): (NUM, 0.01),
    ("numerics", "t_max"): (NUM, 10.0),
    ("numerics", "Q"): ((int,), 32),
    ("numerics", "particle_cap"): ((int,), 0),
    ("numerics", "stop_mass"): (NUM, 0.0),
    ("scenario", "name"): ((str,), ...),
    ("scenario", "replicates"): ((int,), 1),
    ("scenario", "conditioning"): ((str,), None),
    ("scenario", "params"): ((dict,), None),
    ("output", "dir"): ((str,), "out"),
    ("output", "grid_stride"): ((int,), 1),
}
SECTIONS = ("model", "initial", "numerics", "scenario", "output")

CSV_BASE = ["replicate", "t", "mass"]
CONFIG_DIR = Path(__file__).parent / "experiments" / "configs"


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig
    scenario: str
    replicates: int = 1
    conditioning: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    grid_stride: int = 1

    def build(self) -> Scenario:
        return make_scenario(self.scenario, validate_config(self.sim), self.replicates,
                             self.conditioning, self.params)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, sim=replace(self.sim, seed=int(seed)))


def _type_ok(value, types) -> bool:
    if isinstance(value, bool):
        return bool in types
    if int in types and isinstance(value, int):
        return True
    return isinstance(value, tuple(t for t in types if t is not int))


def _typename(types) -> str:
    if types == NUM:
        return "a number"
    return " or ".join({int: "an integer", str: "a string", list: "a list", dict: "a table"}[t] for t in types)


def _lookup(doc: dict) -> Dict[Tuple[str, str], Any]:
    found = {}
    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            for sub, v in value.items():
                if (key, sub) not in SCHEMA:
                    raise ConfigError(f"unknown key {key}.{sub}")
                found[(key, sub)] = v
        elif ("", key) in SCHEMA:
            found[("", key)] = value
        else:
            raise ConfigError(f"unknown key {key}")
    for (sec, key), (types, default) in SCHEMA.items():
        name = f"{sec}.{key}" if sec else key
        if (sec, key) in found:
            v = found[(sec, key)]
            if not _type_ok(v, types):
                raise ConfigError(f"{name}: expected {_typename(types)}, got {type(v).__name__}")
        elif default is ...:
            raise ConfigError(f"missing required key {name}")
    return found


def _vec(v, name) -> tuple:
    if not all(isinstance(x, NUM) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{name}: expected a list of numbers")
    return tuple(float(x) for x in v)


def config_from_dict(doc: dict) -> RunConfig:
    f = _lookup(doc)

    def get(sec, key):
        return f.get((sec, key), SCHEMA[(sec, key)][1])

    mean = get("initial", "mean")
    points = get("initial", "points")
    if points is not None:
        points = tuple(_vec(p if isinstance(p, list) else [p], "initial.points") for p in points)
    init = InitialMeasure(m0=float(get("model", "m0")), kind=get("initial", "kind"),
                          mean=None if mean is None else _vec(mean, "initial.mean"),
                          sd=float(get("initial", "sd")), points=points)
    name = get("scenario", "name")
    if name not in KINDS:
        raise ConfigError(f"unknown scenario {name!r}")
    mode = get("model", "mode") or KINDS[name].mode.value
    try:
        mode = Mode(mode)
    except ValueError:
        raise ConfigError(f"model.mode: unknown mode {mode!r}") from None
    seed = get("", "seed")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    sim = SimConfig(d=get("model", "d"), gamma=float(get("model", "gamma")),
                    beta=float(get("model", "beta")), N=get("numerics", "N"),
                    h=float(get("numerics", "h")), t_max=float(get("numerics", "t_max")), mode=mode,
                    initial=init, seed=seed, Q=get("numerics", "Q"),
                    particle_cap=get("numerics", "particle_cap"),
                    stop_mass=float(get("numerics", "stop_mass")))
    return RunConfig(sim=sim, scenario=name, replicates=get("scenario", "replicates"),
                     conditioning=get("scenario", "conditioning"),
                     params=dict(get("scenario", "params") or {}),
                     output_dir=get("output", "dir"), grid_stride=get("output", "grid_stride"))


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def parse_config_text(text: str) -> RunConfig:
    return config_from_dict(tomli.loads(text))


def config_to_dict(rc: RunConfig) -> dict:
    s = rc.sim
    init = {"kind": s.initial.kind, "sd": s.initial.sd}
    if s.initial.mean is not None:
        init["mean"] = list(s.initial.mean)
    if s.initial.points is not None:
        init["points"] = [list(p) for p in s.initial.points]
    scenario = {"name": rc.scenario, "replicates": rc.replicates}
    if rc.conditioning is not None:
        scenario["conditioning"] = rc.conditioning
    params = {k: v for k, v in rc.params.items() if v is not None}
    if params:
        scenario["params"] = params
    return {
        "seed": int(s.seed),
        "model": {"gamma": s.gamma, "beta": s.beta, "d": s.d, "m0": s.initial.m0,
                  "mode": Mode(s.mode).value},
        "initial": init,
        "numerics": {"N": s.N, "h": s.h, "t_max": s.t_max, "Q": s.Q,
                     "particle_cap": s.particle_cap, "stop_mass": s.stop_mass},
        "scenario": scenario,
        "output": {"dir": rc.output_dir, "grid_stride": rc.grid_stride},
    }


def _tomlable(x):
    if isinstance(x, dict):
        return {k: _tomlable(v) for k, v in sorted(x.items())}
    if isinstance(x, (list, tuple)):
        return [_tomlable(v) for v in x]
    return x


def emit_config(rc: RunConfig) -> str:
    """Canonical TOML text: every key explicit, tables and keys sorted."""
    return tomli_w.dumps(_tomlable(config_to_dict(rc)))


def builtin_config(name: str) -> RunConfig:
    path = CONFIG_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"no built-in config for {name!r}")
    return parse_config(path)


def builtin_names() -> List[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.toml"))


# --- outputs ------------------------------------------------------------------------

def csv_header(d: int) -> List[str]:
    return (CSV_BASE + [f"com_{i + 1}" for i in range(d)] + ["spread", "bl_ordinary", "bl_interacting"]
            + [f"exp_gamma_t_zbar_{i + 1}" for i in range(d)]
            # appended columns
            + [f"zbar_{i + 1}" for i in range(d)] + ["spread_ordinary"])


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def timeseries_csv(trajectories: Sequence[TrajectoryRecord], d: int, stride: int = 1) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(d))
    for rec in trajectories:
        n = rec.times.size
        rows = list(range(0, n, stride))
        if rows[-1] != n - 1:
            rows.append(n - 1)
        for k in rows:
            w.writerow([rec.replicate, _fmt(rec.times[k]), _fmt(rec.mass[k])]
                       + [_fmt(v) for v in rec.com[k]]
                       + [_fmt(rec.spread[k]), _fmt(rec.bl_ordinary[k]), _fmt(rec.bl_interacting[k])]
                       + [_fmt(v) for v in rec.exp_gamma_t_zbar[k]]
                       + [_fmt(v) for v in rec.zbar[k]] + [_fmt(rec.spread_ordinary[k])])
    return buf.getvalue()


def summaries_jsonl(summaries: Sequence[ReplicateSummary]) -> str:
    return "".join(json.dumps(s.to_dict(), sort_keys=True, allow_nan=False) + "\n" for s in summaries)


def report_document(result: RunResult) -> dict:
    scn = result.scenario
    from .experiments.core import _plain
    d = scn.cfg.d
    metric = ("min(W1, 2), exact in one dimension" if d == 1 else
              f"sliced surrogate: mean of min(W1, 2) over Q={scn.cfg.Q} random directions")
    return {"scenario": scn.name, "description": scn.description, "gating": scn.gating,
            "bl_metric": metric,
            "conditioning": scn.conditioning, "replicates": scn.replicates,
            "rules": [r.to_dict() for r in scn.pass_rules],
            "statistics": _plain(result.statistics), "verdicts": result.verdicts,
            "passed": result.passed}


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_outputs(result: RunResult, rc: RunConfig, out_dir, *, threads: int = 1,
                  thread_source: str = "flag", started: Optional[str] = None) -> Dict[str, Path]:
    """Write timeseries.csv, summaries.jsonl, report.json and manifest.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files = {
        "timeseries.csv": timeseries_csv(result.trajectories, rc.sim.d, rc.grid_stride),
        "summaries.jsonl": summaries_jsonl(result.summaries),
        "report.json": _dump_json(report_document(result)),
    }
    paths = {}
    for name, text in files.items():
        p = out / name
        try:
            p.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        paths[name] = p
    now = _dt.datetime.now(_dt.timezone.utc).isoformat()
    manifest = {
        "config": config_to_dict(rc),
        "config_text": emit_config(rc),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed_base": int(rc.sim.seed),
        "replicate_seeds": [replicate_seed(rc.sim.seed, i) for i in range(rc.replicates)],
        "seed_rule": "seed_i = (seed_base + i) mod 2**64",
        "threads": threads,
        "thread_source": thread_source,
        "timestamps": {"started": started or now, "finished": now},
        "files": {name: {"sha256": sha256_file(p), "bytes": p.stat().st_size}
                  for name, p in sorted(paths.items())},
    }
    mp = out / "manifest.json"
    mp.write_text(_dump_json(manifest))
    paths["manifest.json"] = mp
    return paths


def load_summaries(path) -> List[ReplicateSummary]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(ReplicateSummary.from_dict(json.loads(line)))
    return out


@dataclass
class ReportCheck:
    result: RunResult
    digest_mismatches: List[str]
    verdicts_changed: bool
    document: dict


def report_from_dir(out_dir) -> ReportCheck:
    """Re-evaluate verdicts from saved summaries and verify digests."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {out}")
    manifest = json.loads(manifest_path.read_text())
    mismatches = []
    for name, info in manifest.get("files", {}).items():
        p = out / name
        if not p.exists() or sha256_file(p) != info["sha256"]:
            mismatches.append(name)
    rc = parse_config_text(manifest["config_text"])
    scn = rc.build()
    summaries = load_summaries(out / "summaries.jsonl")
    result = aggregate(scn, summaries)
    doc = report_document(result)
    changed = False
    rp = out / "report.json"
    if rp.exists():
        old = json.loads(rp.read_text())
        changed = old.get("verdicts") != json.loads(json.dumps(doc["verdicts"]))
    return ReportCheck(result, mismatches, changed, doc)
