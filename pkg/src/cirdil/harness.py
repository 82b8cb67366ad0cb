"""Experiment orchestration: task sequences, method/exemplar grids, lambda sweeps.

A run is one (cell, seed) pair: initial training on the first task, then one
adaptation stage per further task, evaluating every domain's test split
after each stage. Runs sharing a seed are executed in the same worker so the
initial model and similarity scores are computed once.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .channel import Scenario, default_scenario, load_dataset
from .dil import (METHODS, ConfigError, DilConfig, ProgressiveNet, adapt, evaluate, predict,
                  rng_for, train_initial)
from .nn import NonFiniteError
from .sampling import (STRATEGIES, ExemplarSet, SelectionError, compute_errors, empty_set,
                       select_by_error, select_by_similarity, select_equally_distributed,
                       select_random, similarity_scores)
from .similarity import KINDS, Metric

log = logging.getLogger(__name__)

_SELECT = 3  # rng stream tag for exemplar selection

ALL_METRICS = ("euclidean", "manhattan", "chebyshev", "minkowski:3", "cosine", "canberra",
               "braycurtis", "correlation")

DEFAULT_CONFIG = {
    "scenario": {"file": None, "dataset_dir": None, "samples": 5000, "seed": 100},
    "tasks": ["T1", "T2"],
    "dil": {
        "methods": ["finetune"],
        "lambdas": {},
        "weight_averaging": False,
        "epochs_initial": 50,
        "epochs_adapt": 5,
        "batch_size": 16,
        "lr": 0.001,
        "milestones": [30, 40],
        "gamma": 0.1,
        "hidden": [256, 128, 64],
        "si_xi": 0.1,
    },
    "selection": {"n": [0], "strategies": ["random"]},
    "sweep": {"method": "ewc", "lambdas": [0.0, 100.0, 1000.0, 10000.0, 100000.0], "n": [0, 50, 100, 200]},
    "seeds": [0, 1, 2, 3, 4],
}

_strategy_pattern = "^(" + "|".join(s for s in STRATEGIES if s != "similarity") + \
    "|similarity:(" + "|".join(k for k in KINDS if k != "minkowski") + "|minkowski(:[0-9.]+)?))$"

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "tasks", "dil", "selection", "sweep", "seeds"],
    "properties": {
        "scenario": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "file": {"type": ["string", "null"]},
                "dataset_dir": {"type": ["string", "null"]},
                "samples": {"type": ["integer", "null"], "minimum": 10},
                "seed": {"type": "integer"},
            },
        },
        "tasks": {"type": "array", "minItems": 1, "items": {"type": "string"}, "uniqueItems": True},
        "dil": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "methods": {"type": "array", "minItems": 1, "uniqueItems": True,
                            "items": {"enum": list(METHODS)}},
                "lambdas": {"type": "object", "propertyNames": {"enum": ["ewc", "lwf", "si"]},
                            "additionalProperties": {"type": "number", "minimum": 0}},
                "weight_averaging": {"type": "boolean"},
                "epochs_initial": {"type": "integer", "minimum": 1},
                "epochs_adapt": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "milestones": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "hidden": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                "si_xi": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "selection": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
                "strategies": {"type": "array", "minItems": 1,
                               "items": {"type": "string", "pattern": _strategy_pattern}},
            },
        },
        "sweep": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "method": {"enum": ["ewc", "lwf", "si"]},
                "lambdas": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
                "n": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
            },
        },
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
    },
}


# --- configuration ------------------------------------------------------------------

def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "lambdas":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(config, text):
    """Set ``a.b.c=value``; the value is read as JSON, falling back to a plain string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"override {key!r}: no section {p!r}")
        node = node[p]
    node[parts[-1]] = value
    return config


def load_config(source=None, overrides=()) -> dict:
    """Defaults, then ``source`` (path or dict), then ``key=value`` overrides; validated."""
    if source is None:
        user = {}
    elif isinstance(source, dict):
        user = source
    else:
        try:
            user = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {source} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {source}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    config = _merge(DEFAULT_CONFIG, user)
    for o in overrides:
        apply_override(config, o)
    validate_config(config)
    return config


def validate_config(config):
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


@dataclass(frozen=True)
class Cell:
    """One grid point; ``strategy`` is 'none' whenever n == 0."""

    method: str
    n: int
    strategy: str
    lam: float
    weight_averaging: bool = False

    @property
    def slug(self) -> str:
        s = self.strategy.replace(":", "-")
        wa = "_wa" if self.weight_averaging else ""
        return f"{self.method}_n{self.n}_{s}_lam{self.lam:g}{wa}"


def method_lambda(method, lambdas):
    from .dil import DEFAULT_LAMBDA
    return float(lambdas.get(method, DEFAULT_LAMBDA.get(method, 0.0)))


def expand_cells(methods, ns, strategies, lambdas=None, weight_averaging=False):
    """Cartesian grid; N=0 collapses all strategies into one 'none' cell."""
    cells = []
    for m in methods:
        lam = method_lambda(m, lambdas or {})
        for n in ns:
            for s in (["none"] if n == 0 else strategies):
                c = Cell(m, int(n), s, lam, weight_averaging and m != "pnn")
                if c not in cells:
                    cells.append(c)
    return cells


@dataclass
class ExperimentSpec:
    config: dict
    scenario: Scenario
    tasks: list
    cells: list
    seeds: list

    @property
    def samples(self):
        return self.config["scenario"]["samples"]

    def training(self) -> dict:
        d = self.config["dil"]
        return {k: d[k] for k in ("epochs_initial", "epochs_adapt", "batch_size", "lr", "gamma", "si_xi")} | {
            "milestones": tuple(d["milestones"]), "hidden": tuple(d["hidden"])}

    def dil_config(self, cell: Cell, seed) -> DilConfig:
        return DilConfig(method=cell.method, lam=cell.lam, weight_averaging=cell.weight_averaging,
                         seed=seed, **self.training())

    def with_cells(self, cells, tasks=None) -> "ExperimentSpec":
        return ExperimentSpec(self.config, self.scenario, list(tasks or self.tasks), list(cells), self.seeds)


def build_spec(config: dict) -> ExperimentSpec:
    sc = config["scenario"]
    if sc.get("file"):
        try:
            scenario = Scenario.load(sc["file"])
        except FileNotFoundError:
            raise ConfigError(f"scenario file {sc['file']} not found") from None
    else:
        scenario = default_scenario(count=sc.get("samples") or 5000, seed=sc["seed"])
    missing = [t for t in config["tasks"] if t not in scenario.task_names()]
    if missing:
        raise ConfigError(f"tasks not in scenario: {', '.join(missing)}")
    d, sel = config["dil"], config["selection"]
    for s in sel["strategies"]:
        if s.startswith("similarity:"):
            Metric.parse(s.split(":", 1)[1])
    cells = expand_cells(d["methods"], sel["n"], sel["strategies"], d["lambdas"], d["weight_averaging"])
    return ExperimentSpec(config, scenario, list(config["tasks"]), cells, list(config["seeds"]))


def load_datasets(spec: ExperimentSpec) -> dict:
    sc = spec.config["scenario"]
    if sc.get("dataset_dir"):
        root = Path(sc["dataset_dir"])
        out = {}
        for name in spec.tasks:
            path = root / f"{name}.cirds"
            if not path.exists():
                raise ConfigError(f"dataset {path} not found")
            out[name] = load_dataset(path)
        return out
    data = spec.scenario.generate(samples=sc.get("samples"), names=set(spec.tasks))
    return {name: data[name] for name in spec.tasks}


# --- selection ----------------------------------------------------------------------

_score_cache: dict = {}


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def cached_similarity_scores(prev, cur, metric):
    """Nearest-previous-domain distance for every static train sample of ``cur``."""
    pool = cur.static_train()
    key = (_digest(prev.positions, prev.train_idx, cur.positions, pool), str(Metric.parse(metric)))
    if key not in _score_cache:
        _score_cache[key] = similarity_scores(prev.features[prev.train_idx], cur.features[pool], metric)
    return _score_cache[key]


def select_exemplars(strategy, n, model, cur, prev, seed, stage, domain_index, use_cache=True) -> ExemplarSet:
    """Exemplars from the static train part of ``cur``; the previous domain is ``prev``."""
    if n == 0:
        return empty_set()
    pool = cur.static_train()
    rng = rng_for(seed, stage, _SELECT)
    if strategy == "random":
        return select_random(pool, n, rng, seed)
    if strategy == "equally_distributed":
        return select_equally_distributed(pool, cur.positions[pool], n, rng, seed)
    if strategy in ("error_highest", "error_lowest"):
        records = compute_errors(lambda X: predict(model, X, domain_index), cur.features[pool],
                                 cur.positions[pool], pool)
        return select_by_error(records, n, highest=strategy == "error_highest")
    if strategy.startswith("similarity:"):
        metric = strategy.split(":", 1)[1]
        if use_cache:
            scores, _ = cached_similarity_scores(prev, cur, metric)
        else:
            scores = None
        return select_by_similarity(prev.features[prev.train_idx], pool, cur.features[pool], n,
                                    metric, scores=scores)
    raise SelectionError(f"unknown strategy {strategy!r}")


# --- single runs --------------------------------------------------------------------

def params_digest(model) -> str:
    cols = model.columns if isinstance(model, ProgressiveNet) else [model]
    return _digest(*[c.params for c in cols])


def leakage(ds, ids) -> list:
    """Test-split ids of ``ds`` present in ``ids``."""
    return sorted(int(i) for i in np.intersect1d(ds.test_idx, ids))


def run_one(spec: ExperimentSpec, data: dict, cell: Cell, seed: int) -> dict:
    """Execute one (cell, seed) run and return its manifest."""
    cfg = spec.dil_config(cell, seed)
    names = spec.tasks
    stages, timing = [], []
    manifest = {"cell": asdict(cell), "seed": seed, "tasks": names, "config": asdict(cfg),
                "status": "ok", "error": None, "stages": stages, "timing": timing,
                "leakage_violations": 0}
    model = None
    try:
        for s, name in enumerate(names):
            ds = data[name]
            t0 = time.perf_counter()
            if s == 0:
                model, state, fit = train_initial(ds, cfg)
                ex, stream, sel_t = empty_set(), ds.train_idx, 0.0
            else:
                ts = time.perf_counter()
                ex = select_exemplars(cell.strategy, cell.n, model, ds, data[names[s - 1]], seed, s, s)
                sel_t = time.perf_counter() - ts
                model, state, alog = adapt(model, state, ds, ex, cfg, stage=s)
                stream = alog.stream_ids
            train_t = time.perf_counter() - t0 - sel_t
            leaks = leakage(ds, stream) + leakage(ds, ex.ids)
            manifest["leakage_violations"] += len(leaks)
            mae = evaluate(model, data)
            ex_record = ex.to_dict()
            ex_record.pop("scores")
            stages.append({
                "stage": s, "task": name, "stream_size": int(len(stream)), "exemplars": ex_record,
                "checkpoint_sha256": params_digest(model), "checkpoints": state.tasks_done,
                "mae": mae, "leaked_ids": leaks,
            })
            timing.append({"stage": s, "train_seconds": train_t, "selection_seconds": sel_t})
    except (NonFiniteError, SelectionError, ValueError) as exc:
        log.error("run %s seed %d failed at stage %d: %s", cell.slug, seed, len(stages), exc)
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
    if model is not None and manifest["status"] == "ok":
        preds = {}
        for i, (name, ds) in enumerate(data.items()):
            idx = ds.test_idx
            p = predict(model, ds.features[idx], i)
            preds[name] = {"ids": idx.tolist(), "true": ds.positions[idx].tolist(), "pred": p.tolist()}
        manifest["predictions"] = preds
    return manifest


_worker: dict = {}


def _init_worker(config):
    spec = build_spec(config)
    _worker["spec"] = spec
    _worker["data"] = load_datasets(spec)


def _run_group(args):
    cells, seed, tasks = args
    spec = _worker["spec"].with_cells(cells, tasks)
    data = {t: _worker["data"][t] for t in tasks}
    return [run_one(spec, data, c, seed) for c in cells]


# --- results ------------------------------------------------------------------------

ROW_FIELDS = ("stage", "stage_task", "test_domain", "method", "n", "strategy", "lam", "weight_averaging")
RUN_HEADER = ROW_FIELDS + ("seed", "mae", "status")
TABLE_HEADER = ROW_FIELDS + ("mae_mean", "mae_std", "n_seeds", "n_failed", "status")


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class ResultTable:
    runs: list = field(default_factory=list)       # per-seed rows
    rows: list = field(default_factory=list)       # aggregated rows
    manifests: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(m["status"] != "ok" for m in self.manifests)

    @property
    def leakage_violations(self) -> int:
        return sum(m["leakage_violations"] for m in self.manifests)

    def lookup(self, **key):
        return [r for r in self.rows if all(r[k] == v for k, v in key.items())]


def run_rows(manifest, tasks) -> list:
    """Per-seed MAE rows; stages never reached are NaN and marked failed."""
    c = manifest["cell"]
    done = {st["stage"]: st for st in manifest["stages"]}
    rows = []
    for s, stage_task in enumerate(tasks):
        for dom in tasks:
            st = done.get(s)
            rows.append({"stage": s, "stage_task": stage_task, "test_domain": dom, "method": c["method"],
                         "n": c["n"], "strategy": c["strategy"], "lam": float(c["lam"]),
                         "weight_averaging": c["weight_averaging"], "seed": manifest["seed"],
                         "mae": float(st["mae"][dom]) if st else float("nan"),
                         "status": "ok" if st else "failed"})
    return rows


def aggregate(runs) -> list:
    """Mean and population std (ddof=0) over the seeds that completed each cell."""
    groups: dict = {}
    for r in runs:
        groups.setdefault(tuple(r[k] for k in ROW_FIELDS), []).append(r)
    out = []
    for key, rs in groups.items():
        vals = np.array([r["mae"] for r in rs if r["status"] == "ok"])
        n_failed = len(rs) - len(vals)
        out.append(dict(zip(ROW_FIELDS, key)) | {
            "mae_mean": float(vals.mean()) if len(vals) else float("nan"),
            "mae_std": float(vals.std()) if len(vals) else float("nan"),
            "n_seeds": len(vals), "n_failed": n_failed, "status": "failed" if n_failed else "ok"})
    return out


def run_experiment(spec: ExperimentSpec, jobs=1, data=None) -> ResultTable:
    """All cells x seeds; jobs > 1 spreads seed groups over worker processes."""
    order = [(c, s) for s in spec.seeds for c in spec.cells]
    by_seed = {}
    if jobs > 1 and len(spec.seeds) > 1 and data is None:
        groups = [(spec.cells, s, spec.tasks) for s in spec.seeds]
        with ProcessPoolExecutor(max_workers=min(jobs, len(groups)), initializer=_init_worker,
                                 initargs=(spec.config,)) as pool:
            for (_, s, _), ms in zip(groups, pool.map(_run_group, groups)):
                by_seed[s] = ms
    else:
        data = load_datasets(spec) if data is None else data
        data = {t: data[t] for t in spec.tasks}
        for s in spec.seeds:
            by_seed[s] = []
            for c in spec.cells:
                log.info("run %s seed %d", c.slug, s)
                by_seed[s].append(run_one(spec, data, c, s))
    manifests = [by_seed[s][spec.cells.index(c)] for c, s in order]
    runs = [r for m in manifests for r in run_rows(m, spec.tasks)]
    return ResultTable(runs, aggregate(runs), manifests)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def write_results(out, spec: ExperimentSpec, table: ResultTable, name="results"):
    """results.csv (aggregated), runs.csv (per seed), results.json, manifests/, timing.csv.

    Timing lives only in timing.csv and the manifests; the other CSVs are
    byte-reproducible.
    """
    out = Path(out)
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"{name}.csv", TABLE_HEADER, table.rows)
    _write_csv(out / "runs.csv", RUN_HEADER, table.runs)
    write_json(out / "config.json", spec.config)
    write_json(out / f"{name}.json", {"config": spec.config, "rows": table.rows, "runs": table.runs,
                                       "leakage_violations": table.leakage_violations})
    timing_rows = []
    for m in table.manifests:
        slug = Cell(**m["cell"]).slug
        write_json(out / "manifests" / f"{slug}_seed{m['seed']}.json", m)
        for t in m["timing"]:
            timing_rows.append({"cell": slug, "seed": m["seed"], **t})
    _write_csv(out / "timing.csv", ("cell", "seed", "stage", "train_seconds", "selection_seconds"), timing_rows)


# --- derived experiments -------------------------------------------------------------

SWEEP_HEADER = ("method", "lam", "n", "strategy", "old_domain", "mae_mean", "mae_std", "n_seeds", "n_failed", "status")


def sweep_spec(spec: ExperimentSpec) -> ExperimentSpec:
    sw = spec.config["sweep"]
    if len(spec.tasks) < 2:
        raise ConfigError("a lambda sweep needs two tasks")
    strategy = spec.config["selection"]["strategies"][0]
    cells = []
    for lam in sw["lambdas"]:
        for n in sw["n"]:
            cells.append(Cell(sw["method"], int(n), "none" if n == 0 else strategy, float(lam)))
    return spec.with_cells(cells, spec.tasks[:2])


def sweep_lambda(spec: ExperimentSpec, jobs=1, data=None):
    """Old-domain MAE after T1->T2 adaptation for every (lambda, N) cell."""
    sspec = sweep_spec(spec)
    table = run_experiment(sspec, jobs, data)
    old = sspec.tasks[0]
    grid = [dict(r, old_domain=old) for r in table.rows if r["stage"] == 1 and r["test_domain"] == old]
    grid.sort(key=lambda r: (r["lam"], r["n"]))
    return sspec, table, grid


SELECTION_HEADER = ("strategy", "method", "n", "domain", "role", "mae_mean", "mae_std", "n_seeds", "n_failed")


def selection_spec(spec: ExperimentSpec, n=50, method="lwf", metrics=ALL_METRICS) -> ExperimentSpec:
    strategies = ["random", "equally_distributed"] + [f"similarity:{m}" for m in metrics]
    lam = method_lambda(method, spec.config["dil"]["lambdas"])
    return spec.with_cells([Cell(method, n, s, lam) for s in strategies], spec.tasks[:2])


def compare_selection(spec: ExperimentSpec, n=50, method="lwf", metrics=ALL_METRICS, jobs=1, data=None):
    """Old- and new-domain MAE after one adaptation, per selection variant."""
    sspec = selection_spec(spec, n, method, metrics)
    table = run_experiment(sspec, jobs, data)
    old, new = sspec.tasks[0], sspec.tasks[1]
    out = []
    for c in sspec.cells:
        for dom, role in ((old, "old"), (new, "new")):
            (r,) = table.lookup(stage=1, test_domain=dom, strategy=c.strategy)
            out.append({"strategy": c.strategy, "method": method, "n": n, "domain": dom, "role": role,
                        "mae_mean": r["mae_mean"], "mae_std": r["mae_std"], "n_seeds": r["n_seeds"],
                        "n_failed": r["n_failed"]})
    return sspec, table, out


TIMING_ORDER = ("lwf", "ewc", "si", "pnn", "finetune")


def timing_report(spec: ExperimentSpec, seed=None, n=50, data=None, strategies=None):
    """Wall-clock seconds per adaptation stage per method, and per selection strategy.

    The expected orderings are checked softly: each adjacent method pair, and
    RD/ED against the error-based strategies, is reported as holding or not;
    nothing fails.
    """
    seed = spec.seeds[0] if seed is None else seed
    data = load_datasets(spec) if data is None else data
    tasks = spec.tasks[:2]
    if len(tasks) < 2:
        raise ConfigError("timing needs two tasks")
    lambdas = spec.config["dil"]["lambdas"]
    method_rows = []
    for m in TIMING_ORDER:
        cell = Cell(m, n, "random", method_lambda(m, lambdas))
        man = run_one(spec.with_cells([cell], tasks), {t: data[t] for t in tasks}, cell, seed)
        for t in man["timing"][1:]:
            method_rows.append({"kind": "method", "name": m, "stage": t["stage"], "seconds": t["train_seconds"]})
    strategies = strategies or (["random", "equally_distributed", "error_highest", "error_lowest"]
                                + [f"similarity:{k}" for k in ("chebyshev", "cosine")])
    cfg = spec.dil_config(Cell("finetune", 0, "none", 0.0), seed)
    model, _, _ = train_initial(data[tasks[0]], cfg)
    sel_rows = []
    for s in strategies:
        t0 = time.perf_counter()
        select_exemplars(s, n, model, data[tasks[1]], data[tasks[0]], seed, 1, 1, use_cache=False)
        sel_rows.append({"kind": "selection", "name": s, "stage": 1, "seconds": time.perf_counter() - t0})
    secs = {r["name"]: r["seconds"] for r in method_rows}
    checks = []
    for a, b in zip(TIMING_ORDER, TIMING_ORDER[1:]):
        op = "<=" if a == "lwf" else "<"
        holds = secs[a] <= secs[b] if op == "<=" else secs[a] < secs[b]
        checks.append({"relation": f"{a} {op} {b}", "holds": bool(holds)})
    sel = {r["name"]: r["seconds"] for r in sel_rows}
    for fast in ("random", "equally_distributed"):
        for slow in ("error_highest", "error_lowest"):
            if fast in sel and slow in sel:
                checks.append({"relation": f"{fast} < {slow}", "holds": bool(sel[fast] < sel[slow])})
    return method_rows + sel_rows, checks


def timing_check_lines(checks):
    return [f"{'holds' if c['holds'] else 'differs'}: {c['relation']}" for c in checks]


def default_output_root() -> Path:
    return Path(os.environ.get("CIRDIL_OUT", "cirdil-out"))
