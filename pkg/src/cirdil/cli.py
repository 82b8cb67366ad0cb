"""Command-line entry point: ``cirdil <subcommand> [options]``.

Exit codes: 0 success, 1 configuration or user error, 2 some runs failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .channel import SceneError, save_dataset
from .dil import ConfigError, adapt, evaluate, load_state, save_state, train_initial
from .export import ExportError, export
from .harness import (Cell, build_spec, load_config, load_datasets, method_lambda, select_exemplars,
                      write_json, write_results)
from .sampling import SelectionError

log = logging.getLogger("cirdil")

EXIT_OK, EXIT_USER, EXIT_PARTIAL = 0, 1, 2


def _common(p, seed=True):
    p.add_argument("--config", help="experiment JSON (defaults apply to missing keys)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, JSON value; repeatable")
    p.add_argument("--out", help="output directory (default: $CIRDIL_OUT/<subcommand>)")
    p.add_argument("--samples", type=int, help="samples per task")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    if seed:
        p.add_argument("--seed", type=int, help="run this seed only")


def build_parser():
    ap = argparse.ArgumentParser(prog="cirdil", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", help="write scene JSON, per-task datasets and change manifests")
    _common(p)

    p = sub.add_parser("train", help="initial training on the first task")
    _common(p)
    p.add_argument("--method", help="method whose bookkeeping to run (default: first configured)")

    p = sub.add_parser("adapt", help="one adaptation stage from a saved state")
    _common(p)
    p.add_argument("--state", required=True, help="state file written by train/adapt")
    p.add_argument("--task", required=True, help="task to adapt to")
    p.add_argument("--n", type=int, default=0, help="exemplar budget")
    p.add_argument("--strategy", default="random", help="selection strategy (similarity:<metric> allowed)")
    p.add_argument("--stage", type=int, default=1)

    for name, text in (("run", "full method x exemplar grid over the task sequence"),
                       ("sweep-lambda", "lambda x N grid on the first adaptation"),
                       ("compare-selection", "random, equally distributed and all similarity metrics"),
                       ("timing", "wall-clock per method and per selection strategy")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name in ("compare-selection", "timing"):
            p.add_argument("--n", type=int, default=50, help="exemplar budget")
        if name == "compare-selection":
            p.add_argument("--method", default="lwf")
            p.add_argument("--metrics", help="comma-separated metric list (default: all eight)")

    p = sub.add_parser("export", help="plot-ready CSV from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--what", choices=("trajectories", "table", "cdf"), required=True)
    p.add_argument("--out", help="output directory (default: run_dir)")
    p.add_argument("--figures", action="store_true", help="also render a PNG next to the CSV")
    return ap


def _config(args):
    overrides = list(args.override)
    if getattr(args, "samples", None) is not None:
        overrides.append(f"scenario.samples={args.samples}")
    if getattr(args, "seed", None) is not None and args.command != "gen-scenario":
        overrides.append(f"seeds=[{args.seed}]")
    if getattr(args, "seed", None) is not None and args.command == "gen-scenario":
        overrides.append(f"scenario.seed={args.seed}")
    return load_config(args.config, overrides)


def _out(args) -> Path:
    out = Path(args.out) if args.out else harness.default_output_root() / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_mae(path, mae):
    path.write_text("domain,mae\n" + "".join(f"{k},{v!r}\n" for k, v in mae.items()))


def cmd_gen_scenario(args):
    cfg = _config(args)
    spec = build_spec(cfg)
    out = _out(args)
    spec.scenario.save(out / "scenario.json")
    data = spec.scenario.generate(samples=cfg["scenario"]["samples"])
    changes = []
    for (name, ds), t in zip(data.items(), spec.scenario.tasks):
        save_dataset(out / f"{name}.cirds", ds)
        n_mod = int((ds.regions == 1).sum())
        changes.append({"task": name, "change": t.change.to_list(), "samples": len(ds),
                        "train": len(ds.train_idx), "test": len(ds.test_idx), "modified": n_mod})
        print(f"{name}: {len(ds)} samples ({len(ds.train_idx)} train, {len(ds.test_idx)} test, {n_mod} modified)")
    write_json(out / "changes.json", changes)
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    spec = build_spec(cfg)
    method = args.method or cfg["dil"]["methods"][0]
    seed = spec.seeds[0]
    cell = Cell(method, 0, "none", method_lambda(method, cfg["dil"]["lambdas"]))
    dcfg = spec.dil_config(cell, seed)
    data = load_datasets(spec)
    model, state, fit = train_initial(data[spec.tasks[0]], dcfg)
    out = _out(args)
    save_state(out / "state.npz", model, state, dcfg)
    _write_mae(out / "mae.csv", evaluate(model, data))
    (out / "loss.csv").write_text("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(fit.losses)))
    print(f"trained {method} seed {seed} on {spec.tasks[0]}; final loss {fit.losses[-1]:.5f}")
    return EXIT_OK


def cmd_adapt(args):
    cfg = _config(args)
    spec = build_spec(cfg)
    model, state, dcfg = load_state(args.state)
    names = spec.scenario.task_names()
    if args.task not in names or names.index(args.task) == 0:
        raise ConfigError(f"task {args.task!r} is not an adaptation task of the scenario")
    prev = names[names.index(args.task) - 1]
    spec = spec.with_cells([], list(dict.fromkeys(spec.tasks + [prev, args.task])))
    data = load_datasets(spec)
    ex = select_exemplars(args.strategy, args.n, model, data[args.task], data[prev], dcfg.seed,
                          args.stage, args.stage)
    model, state, alog = adapt(model, state, data[args.task], ex, dcfg, stage=args.stage)
    out = _out(args)
    save_state(out / "state.npz", model, state, dcfg)
    (out / "exemplars.json").write_text(ex.to_json() + "\n")
    _write_mae(out / "mae.csv", evaluate(model, data))
    print(f"adapted to {args.task} on {len(alog.stream_ids)} samples ({len(ex)} exemplars)")
    return EXIT_OK


def _finish(table):
    if table.leakage_violations:
        log.error("%d test ids leaked into training", table.leakage_violations)
    return EXIT_PARTIAL if table.failed or table.leakage_violations else EXIT_OK


def cmd_run(args):
    spec = build_spec(_config(args))
    table = harness.run_experiment(spec, jobs=args.jobs)
    out = _out(args)
    write_results(out, spec, table)
    print(f"{len(table.rows)} rows -> {out / 'results.csv'}")
    return _finish(table)


def cmd_sweep_lambda(args):
    spec = build_spec(_config(args))
    sspec, table, grid = harness.sweep_lambda(spec, jobs=args.jobs)
    out = _out(args)
    write_results(out, sspec, table)
    harness._write_csv(out / "sweep.csv", harness.SWEEP_HEADER, grid)
    print(f"{len(grid)} sweep cells -> {out / 'sweep.csv'}")
    return _finish(table)


def cmd_compare_selection(args):
    spec = build_spec(_config(args))
    metrics = args.metrics.split(",") if args.metrics else harness.ALL_METRICS
    sspec, table, rows = harness.compare_selection(spec, n=args.n, method=args.method, metrics=metrics,
                                                   jobs=args.jobs)
    out = _out(args)
    write_results(out, sspec, table)
    harness._write_csv(out / "selection.csv", harness.SELECTION_HEADER, rows)
    for r in rows:
        print(f"{r['strategy']:<24} {r['role']:<4} {r['mae_mean']:.3f} +- {r['mae_std']:.3f} m")
    return _finish(table)


def cmd_timing(args):
    spec = build_spec(_config(args))
    rows, checks = harness.timing_report(spec, n=args.n)
    out = _out(args)
    harness._write_csv(out / "timing.csv", ("kind", "name", "stage", "seconds"), rows)
    (out / "timing_checks.json").write_text(json.dumps(checks, indent=1) + "\n")
    for r in rows:
        print(f"{r['kind']:<9} {r['name']:<24} {r['seconds']:.3f} s")
    for line in harness.timing_check_lines(checks):
        print(line)
    return EXIT_OK


def cmd_export(args):
    for path in export(args.run_dir, args.what, args.out, args.figures):
        print(path)
    return EXIT_OK


COMMANDS = {
    "gen-scenario": cmd_gen_scenario, "train": cmd_train, "adapt": cmd_adapt, "run": cmd_run,
    "sweep-lambda": cmd_sweep_lambda, "compare-selection": cmd_compare_selection,
    "timing": cmd_timing, "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SceneError, SelectionError, ExportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
