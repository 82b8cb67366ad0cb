"""Plot-ready CSV exports built from a run directory's manifests."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .harness import Cell, _fmt

TRAJECTORY_HEADER = ("cell", "seed", "domain", "sample_id", "true_x", "true_y", "pred_x", "pred_y", "error_m")
CDF_HEADER = ("cell", "domain", "quantile", "error_m")
TABLE_HEADER = ("stage", "stage_task", "test_domain", "method", "n", "strategy", "lam", "weight_averaging",
                "mae_mean", "mae_std", "n_seeds", "display")


class ExportError(ValueError):
    pass


def load_manifests(run_dir) -> list:
    files = sorted(Path(run_dir, "manifests").glob("*.json"))
    if not files:
        raise ExportError(f"no manifests under {run_dir}")
    return [json.loads(f.read_text()) for f in files]


def trajectory_rows(manifests) -> list:
    rows = []
    for m in manifests:
        if "predictions" not in m:
            continue
        slug = Cell(**m["cell"]).slug
        for dom, p in m["predictions"].items():
            true, pred = np.asarray(p["true"]), np.asarray(p["pred"])
            err = np.hypot(*(pred - true).T) if len(true) else []
            for i, sid in enumerate(p["ids"]):
                rows.append({"cell": slug, "seed": m["seed"], "domain": dom, "sample_id": sid,
                             "true_x": float(true[i, 0]), "true_y": float(true[i, 1]),
                             "pred_x": float(pred[i, 0]), "pred_y": float(pred[i, 1]),
                             "error_m": float(err[i])})
    return rows


def cdf_rows(manifests) -> list:
    """Sorted final-stage errors pooled over seeds; quantile of the i-th is (i+1)/n."""
    pooled: dict = {}
    for m in manifests:
        for dom, p in m.get("predictions", {}).items():
            e = np.hypot(*(np.asarray(p["pred"]) - np.asarray(p["true"])).T)
            pooled.setdefault((Cell(**m["cell"]).slug, dom), []).append(e)
    rows = []
    for (slug, dom), parts in sorted(pooled.items()):
        e = np.sort(np.concatenate(parts))
        q = np.arange(1, len(e) + 1) / len(e)
        rows.extend({"cell": slug, "domain": dom, "quantile": float(qi), "error_m": float(ei)}
                    for qi, ei in zip(q, e))
    return rows


def table_rows(run_dir) -> list:
    path = Path(run_dir, "results.json")
    if not path.exists():
        raise ExportError(f"no results.json under {run_dir}")
    rows = []
    for r in json.loads(path.read_text())["rows"]:
        rows.append({k: r[k] for k in TABLE_HEADER if k != "display"}
                    | {"display": f"{r['mae_mean']:.3f} +- {r['mae_std']:.3f}"})
    return rows


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def export(run_dir, what, out_dir=None, figures=False) -> list:
    """Write ``<what>.csv`` (and optionally a PNG) into ``out_dir``; returns written paths."""
    out_dir = Path(out_dir or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if what == "trajectories":
        rows = trajectory_rows(load_manifests(run_dir))
        header = TRAJECTORY_HEADER
    elif what == "cdf":
        rows = cdf_rows(load_manifests(run_dir))
        header = CDF_HEADER
    elif what == "table":
        rows = table_rows(run_dir)
        header = TABLE_HEADER
    else:
        raise ExportError(f"unknown export {what!r}")
    if not rows:
        raise ExportError(f"{run_dir}: nothing to export for {what}")
    path = out_dir / f"{what}.csv"
    write_rows(path, header, rows)
    written.append(path)
    if figures:
        from . import plots
        written.append(plots.render(what, rows, out_dir / f"{what}.png"))
    return written
