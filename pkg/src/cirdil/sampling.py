"""Exemplar selection from the static part of an adaptation task.

Every selector returns an :class:`ExemplarSet` of exactly ``n`` unique ids
taken from the candidate pool. Ties are always broken by the smallest id.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .similarity import Metric, build_index

log = logging.getLogger(__name__)

STRATEGIES = ("random", "equally_distributed", "error_highest", "error_lowest", "similarity")


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "random"
    n: int = 50
    metric: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SelectionError(f"unknown strategy {self.strategy!r}")
        if self.n < 0:
            raise SelectionError("n must be >= 0")
        if (self.strategy == "similarity") != (self.metric is not None):
            raise SelectionError("a metric is required for, and only for, similarity selection")
        if self.metric is not None:
            Metric.parse(self.metric)

    @property
    def label(self) -> str:
        return f"similarity:{self.metric}" if self.strategy == "similarity" else self.strategy


@dataclass
class ExemplarSet:
    ids: np.ndarray
    strategy: str
    scores: np.ndarray | None = None
    metric: str | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def to_dict(self):
        return {
            "ids": [int(i) for i in self.ids],
            "scores": None if self.scores is None else [float(s) for s in self.scores],
            "strategy": self.strategy,
            "metric": self.metric,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        scores = d.get("scores")
        return cls(np.asarray(d["ids"], dtype=np.int64), d["strategy"],
                   None if scores is None else np.asarray(scores), d.get("metric"),
                   d.get("seed"), d.get("meta", {}))


def empty_set(strategy="none") -> ExemplarSet:
    return ExemplarSet(np.zeros(0, dtype=np.int64), strategy)


def _check_n(n, available):
    if n > available:
        raise SelectionError(f"requested {n} exemplars from a pool of {available}")


def select_random(pool_ids, n, rng, seed=None) -> ExemplarSet:
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    _check_n(n, len(pool_ids))
    picked = rng.choice(len(pool_ids), size=n, replace=False) if n else np.zeros(0, dtype=np.int64)
    return ExemplarSet(pool_ids[picked], "random", seed=seed)


def select_equally_distributed(pool_ids, positions, n, rng, seed=None) -> ExemplarSet:
    """Snap to a ceil(sqrt(n))^2 grid over the pool's bounding box.

    Every non-empty cell (row-major, rows along y) nominates its sample
    nearest to the cell centre. With more nominees than ``n``, nominees at
    evenly spaced raster positions are kept, so the unused cells are spread
    over the whole box rather than bunched at the end. A shortfall from
    empty cells is filled by random draws from whatever remains.
    """
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=float)
    _check_n(n, len(pool_ids))
    if n == 0:
        return ExemplarSet(np.zeros(0, dtype=np.int64), "equally_distributed", seed=seed)
    g = math.ceil(math.sqrt(n))
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    cell = np.minimum(((positions - lo) / span * g).astype(int), g - 1)
    cell_id = cell[:, 1] * g + cell[:, 0]
    nominees = []
    for c in np.unique(cell_id):
        members = np.flatnonzero(cell_id == c)
        row, col = divmod(int(c), g)
        centre = lo + (np.array([col, row]) + 0.5) / g * span
        d = np.hypot(*(positions[members] - centre).T)
        nominees.append(members[np.lexsort((pool_ids[members], d))[0]])
    if len(nominees) > n:
        nominees = [nominees[k * len(nominees) // n] for k in range(n)]
    chosen = list(nominees)
    taken = np.zeros(len(pool_ids), dtype=bool)
    taken[chosen] = True
    deficit = n - len(chosen)
    if deficit:
        rest = np.flatnonzero(~taken)
        chosen.extend(rest[rng.choice(len(rest), size=deficit, replace=False)])
    return ExemplarSet(pool_ids[np.asarray(chosen, dtype=np.int64)], "equally_distributed",
                       seed=seed, meta={"grid": g, "random_fill": int(deficit)})


@dataclass
class ErrorRecords:
    """Per-sample Euclidean position errors (metres) of a model on a pool."""

    ids: np.ndarray
    errors: np.ndarray


def compute_errors(predict, features, positions, ids) -> ErrorRecords:
    pred = predict(np.asarray(features))
    err = np.hypot(*(pred - np.asarray(positions)).T)
    return ErrorRecords(np.asarray(ids, dtype=np.int64), err)


def select_by_error(records: ErrorRecords, n, highest=True) -> ExemplarSet:
    _check_n(n, len(records.ids))
    key = -records.errors if highest else records.errors
    order = np.lexsort((records.ids, key))[:n]
    return ExemplarSet(records.ids[order], "error_highest" if highest else "error_lowest",
                       scores=records.errors[order], meta={"error_model": "pre-adaptation"})


def similarity_scores(prev_features, pool_features, metric):
    """Distance from each pool vector to its nearest previous-domain vector (NaN if undefined)."""
    index = build_index(prev_features, metric)
    _, d = index.nearest_many(pool_features, skip_undefined=True)
    return d, index.kind


def select_by_similarity(prev_features, pool_ids, pool_features, n, metric, scores=None) -> ExemplarSet:
    """The ``n`` pool samples closest to the previous domain.

    ``scores`` may carry precomputed :func:`similarity_scores` output.
    """
    metric = Metric.parse(metric)
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    if scores is None:
        scores, kind = similarity_scores(prev_features, pool_features, metric)
    else:
        kind = "kdtree" if metric.kdtree_compatible else "exhaustive"
    defined = ~np.isnan(scores)
    excluded = int((~defined).sum())
    if excluded:
        log.warning("%d pool samples excluded: %s undefined", excluded, metric)
    _check_n(n, int(defined.sum()))
    cand = np.flatnonzero(defined)
    order = cand[np.lexsort((pool_ids[cand], scores[cand]))][:n]
    return ExemplarSet(pool_ids[order], "similarity", scores=scores[order], metric=str(metric),
                       meta={"excluded": excluded, "index": kind})
