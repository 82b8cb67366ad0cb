"""Distance metrics and exact nearest-neighbour search.

Minkowski-family metrics get a kd-tree (median split on the widest-spread
dimension, bounding-box pruning); the other metrics fall back to an
exhaustive scan behind the same interface.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("euclidean", "manhattan", "chebyshev", "minkowski", "cosine", "canberra", "braycurtis", "correlation")
MINKOWSKI_FAMILY = ("euclidean", "manhattan", "chebyshev", "minkowski")


class UndefinedDistance(ValueError):
    """The metric is not defined for the given vectors (zero norm, constant vector, ...)."""


@dataclass(frozen=True)
class Metric:
    kind: str
    p: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind == "minkowski":
            if self.p is None or self.p < 1:
                raise ValueError("minkowski needs p >= 1")
        elif self.p is not None:
            raise ValueError(f"{self.kind} takes no p parameter")

    @classmethod
    def parse(cls, text) -> "Metric":
        """``"chebyshev"`` or ``"minkowski:3"``."""
        if isinstance(text, Metric):
            return text
        kind, _, p = str(text).partition(":")
        if kind == "minkowski":
            return cls(kind, float(p) if p else 3.0)
        if p:
            raise ValueError(f"{kind} takes no parameter")
        return cls(kind)

    @property
    def kdtree_compatible(self) -> bool:
        return self.kind in MINKOWSKI_FAMILY

    @property
    def norm_order(self) -> float:
        return {"euclidean": 2.0, "manhattan": 1.0, "chebyshev": np.inf}.get(self.kind, self.p)

    def __str__(self):
        if self.kind == "minkowski":
            return f"minkowski:{self.p:g}"
        return self.kind


def _plain_norm(diff, order):
    if order == 1:
        return np.abs(diff).sum(axis=-1)
    if order == np.inf:
        return np.abs(diff).max(axis=-1)
    if order == 2:
        return np.sqrt((diff * diff).sum(axis=-1))
    a = np.abs(diff)
    np.power(a, order, out=a)
    return a.sum(axis=-1) ** (1.0 / order)


def _norm_rows(diff, order):
    """p-norm over the last axis of ``diff`` (signs ignored)."""
    with np.errstate(over="ignore", under="ignore"):
        out = _plain_norm(diff, order)
    if order in (1, np.inf):
        return out
    # powers of very small or very large entries lose range: redo those rows rescaled
    suspect = ~((out > 1e-100) & (out < 1e100))
    if np.any(suspect):
        rows = diff[suspect]
        big = np.abs(rows).max(axis=-1)
        safe = np.where(big > 0, big, 1.0)
        out[suspect] = big * _plain_norm(rows / safe[:, None], order)
    return out


# elements per (queries x refs x dim) tile; small enough to stay in cache
_TILE = 1 << 16


def _prepare(kind, X):
    """Per-row quantities a metric reuses across tiles."""
    if kind == "correlation":
        X = X - X.mean(axis=-1, keepdims=True)
    if kind in ("cosine", "correlation"):
        return X, np.sqrt((X * X).sum(axis=-1))
    if kind == "canberra":
        return X, np.abs(X)
    return X, None


def _tile(metric, R, Q, rn, qn):
    """Distances (len(Q), len(R)) for one tile; NaN where undefined."""
    kind = metric.kind
    if kind in MINKOWSKI_FAMILY:
        return _norm_rows(R[None, :, :] - Q[:, None, :], metric.norm_order)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind in ("cosine", "correlation"):
            denom = rn[None, :] * qn[:, None]
            out = 1.0 - (R[None, :, :] * Q[:, None, :]).sum(axis=-1) / denom
            return np.where(denom > 0, out, np.nan)
        if kind == "canberra":
            num = np.abs(R[None, :, :] - Q[:, None, :])
            den = rn[None, :, :] + qn[:, None, :]
            # den == 0 only where both entries are 0, and then num is 0 too
            np.divide(num, den, out=num, where=den > 0)
            return num.sum(axis=-1)
        # braycurtis
        den = np.abs(R[None, :, :] + Q[:, None, :]).sum(axis=-1)
        out = np.abs(R[None, :, :] - Q[:, None, :]).sum(axis=-1) / den
        return np.where(den > 0, out, np.nan)


def pairwise(metric: Metric, refs, q) -> np.ndarray:
    """Distances from every row of ``refs`` to ``q``; NaN where undefined.

    ``q`` may be one vector (result shape ``(n,)``) or a block of queries
    (result ``(m, n)``). Work is tiled, but every pair goes through the same
    per-row reduction, so both shapes give bit-identical values.
    """
    refs = np.asarray(refs, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if refs.shape[-1] != q.shape[-1]:
        raise ValueError(f"length mismatch {refs.shape[-1]} vs {q.shape[-1]}")
    single = q.ndim == 1
    Q = q[None, :] if single else q
    refs = np.atleast_2d(refs)
    R, rn = _prepare(metric.kind, refs)
    Q, qn = _prepare(metric.kind, Q)
    n, dim = R.shape
    out = np.empty((len(Q), n))
    per_ref = max(1, _TILE // max(1, dim))
    if n >= per_ref:
        qstep, rstep = 1, per_ref
    else:
        qstep, rstep = max(1, per_ref // max(1, n)), max(1, n)
    for a in range(0, len(Q), qstep):
        for b in range(0, n, rstep):
            out[a:a + qstep, b:b + rstep] = _tile(metric, R[b:b + rstep], Q[a:a + qstep],
                                                   None if rn is None else rn[b:b + rstep],
                                                   None if qn is None else qn[a:a + qstep])
    return out[0] if single else out


def distance(metric, a, b) -> float:
    """Scalar distance; raises :class:`UndefinedDistance` where undefined."""
    metric = Metric.parse(metric)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ValueError("need two non-empty vectors of equal length")
    d = float(pairwise(metric, a[None, :], b)[0])
    if np.isnan(d):
        raise UndefinedDistance(f"{metric} undefined for these vectors")
    return d


def query_defined(metric: Metric, q) -> bool:
    """False when every distance from ``q`` is undefined (zero / constant vector)."""
    q = np.asarray(q, dtype=np.float64)
    if metric.kind == "cosine":
        return bool(np.any(q != 0))
    if metric.kind == "correlation":
        return bool(np.any(q != q[0]))
    return True


class _Node:
    __slots__ = ("lo", "hi", "start", "stop", "dim", "split", "left", "right")

    def __init__(self, lo, hi, start, stop, dim=-1, split=0.0, left=None, right=None):
        self.lo, self.hi, self.start, self.stop = lo, hi, start, stop
        self.dim, self.split = dim, split
        self.left, self.right = left, right


# entries per distance matrix handed back by one pairwise call
_BLOCK = 1 << 22


class NeighborIndex:
    """Exact 1-NN over a fixed reference set; ties go to the smallest ref id.

    Queries are answered in blocks: a node is expanded only for the queries
    whose box lower bound does not exceed their current best distance.
    """

    def __init__(self, refs, metric, leaf_size=64):
        refs = np.asarray(refs, dtype=np.float64)
        if refs.ndim != 2 or len(refs) == 0:
            raise ValueError("need a non-empty 2D array of reference vectors")
        self.metric = Metric.parse(metric)
        self.n_refs, self.dim = refs.shape
        self.leaf_size = leaf_size
        self.leaf_visits = 0
        if self.metric.kdtree_compatible:
            self.kind = "kdtree"
            order = np.arange(self.n_refs)
            self._root = self._build(refs, order, 0, self.n_refs)
            # rows stored leaf-contiguously; _ids maps back to caller ids
            self._ids = order
            self._refs = np.ascontiguousarray(refs[order])
        else:
            self.kind = "exhaustive"
            log.info("metric %s is not kd-tree compatible; using exhaustive search", self.metric)
            self._root = None
            self._ids = np.arange(self.n_refs)
            self._refs = refs.copy()

    def _build(self, refs, order, start, stop):
        pts = refs[order[start:stop]]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        if stop - start <= self.leaf_size:
            return _Node(lo, hi, start, stop)
        dim = int(np.argmax(hi - lo))
        if hi[dim] == lo[dim]:
            return _Node(lo, hi, start, stop)
        # stable sort keeps the split reproducible for a given input order
        local = np.argsort(pts[:, dim], kind="stable")
        order[start:stop] = order[start:stop][local]
        mid = start + (stop - start) // 2
        split = float(refs[order[mid], dim])
        return _Node(lo, hi, start, stop, dim, split,
                     self._build(refs, order, start, mid),
                     self._build(refs, order, mid, stop))

    def _box_bound(self, node, Q):
        gap = np.maximum(np.maximum(node.lo - Q, Q - node.hi), 0.0)
        return _norm_rows(gap, self.metric.norm_order)

    def _scan(self, start, stop, Q, qi, best_id, best_d):
        """Update bests of queries ``qi`` against reference rows [start, stop)."""
        refs = self._refs[start:stop]
        ids = self._ids[start:stop]
        # pairwise tiles internally; the block only bounds the result matrix
        step = max(1, _BLOCK // max(1, stop - start))
        for c in range(0, len(qi), step):
            sub = qi[c:c + step]
            d = pairwise(self.metric, refs, Q[sub])
            d = np.where(np.isnan(d), np.inf, d)
            dmin = d.min(axis=1)
            cand = np.where(d == dmin[:, None], ids[None, :], np.iinfo(np.int64).max).min(axis=1)
            better = (dmin < best_d[sub]) | ((dmin == best_d[sub]) & (cand < best_id[sub]) & np.isfinite(dmin))
            best_d[sub[better]] = dmin[better]
            best_id[sub[better]] = cand[better]

    def _descend(self, node, Q, qi, best_id, best_d):
        if node.left is None:
            self.leaf_visits += len(qi)
            self._scan(node.start, node.stop, Q, qi, best_id, best_d)
            return
        go_left = Q[qi, node.dim] < node.split
        if go_left.any():
            self._descend(node.left, Q, qi[go_left], best_id, best_d)
        if (~go_left).any():
            self._descend(node.right, Q, qi[~go_left], best_id, best_d)

    def _visit(self, node, Q, qi, best_id, best_d, seen):
        qi = qi[self._box_bound(node, Q[qi]) <= best_d[qi]]
        if len(qi) == 0:
            return
        if node.left is None:
            # leaves already scanned during the descent pass hold no news
            qi = qi[~seen.get(id(node), np.zeros(len(Q), bool))[qi]]
            if len(qi):
                self.leaf_visits += len(qi)
                self._scan(node.start, node.stop, Q, qi, best_id, best_d)
            return
        self._visit(node.left, Q, qi, best_id, best_d, seen)
        self._visit(node.right, Q, qi, best_id, best_d, seen)

    def _descent_leaves(self, node, Q, qi, seen):
        if node.left is None:
            mask = seen.setdefault(id(node), np.zeros(len(Q), bool))
            mask[qi] = True
            return
        go_left = Q[qi, node.dim] < node.split
        self._descent_leaves(node.left, Q, qi[go_left], seen)
        self._descent_leaves(node.right, Q, qi[~go_left], seen)

    def nearest_many(self, queries, skip_undefined=False):
        """Nearest neighbour of each query row; returns ``(ids, distances)``.

        Queries for which the metric is undefined raise, or with
        ``skip_undefined`` come back as id -1 and distance NaN.
        """
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise ValueError(f"queries must have length {self.dim}")
        best_id = np.full(len(Q), -1, dtype=np.int64)
        best_d = np.full(len(Q), np.inf)
        ok = np.array([query_defined(self.metric, q) for q in Q], dtype=bool)
        if not ok.all() and not skip_undefined:
            raise UndefinedDistance(f"{self.metric} undefined for query {int(np.argmin(ok))}")
        qi = np.flatnonzero(ok)
        if self.kind == "exhaustive":
            self._scan(0, self.n_refs, Q, qi, best_id, best_d)
        elif len(qi):
            seen = {}
            self._descend(self._root, Q, qi, best_id, best_d)
            self._descent_leaves(self._root, Q, qi, seen)
            self._visit(self._root, Q, qi, best_id, best_d, seen)
        lost = ok & (best_id < 0)
        if lost.any() and not skip_undefined:
            raise UndefinedDistance(f"{self.metric} undefined against every reference")
        best_d[best_id < 0] = np.nan
        return best_id, best_d

    def nearest(self, q):
        """``(ref_id, distance)`` of the nearest reference to ``q``."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have length {self.dim}")
        ids, d = self.nearest_many(q[None, :])
        return int(ids[0]), float(d[0])


def build_index(refs, metric, leaf_size=64) -> NeighborIndex:
    return NeighborIndex(refs, metric, leaf_size)


def nearest(index: NeighborIndex, q):
    return index.nearest(q)


def brute_force_nearest(refs, metric, q):
    """Reference answer: full scan with the same tie rule."""
    d = pairwise(Metric.parse(metric), refs, q)
    d = np.where(np.isnan(d), np.inf, d)
    i = int(np.argmin(d))  # argmin returns the first (smallest) index on ties
    if not np.isfinite(d[i]):
        raise UndefinedDistance("metric undefined against every reference")
    return i, float(d[i])
