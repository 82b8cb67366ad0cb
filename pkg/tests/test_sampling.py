import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirdil.sampling import (ErrorRecords, ExemplarSet, SelectionConfig, SelectionError, compute_errors,
                             select_by_error, select_by_similarity, select_equally_distributed,
                             select_random)
from cirdil.similarity import Metric, pairwise


def brute_similarity(prev, pool_ids, pool, n, metric):
    """Exhaustive double loop, smallest score then smallest id."""
    m = Metric.parse(metric)
    scored = []
    for pid, u in zip(pool_ids, pool):
        best = np.inf
        for z in prev:
            d = pairwise(m, z[None, :], u)[0]
            if not np.isnan(d) and d < best:
                best = d
        if np.isfinite(best):
            scored.append((best, int(pid)))
    scored.sort()
    return [i for _, i in scored[:n]]


def test_random_full_pool_and_empty():
    pool = np.arange(10, 20)
    full = select_random(pool, 10, np.random.default_rng(0))
    assert sorted(full.ids) == list(pool)
    assert len(select_random(pool, 0, np.random.default_rng(0))) == 0
    with pytest.raises(SelectionError):
        select_random(pool, 11, np.random.default_rng(0))


def test_random_deterministic():
    pool = np.arange(100)
    a = select_random(pool, 7, np.random.default_rng(5)).ids
    b = select_random(pool, 7, np.random.default_rng(5)).ids
    assert np.array_equal(a, b)


def test_ed_unit_square_corners():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ex = select_equally_distributed(np.arange(4), pos, 4, np.random.default_rng(0))
    assert ex.ids.tolist() == [0, 1, 2, 3]
    assert ex.meta["random_fill"] == 0


def test_ed_single_picks_centre_nearest():
    pos = np.array([[0.0, 0.0], [4.0, 4.0], [2.1, 1.8], [10.0, 10.0]])
    ex = select_equally_distributed(np.array([5, 6, 7, 8]), pos, 1, np.random.default_rng(0))
    # centre of the box is (5, 5): sample (4, 4) is nearest
    assert ex.ids.tolist() == [6]


def test_ed_fills_empty_cells_randomly():
    pos = np.r_[np.random.default_rng(0).uniform(0, 1, (30, 2)), [[10.0, 10.0]]]
    ex = select_equally_distributed(np.arange(31), pos, 9, np.random.default_rng(1))
    assert len(set(ex.ids)) == 9 and ex.meta["random_fill"] > 0


def test_ed_covers_every_grid_row_when_cells_exceed_n():
    # 50 picks on an 8 x 8 grid: the 14 unused cells must not all sit in the top rows
    pos = np.random.default_rng(3).uniform(0, 20, (4000, 2))
    ex = select_equally_distributed(np.arange(4000), pos, 50, np.random.default_rng(0))
    rows = np.minimum((pos[ex.ids, 1] / 20 * 8).astype(int), 7)
    assert set(rows.tolist()) == set(range(8)) and ex.meta["random_fill"] == 0


def _nn_spacing(p):
    d = np.hypot(*(p[:, None] - p[None]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1).mean()


def test_ed_spreads_better_than_random_on_clustered_pool():
    wins = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centres = rng.uniform(0, 20, (4, 2))
        pos = np.concatenate([c + rng.normal(0, 1.0, (300, 2)) for c in centres] + [rng.uniform(0, 20, (100, 2))])
        ids = np.arange(len(pos))
        ed = select_equally_distributed(ids, pos, 50, rng)
        rd = select_random(ids, 50, rng)
        wins += _nn_spacing(pos[ed.ids]) >= _nn_spacing(pos[rd.ids])
    assert wins >= 4


def test_compute_errors():
    pos = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    rec = compute_errors(lambda X: np.zeros((len(X), 2)), np.zeros((3, 5)), pos, [4, 5, 6])
    assert rec.errors.tolist() == [0.0, 5.0, pytest.approx(np.sqrt(2))]
    perfect = compute_errors(lambda X: pos, np.zeros((3, 5)), pos, [0, 1, 2])
    assert np.all(perfect.errors == 0)


def test_error_selection_examples():
    recs = ErrorRecords(np.arange(10), np.ones(10))
    assert select_by_error(recs, 4).ids.tolist() == [0, 1, 2, 3]
    assert select_by_error(recs, 4, highest=False).ids.tolist() == [0, 1, 2, 3]
    recs = ErrorRecords(np.arange(10), np.arange(10.0))
    assert select_by_error(recs, 3).ids.tolist() == [9, 8, 7]
    assert select_by_error(recs, 3).meta["error_model"] == "pre-adaptation"


def test_error_selection_matches_full_sort():
    rng = np.random.default_rng(0)
    ids = rng.permutation(1000) + 100
    err = rng.integers(0, 50, 1000) / 7.0  # plenty of ties
    recs = ErrorRecords(ids, err)
    hi = sorted(zip(-err, ids))[:100]
    lo = sorted(zip(err, ids))[:100]
    assert select_by_error(recs, 100).ids.tolist() == [int(i) for _, i in hi]
    assert select_by_error(recs, 100, highest=False).ids.tolist() == [int(i) for _, i in lo]


def test_similarity_worked_example():
    prev = np.array([[0.0, 0.0], [1.0, 1.0]])
    pool = np.array([[0.1, 0.0], [5.0, 5.0], [1.0, 1.2]])
    ex = select_by_similarity(prev, np.array([10, 11, 12]), pool, 2, "chebyshev")
    assert ex.ids.tolist() == [10, 12]
    assert ex.scores == pytest.approx([0.1, 0.2])


def test_similarity_pool_inside_prev():
    prev = np.random.default_rng(0).normal(size=(30, 4))
    ex = select_by_similarity(prev, np.arange(30)[::-1], prev[::-1], 5, "euclidean")
    assert ex.ids.tolist() == [0, 1, 2, 3, 4] and np.all(ex.scores == 0)


@pytest.mark.parametrize("metric", ["euclidean", "manhattan", "chebyshev", "minkowski:3", "cosine",
                                    "canberra", "braycurtis", "correlation"])
def test_similarity_matches_double_loop(metric):
    rng = np.random.default_rng(1)
    prev = rng.normal(size=(60, 5))
    pool = rng.normal(size=(60, 5))
    ids = rng.permutation(60) + 1000
    ex = select_by_similarity(prev, ids, pool, 15, metric)
    assert ex.ids.tolist() == brute_similarity(prev, ids, pool, 15, metric)


def test_similarity_excludes_undefined():
    prev = np.random.default_rng(0).normal(size=(10, 3))
    pool = np.r_[np.zeros((2, 3)), np.random.default_rng(1).normal(size=(5, 3))]
    ex = select_by_similarity(prev, np.arange(7), pool, 5, "cosine")
    assert ex.meta["excluded"] == 2 and not {0, 1} & set(ex.ids.tolist())
    with pytest.raises(SelectionError):
        select_by_similarity(prev, np.arange(7), pool, 6, "cosine")


def test_selection_config_validation():
    with pytest.raises(SelectionError):
        SelectionConfig("similarity", 5)
    with pytest.raises(SelectionError):
        SelectionConfig("random", 5, metric="cosine")
    assert SelectionConfig("similarity", 5, "minkowski:3").label == "similarity:minkowski:3"


def test_exemplar_set_json_roundtrip():
    ex = ExemplarSet(np.array([3, 1]), "similarity", np.array([0.5, 0.25]), "cosine", 4, {"excluded": 0})
    d = json.loads(ex.to_json())
    assert d["ids"] == [3, 1] and d["metric"] == "cosine" and d["seed"] == 4
    back = ExemplarSet.from_dict(d)
    assert back.ids.tolist() == [3, 1] and back.scores.tolist() == [0.5, 0.25]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 40))
def test_property_all_strategies_unique_from_pool(seed, n):
    rng = np.random.default_rng(seed)
    pool = np.sort(rng.choice(500, 40, replace=False))
    pos = rng.uniform(0, 20, (40, 2))
    feats = rng.normal(size=(40, 4))
    prev = rng.normal(size=(25, 4))
    sets = [select_random(pool, n, rng), select_equally_distributed(pool, pos, n, rng),
            select_by_error(ErrorRecords(pool, rng.uniform(size=40)), n),
            select_by_similarity(prev, pool, feats, n, "manhattan")]
    for ex in sets:
        assert len(ex.ids) == n == len(set(ex.ids.tolist()))
        assert set(ex.ids.tolist()) <= set(pool.tolist())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_similarity_order_invariant(seed):
    rng = np.random.default_rng(seed)
    prev, pool = rng.normal(size=(30, 3)), rng.normal(size=(20, 3))
    ids = np.arange(20)
    a = select_by_similarity(prev, ids, pool, 8, "euclidean")
    pp, qp = rng.permutation(30), rng.permutation(20)
    b = select_by_similarity(prev[pp], ids[qp], pool[qp], 8, "euclidean")
    assert a.ids.tolist() == b.ids.tolist()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_error_high_low_complementary(seed):
    rng = np.random.default_rng(seed)
    recs = ErrorRecords(np.arange(40), rng.permutation(40) / 3.0)
    hi = set(select_by_error(recs, 20).ids.tolist())
    lo = set(select_by_error(recs, 20, highest=False).ids.tolist())
    assert hi | lo == set(range(40)) and not hi & lo
