import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import kmodes_optimum, kmodes_partition_cost, same_partition
from surveyseg.errors import KOutOfRange, LengthMismatch, MissingData, NotCategorical
from surveyseg.ingest import ColumnSchema, dataset_from_rows
from surveyseg.kmodes import column_modes, elbow_sweep, fit_kmodes, hamming, hamming_matrix, sweep_kmodes
from surveyseg.matrix import categorical_matrix


def test_hamming_basics():
    assert hamming([1, 2, 3], [1, 2, 3]) == 0
    assert hamming([1, 2, 3], [2, 2, 1]) == 2
    with pytest.raises(LengthMismatch):
        hamming([1], [1, 2])


def test_hamming_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 3, (7, 4))
    m = rng.integers(0, 3, (3, 4))
    expect = np.array([[hamming(a, b) for b in m] for a in x])
    assert np.array_equal(hamming_matrix(x, m), expect)


def test_column_modes_tie_goes_to_smallest_code():
    pts = np.array([[2, 5], [1, 5], [2, 4], [1, 4]])
    assert column_modes(pts, np.arange(4)).tolist() == [1, 4]
    assert column_modes(pts, np.array([0, 1, 2])).tolist() == [2, 5]


def test_two_obvious_groups():
    pts = np.array([[1, 1, 1]] * 4 + [[2, 2, 2]] * 3)
    m = fit_kmodes(pts, 2, seed=0)
    assert m.cost == 0
    assert same_partition(m.assignments, [0] * 4 + [1] * 3)
    assert sorted(map(tuple, m.modes.tolist())) == [(1, 1, 1), (2, 2, 2)]


def test_k_equals_n_has_zero_cost():
    pts = np.array([[1, 2], [2, 1], [1, 1], [2, 2]])
    assert fit_kmodes(pts, 4, seed=1).cost == 0


def test_k_one_cost_is_column_disagreement():
    pts = np.array([[1, 2], [1, 1], [2, 2], [1, 2]])
    m = fit_kmodes(pts, 1)
    assert m.modes.tolist() == [[1, 2]]
    assert m.cost == 2


@pytest.mark.parametrize("k", [0, 5])
def test_k_out_of_range(k):
    with pytest.raises(KOutOfRange):
        fit_kmodes(np.ones((4, 2), dtype=int), k)


def test_missing_cells_rejected():
    with pytest.raises(MissingData):
        fit_kmodes(np.array([[1.0, np.nan], [2.0, 1.0]]), 1)


def test_numeric_column_rejected():
    schema = [ColumnSchema("h", "numeric"), ColumnSchema("c", "categorical", ((1, "a"), (2, "b")))]
    d = dataset_from_rows(schema, [[1.0, 1], [2.0, 2]])
    with pytest.raises(NotCategorical):
        categorical_matrix(d, ["h", "c"])


small = st.integers(2, 8).flatmap(
    lambda n: st.integers(1, 3).flatmap(lambda m: arrays(np.int64, (n, m), elements=st.integers(1, 3)))
)


@settings(max_examples=40)
@given(small, st.integers(0, 10_000))
def test_never_below_exhaustive_optimum(points, seed):
    k = 2
    m = fit_kmodes(points, k, seed=seed, n_restarts=5)
    assert m.cost >= kmodes_optimum(points, k)


@given(small, st.integers(0, 10_000))
def test_model_invariants(points, seed):
    k = min(2, len(points))
    m = fit_kmodes(points, k, seed=seed, n_restarts=3)
    # reported cost is the real cost of the reported modes/assignments
    assert m.recompute_cost(points) == m.cost
    # modes are the column modes of their members
    for l in range(k):
        members = np.flatnonzero(m.assignments == l)
        assert members.size > 0
        assert np.array_equal(m.modes[l], column_modes(points, members))
    # every row sits with a nearest mode
    d = hamming_matrix(points, m.modes)
    assert np.all(d[np.arange(len(points)), m.assignments] == d.min(axis=1))
    # cost trace never rises
    assert all(b <= a for a, b in zip(m.cost_trace, m.cost_trace[1:]))
    assert m.cost == kmodes_partition_cost(points, m.assignments, k)


def test_exhaustive_agreement_rate():
    rng = np.random.default_rng(20231)
    hits = 0
    for _ in range(20):
        n, mcols = rng.integers(4, 9), rng.integers(1, 4)
        pts = rng.integers(1, 4, (n, mcols))
        hits += fit_kmodes(pts, 2, seed=int(rng.integers(1 << 30)), n_restarts=50).cost == kmodes_optimum(pts, 2)
    assert hits >= 19


def test_determinism_and_seed_streams():
    rng = np.random.default_rng(9)
    pts = rng.integers(1, 5, (60, 5))
    a = fit_kmodes(pts, 4, seed=11)
    b = fit_kmodes(pts, 4, seed=11)
    assert np.array_equal(a.assignments, b.assignments) and a.cost == b.cost
    assert a.to_dict() == b.to_dict()


def test_monotone_relabel_invariance():
    rng = np.random.default_rng(5)
    pts = rng.integers(1, 4, (40, 3))
    relabeled = pts * 10 + 3  # strictly increasing map of every code
    a = fit_kmodes(pts, 3, seed=2)
    b = fit_kmodes(relabeled, 3, seed=2)
    assert np.array_equal(a.assignments, b.assignments)
    assert np.array_equal(a.modes * 10 + 3, b.modes)


def test_huang_init_runs_and_is_valid():
    rng = np.random.default_rng(1)
    pts = rng.integers(1, 4, (50, 4))
    m = fit_kmodes(pts, 3, init="huang_density", seed=0)
    assert m.recompute_cost(pts) == m.cost
    assert m.init == "huang_density"


def test_duplicate_rows_fewer_distinct_than_k():
    pts = np.array([[1, 1]] * 5 + [[2, 2]])
    m = fit_kmodes(pts, 3, seed=0)
    assert m.cost == 0
    assert len(np.unique(m.assignments)) == 3


@given(arrays(np.int64, st.tuples(st.integers(8, 25), st.integers(1, 4)), elements=st.integers(1, 4)), st.integers(0, 99))
@settings(max_examples=25)
def test_elbow_is_non_increasing(points, seed):
    curve = elbow_sweep(points, range(1, 7), seed=seed, n_restarts=3)
    assert [k for k, _ in curve] == list(range(1, 7))
    costs = [c for _, c in curve]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_sweep_models_match_curve():
    rng = np.random.default_rng(0)
    pts = rng.integers(1, 3, (30, 4))
    models = sweep_kmodes(pts, [2, 3, 4], seed=4, n_restarts=2)
    for m in models:
        assert m.recompute_cost(pts) == m.cost


def test_to_dict_labels_codes():
    schema = [ColumnSchema("c", "categorical", ((1, "Yes"), (2, "No")))]
    m = fit_kmodes(np.array([[1], [1], [2]]), 1, columns=["c"])
    doc = m.to_dict(schema)
    assert doc["modes"][0]["c"]["label"] == "Yes"
