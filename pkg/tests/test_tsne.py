import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from surveyseg.errors import ConstantColumnWarning, PerplexityTooLarge, SurveySegError, TooManyPoints
from surveyseg.ingest import ColumnSchema, dataset_from_rows
from surveyseg.tsne import (
    PerplexityRangeWarning,
    TsneConfig,
    calibrate_affinities,
    encode_mixed_for_tsne,
    encoded_feature_names,
    fit_tsne,
    kl_and_gradient,
    low_dim_affinities,
    pairwise_sq_dists,
    symmetrize,
)


def test_pairwise_matches_scipy():
    rng = np.random.default_rng(0)
    for d in (1, 5, 40):
        x = rng.normal(size=(30, d))
        assert np.allclose(pairwise_sq_dists(x), cdist(x, x, "sqeuclidean"), atol=1e-12)
        assert np.array_equal(pairwise_sq_dists(x), pairwise_sq_dists(x).T)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from([2.0, 5.0, 10.0, 30.0]))
def test_calibrated_rows_hit_perplexity(seed, perp):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 4)) * rng.uniform(0.01, 100)
    aff = calibrate_affinities(pairwise_sq_dists(x), perp)
    assert np.allclose(aff.conditional.sum(axis=1), 1.0)
    assert np.all(np.diag(aff.conditional) == 0)
    assert np.max(np.abs(aff.realized_perplexity() - perp)) < 1e-4


def test_perplexity_entropy_against_independent_formula():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(25, 3))
    aff = calibrate_affinities(pairwise_sq_dists(x), 7.0)
    d = cdist(x, x, "sqeuclidean")
    for i in range(25):
        w = np.exp(-d[i] / (2 * aff.sigmas[i] ** 2))
        w[i] = 0
        p = w / w.sum()
        h = -np.sum(p[p > 0] * np.log2(p[p > 0]))
        assert abs(2**h - 7.0) < 1e-4
        assert np.allclose(p, aff.conditional[i], atol=1e-10)


def test_degenerate_rows_are_uniform():
    x = np.zeros((6, 2))
    aff = calibrate_affinities(pairwise_sq_dists(x), 2.0)
    assert aff.degenerate.all()
    assert np.allclose(aff.conditional[~np.eye(6, dtype=bool)], 1 / 5)


def test_perplexity_too_large():
    with pytest.raises(PerplexityTooLarge):
        calibrate_affinities(pairwise_sq_dists(np.eye(5)), 4.0)


def test_joint_is_symmetric_distribution():
    rng = np.random.default_rng(2)
    P = symmetrize(calibrate_affinities(pairwise_sq_dists(rng.normal(size=(20, 3))), 5.0))
    assert np.allclose(P, P.T)
    assert P.sum() == pytest.approx(1.0)
    assert np.all(np.diag(P) == 0)


def test_low_dim_affinities_formula():
    y = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    q, num = low_dim_affinities(y)
    raw = np.array([[0, 1 / 2, 1 / 5], [1 / 2, 0, 1 / 6], [1 / 5, 1 / 6, 0]])
    assert np.allclose(num, raw)
    assert np.allclose(q, raw / raw.sum())


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 5))
    P = symmetrize(calibrate_affinities(pairwise_sq_dists(x), 4.0))
    y = rng.normal(size=(12, 2))
    _, g = kl_and_gradient(P, y)
    h = 1e-6
    num = np.zeros_like(y)
    for i in range(12):
        for a in range(2):
            yp, ym = y.copy(), y.copy()
            yp[i, a] += h
            ym[i, a] -= h
            num[i, a] = (kl_and_gradient(P, yp)[0] - kl_and_gradient(P, ym)[0]) / (2 * h)
    rel = np.linalg.norm(g - num) / np.linalg.norm(num)
    assert rel < 1e-4


def test_kl_decreases_over_seeds():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(60, 6))
    for seed in range(5):
        emb = fit_tsne(x, TsneConfig(perplexity=10, iterations=300, seed=seed))
        assert emb.final_kl < emb.initial_kl
        assert np.isfinite(emb.coords).all()


def _blobs(seed, n=300):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0] * 5, [10.0] + [0.0] * 4, [0.0, 10.0, 0.0, 0.0, 0.0]])
    lab = np.repeat(np.arange(3), n // 3)
    return centers[lab] + rng.normal(size=(n, 5)), lab


def nearest_centroid_agreement(coords, labels):
    cents = np.array([coords[labels == l].mean(axis=0) for l in np.unique(labels)])
    return float(np.mean(np.argmin(cdist(coords, cents), axis=1) == labels))


def test_blob_recovery():
    x, lab = _blobs(0, 150)
    emb = fit_tsne(x, TsneConfig(perplexity=20, iterations=400, seed=0))
    assert nearest_centroid_agreement(emb.coords, lab) >= 0.95


def test_translation_invariance_of_input():
    # descent amplifies rounding, so invariance is checked on the affinities
    x, _ = _blobs(1, 60)
    pa = symmetrize(calibrate_affinities(pairwise_sq_dists(x), 10.0))
    pb = symmetrize(calibrate_affinities(pairwise_sq_dists(x + 1000.0), 10.0))
    assert np.allclose(pa, pb, rtol=1e-6, atol=1e-12)


def test_determinism_and_exports():
    x, lab = _blobs(2, 30)
    cfg = TsneConfig(perplexity=5, iterations=60, seed=4, record_every=20)
    a, b = fit_tsne(x, cfg), fit_tsne(x, cfg)
    assert np.array_equal(a.coords, b.coords)
    assert a.to_csv(lab) == b.to_csv(lab)
    assert [i for i, _ in a.kl_trace] == [0, 20, 40, 60]
    assert a.to_csv(lab).splitlines()[0] == "row_id,y1,y2,cluster"


def test_identical_points_do_not_blow_up():
    x = np.vstack([np.zeros((10, 3)), np.ones((10, 3))])
    emb = fit_tsne(x, TsneConfig(perplexity=5, iterations=100, seed=0))
    assert np.isfinite(emb.coords).all()


def test_errors_and_warnings():
    with pytest.raises(SurveySegError):
        fit_tsne(np.zeros((2, 2)))
    with pytest.raises(SurveySegError):
        TsneConfig(perplexity=0)
    with pytest.raises(SurveySegError):
        TsneConfig(iterations=0)
    with pytest.raises(PerplexityTooLarge):
        fit_tsne(np.random.default_rng(0).normal(size=(10, 2)), TsneConfig(perplexity=30))
    with pytest.warns(PerplexityRangeWarning):
        TsneConfig(perplexity=60)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TsneConfig(perplexity=30)


def test_too_many_points(monkeypatch):
    import surveyseg.tsne as mod

    monkeypatch.setattr(mod, "MAX_POINTS", 10)
    with pytest.raises(TooManyPoints):
        fit_tsne(np.zeros((11, 2)))


def test_mixed_encoding():
    schema = [
        ColumnSchema("c", "categorical", ((1, "a"), (2, "b"), (3, "c"))),
        ColumnSchema("h", "numeric"),
        ColumnSchema("z", "numeric"),
    ]
    d = dataset_from_rows(schema, [[1, 1.0, 5.0], [3, 3.0, 5.0]])
    assert encoded_feature_names(d, ["c", "h"]) == ["c=1", "c=2", "c=3", "h"]
    enc = encode_mixed_for_tsne(d, ["c", "h"])
    assert enc.tolist() == [[1, 0, 0, -1], [0, 0, 1, 1]]
    with pytest.warns(ConstantColumnWarning):
        assert encode_mixed_for_tsne(d, ["z"]).tolist() == [[0.0], [0.0]]
    dm = dataset_from_rows(schema, [[None, 1.0, 1.0], [1, 2.0, 1.0]])
    with pytest.raises(SurveySegError):
        encode_mixed_for_tsne(dm, ["c"])
