import json
import logging

import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings, strategies as st

from scoreforge import metrics
from scoreforge.metrics import FeatureMoments

from _oracles import kid_brute_force
from conftest import write_crop_dir


def moments(mu, sigma):
    return FeatureMoments(np.atleast_1d(np.asarray(mu, float)), np.atleast_2d(np.asarray(sigma, float)))


def random_psd(rng, d, rank=None):
    a = rng.normal(size=(d, rank or d))
    return a @ a.T


def fid_with_sqrtm(a, b):
    covmean = scipy.linalg.sqrtm(a.sigma @ b.sigma)
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma + b.sigma - 2 * np.real(covmean)))


# Inception Score

def test_is_uniform_rows():
    mean, std = metrics.inception_score(np.full((20, 5), 0.2), splits=4)
    assert abs(mean - 1.0) < 1e-12 and std == 0.0


def test_is_one_hot():
    mean, std = metrics.inception_score(np.eye(4), splits=1)
    assert abs(mean - 4.0) < 1e-12 and std == 0.0


def test_is_errors():
    with pytest.raises(ValueError):
        metrics.inception_score(np.eye(3), splits=5)
    with pytest.raises(ValueError):
        metrics.inception_score(np.full((4, 2), 0.7), splits=1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 4))
def test_is_bounds_and_permutation(seed, c, splits):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(c, 0.3), size=8 * splits)
    mean, _ = metrics.inception_score(probs, splits)
    assert 1 - 1e-9 <= mean <= c + 1e-9
    # shuffle rows inside each contiguous split
    parts = np.array_split(probs, splits)
    shuffled = np.concatenate([p[rng.permutation(len(p))] for p in parts])
    assert abs(metrics.inception_score(shuffled, splits)[0] - mean) < 1e-9


# moments and FID

def test_moments_example():
    m = metrics.compute_moments([[0, 0], [2, 0]])
    np.testing.assert_allclose(m.mu, [1, 0])
    np.testing.assert_allclose(m.sigma, [[2, 0], [0, 0]])
    same = metrics.compute_moments(np.ones((5, 3)))
    assert np.all(same.sigma == 0)
    with pytest.raises(ValueError):
        metrics.compute_moments([[1.0, 2.0]])


def test_fid_identity_and_1d():
    rng = np.random.default_rng(0)
    a = metrics.compute_moments(rng.normal(size=(50, 6)))
    assert metrics.frechet_distance(a, a) <= 1e-8
    assert abs(metrics.frechet_distance(moments(0, 1), moments(1, 4)) - 2.0) < 1e-12


def test_fid_commuting_diagonal_oracle():
    rng = np.random.default_rng(1)
    mu_a, mu_b = rng.normal(size=5), rng.normal(size=5)
    var_a, var_b = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 3, 5)
    oracle = float(((mu_a - mu_b) ** 2).sum() + ((np.sqrt(var_a) - np.sqrt(var_b)) ** 2).sum())
    got = metrics.frechet_distance(moments(mu_a, np.diag(var_a)), moments(mu_b, np.diag(var_b)))
    assert abs(got - oracle) < 1e-8


def test_fid_matches_sqrtm_reference():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = moments(rng.normal(size=8), random_psd(rng, 8))
        b = moments(rng.normal(size=8), random_psd(rng, 8))
        ref = fid_with_sqrtm(a, b)
        assert abs(metrics.frechet_distance(a, b) - ref) < 1e-7 * max(1.0, ref)


def test_fid_symmetry_and_nonnegativity():
    rng = np.random.default_rng(3)
    for trial in range(1000):
        d = int(rng.integers(1, 7))
        rank = int(rng.integers(1, d + 1))
        a = moments(rng.normal(size=d), random_psd(rng, d, rank))
        b = moments(rng.normal(size=d) * (trial % 2), random_psd(rng, d, rank))
        ab, ba = metrics.frechet_distance(a, b), metrics.frechet_distance(b, a)
        assert ab >= 0
        assert abs(ab - ba) < 1e-8 * max(1.0, ab)


def test_fid_dimension_mismatch():
    with pytest.raises(ValueError):
        metrics.frechet_distance(moments([0, 0], np.eye(2)), moments([0, 0, 0], np.eye(3)))


def test_fid_rejects_non_psd():
    with pytest.raises(metrics.NumericalError):
        metrics.frechet_distance(moments([0, 0], np.diag([1.0, -1.0])), moments([0, 0], np.eye(2)))


# KID

def test_kid_hand_example():
    e = np.eye(2)
    assert abs(metrics.kid(e, e) - (-2.375)) < 1e-12


def test_kid_matches_brute_force():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert abs(metrics.kid(x, y) - kid_brute_force(x, y)) < 1e-10
    x2 = rng.normal(size=(4, 3))
    assert abs(metrics.kid(x2, y) - kid_brute_force(x2, y)) < 1e-10


def test_kid_unbiased_monte_carlo():
    rng = np.random.default_rng(5)
    vals = [metrics.kid(rng.normal(size=(200, 8)), rng.normal(size=(200, 8))) for _ in range(100)]
    assert abs(np.mean(vals)) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kid_permutation_and_swap(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(6, 4)), rng.normal(size=(9, 4)) + 0.5
    base = metrics.kid(x, y)
    assert abs(metrics.kid(x[rng.permutation(6)], y[rng.permutation(9)]) - base) < 1e-10
    assert abs(metrics.kid(y, x) - base) < 1e-10


def test_kid_too_few_samples():
    with pytest.raises(ValueError):
        metrics.kid(np.ones((1, 3)), np.ones((4, 3)))


# PCA

def test_pca_matches_eigendecomposition():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(30, 3)) * [3, 1, 0.2], rng.normal(size=(20, 3)) + 1
    res = metrics.pca_project({"real": a, "fake": b})
    pooled = np.concatenate([a, b])
    w, v = np.linalg.eigh(np.cov(pooled.T))
    order = np.argsort(w)[::-1][:2]
    for k, idx in enumerate(order):
        axis = v[:, idx]
        sign = np.sign(axis @ res.components[k])
        np.testing.assert_allclose(res.components[k], sign * axis, atol=1e-8)
        expected = (pooled - pooled.mean(0)) @ axis * sign
        got = np.concatenate([res.coords["real"][:, k], res.coords["fake"][:, k]])
        np.testing.assert_allclose(got, expected, atol=1e-8)
    np.testing.assert_allclose(res.explained_variance_ratio, w[order] / w.sum(), atol=1e-8)
    for row in res.components:
        assert row[np.flatnonzero(np.abs(row) > 1e-12)[0]] > 0


def test_pca_planar_and_duplicate_sets():
    rng = np.random.default_rng(7)
    plane = rng.normal(size=(20, 2)) @ rng.normal(size=(2, 5))
    res = metrics.pca_project([("a", plane), ("b", plane)])
    assert abs(res.explained_variance_ratio.sum() - 1) < 1e-9
    np.testing.assert_array_equal(res.coords["a"], res.coords["b"])
    with pytest.raises(ValueError):
        metrics.pca_project({"x": np.ones((1, 3))})


def test_pca_csv(tmp_path):
    res = metrics.pca_project({"r": np.eye(3), "f": -np.eye(3)})
    path = metrics.save_pca_csv(res, tmp_path / "pca.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "label,pc1,pc2" and len(lines) == 7


# extractors and full evaluation

def test_projection_extractor_contract():
    ex = metrics.RandomProjectionExtractor(seed=3)
    imgs = torch.rand(7, 1, 32, 32) * 2 - 1
    probs = ex.classify(imgs)
    assert probs.shape == (7, 10)
    assert np.all(probs >= 0) and np.allclose(probs.sum(1), 1, atol=1e-6)
    np.testing.assert_array_equal(ex.embed(imgs), metrics.RandomProjectionExtractor(seed=3).embed(imgs))


def test_evaluate_self_comparison(tmp_path):
    write_crop_dir(tmp_path / "real", 24, 32, "handwritten", seed=0)
    ex = metrics.RandomProjectionExtractor()
    report = metrics.evaluate(tmp_path / "real", tmp_path / "real", ex, splits=4)
    assert report.fid <= 1e-6
    assert report.n_real == report.n_fake == 24
    from scoreforge.dataprep import load_image_dir
    feats = ex.embed(load_image_dir(tmp_path / "real")[1])
    assert abs(report.kid - kid_brute_force(feats, feats)) < 1e-6
    data = json.loads(report.to_json())
    assert set(data) == {"extractor_id", "n_real", "n_fake", "is_mean", "is_std", "fid", "kid", "splits", "kernel"}
    assert set(data["kernel"]) == {"degree", "scale", "offset"}
    assert metrics.MetricReport.from_json(report.to_json()) == report
    assert report.is_mean >= 1


def test_evaluate_warns_on_small_sample(caplog):
    imgs = torch.rand(6, 1, 16, 16) * 2 - 1
    with caplog.at_level(logging.WARNING):
        metrics.evaluate_images(imgs, imgs, metrics.RandomProjectionExtractor(), splits=2)
    assert "2048" in caplog.text


class _Broken:
    extractor_id = "broken-net"

    def embed(self, images):
        raise RuntimeError("boom")

    classify = embed


def test_extractor_failure_wrapped():
    imgs = torch.zeros(4, 1, 8, 8)
    with pytest.raises(metrics.ExtractorError, match="broken-net"):
        metrics.evaluate_images(imgs, imgs, _Broken(), splits=1)


def test_inception_adapter_structure():
    pytest.importorskip("torchvision")
    ex = metrics.InceptionExtractor(weights=None, batch_size=2)
    imgs = torch.rand(2, 1, 40, 40) * 2 - 1
    feats = ex.embed(imgs)
    probs = ex.classify(imgs)
    assert feats.shape == (2, 2048)
    assert probs.shape == (2, 1000) and np.allclose(probs.sum(1), 1, atol=1e-5)
