# Standard library
import math

# Third party
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm

# Local
from causalpima.errors import ContractViolation
from causalpima.elbo import clustering_term
from causalpima.tensor import Tensor
from causalpima.gmm import (
    GaussianDiag,
    LatentGmm,
    log_density_diag,
    responsibilities,
    block_update,
    init_gmm,
    fit_gmm,
    hard_assignments,
    occupancy,
)


def two_clusters(mean=1.0, var=1.0) -> LatentGmm:
    return LatentGmm(np.array([[-mean], [mean]]), np.full((2, 1), var))


def test_log_density_examples(rng):
    assert log_density_diag([0.0], GaussianDiag([0.0], [1.0])) == pytest.approx(-0.5 * math.log(2 * math.pi))

    z, mean, var = rng.normal(size=2), rng.normal(size=2), rng.uniform(0.5, 2, size=2)
    joint = log_density_diag(z, GaussianDiag(mean, var))
    parts = sum(log_density_diag(z[j], GaussianDiag(mean[j], var[j])) for j in range(2))
    assert joint == pytest.approx(parts, abs=1e-12)
    assert joint == pytest.approx(norm.logpdf(z, mean, np.sqrt(var)).sum(), abs=1e-12)


def test_gaussian_respects_the_floor():
    with pytest.raises(ContractViolation):
        GaussianDiag([0.0], [1e-9])


def test_latent_gmm_respects_the_floor():
    with pytest.raises(ContractViolation):
        LatentGmm(np.zeros((2, 1)), np.full((2, 1), 1e-9))

    gmm = LatentGmm(np.zeros((2, 1)), np.full((2, 1), 1e-9), floor=1e-12)
    assert gmm.floor == 1e-12

    low = block_update(np.zeros((3, 1)), np.full((3, 1), 1e-12), np.ones((3, 1)), floor=1e-10)
    assert low.floor == 1e-10
    assert_allclose(low.vars, 1e-10)


def test_responsibilities_examples():
    single = LatentGmm(np.zeros((1, 1, 2)), np.ones((1, 1, 2)))
    assert_allclose(responsibilities(np.array([3.0, -1.0]), single, np.ones((1, 1))), np.ones((1, 1)))

    same = LatentGmm(np.zeros((2, 1)), np.ones((2, 1)))
    gammas = responsibilities(np.array([[0.3], [-2.0]]), same, np.array([0.5, 0.5]))
    assert_allclose(gammas, 0.5)

    gmm = two_clusters()
    assert_allclose(responsibilities(np.array([0.0]), gmm, np.array([0.5, 0.5])), [0.5, 0.5])

    densities = norm.pdf(1.0, [-1.0, 1.0], 1.0)
    assert_allclose(
        responsibilities(np.array([1.0]), gmm, np.array([0.5, 0.5])), densities / densities.sum()
    )


def test_responsibilities_are_stable_far_from_every_cluster():
    gammas = responsibilities(np.array([[400.0]]), two_clusters(), np.array([0.5, 0.5]))
    assert np.all(np.isfinite(gammas))
    assert gammas[0, 1] == pytest.approx(1.0)


def test_responsibilities_are_continuous(rng):
    gmm = LatentGmm(rng.normal(size=(2, 2, 2)), rng.uniform(0.5, 2, size=(2, 2, 2)))
    a = rng.dirichlet(np.ones(4)).reshape(2, 2)
    z = rng.normal(size=2)
    for delta in (1e-2, 1e-4, 1e-6):
        moved = responsibilities(z + delta, gmm, a)
        assert np.abs(moved - responsibilities(z, gmm, a)).max() < 50 * delta


def test_responsibilities_sum_to_one(rng):
    gmm = LatentGmm(rng.normal(size=(2, 3, 2)), rng.uniform(0.5, 2, size=(2, 3, 2)))
    a = rng.dirichlet(np.ones(6)).reshape(2, 3)
    gammas = responsibilities(rng.normal(size=(10, 2)), gmm, a)
    assert gammas.shape == (10, 2, 3)
    assert_allclose(gammas.sum(axis=(1, 2)), 1.0, atol=1e-10)


def test_block_update_examples(rng):
    mus, variances = rng.normal(size=(6, 2)), rng.uniform(0.1, 1, size=(6, 2))
    gmm = block_update(mus, variances, np.ones((6, 1)))
    assert_allclose(gmm.means[0], mus.mean(axis=0))
    assert_allclose(gmm.vars[0], ((mus - mus.mean(axis=0)) ** 2).mean(axis=0) + variances.mean(axis=0))

    labels = np.array([0, 1, 1, 0, 1, 0])
    gmm = block_update(mus, variances, np.eye(2)[labels])
    assert_allclose(gmm.means[0], mus[labels == 0].mean(axis=0))
    assert_allclose(gmm.means[1], mus[labels == 1].mean(axis=0))


def test_block_update_matches_weighted_moments(rng):
    mus, variances = rng.normal(size=(8, 3)), rng.uniform(0.1, 1, size=(8, 3))
    gammas = rng.dirichlet(np.ones(4), size=8).reshape(8, 2, 2)
    gmm = block_update(mus, variances, gammas)

    weights = gammas.reshape(8, 4)
    for k in range(4):
        w = weights[:, k][:, None]
        mean = (w * mus).sum(axis=0) / w.sum()
        var = (w * ((mus - mean) ** 2 + variances)).sum(axis=0) / w.sum()
        assert_allclose(gmm.flat_means()[k], mean, atol=1e-12)
        assert_allclose(gmm.flat_vars()[k], var, atol=1e-12)


def test_block_update_floors_and_handles_empty_clusters(rng):
    mus = np.zeros((4, 2))
    variances = np.full((4, 2), 1e-9)
    previous = LatentGmm(np.array([[5.0, 5.0], [-5.0, -5.0]]), np.ones((2, 2)))
    gmm = block_update(mus, variances, np.tile([1.0, 0.0], (4, 1)), previous=previous)
    assert np.all(gmm.vars >= 1e-6)
    assert_allclose(gmm.means[1], [-5.0, -5.0])


def test_block_update_maximizes_the_clustering_term(rng):
    for _ in range(100):
        mus, variances = rng.normal(size=(12, 2)), rng.uniform(0.1, 1, size=(12, 2))
        gammas = rng.dirichlet(np.ones(4), size=12).reshape(12, 2, 2)
        a = Tensor(rng.dirichlet(np.ones(4)).reshape(2, 2))
        fused = (Tensor(mus), Tensor(variances))
        gmm = block_update(mus, variances, gammas)
        best = clustering_term(fused, gmm, a, gammas).data.sum()

        for field, step in ((0, 1e-2), (0, -1e-2), (1, 1e-2), (1, -1e-2)):
            index = (int(rng.integers(2)), int(rng.integers(2)), int(rng.integers(2)))
            means, vars_ = gmm.means.copy(), gmm.vars.copy()
            (means if field == 0 else vars_)[index] += step
            moved = clustering_term(fused, LatentGmm(means, vars_), a, gammas).data.sum()
            assert moved <= best + 1e-12


def test_block_update_rejects_empty_batches():
    with pytest.raises(ContractViolation):
        block_update(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))


def test_init_gmm_seeds_means_at_data_points(rng):
    mus, variances = rng.normal(size=(10, 2)), np.full((10, 2), 0.1)
    gmm = init_gmm(mus, variances, (2, 2), rng)
    assert gmm.arities == (2, 2)
    for mean in gmm.flat_means():
        assert np.any(np.all(np.isclose(mus, mean), axis=1))


def test_fit_gmm_converges_on_separable_blobs(rng):
    mus = np.concatenate([rng.normal(-4, 0.3, size=(50, 2)), rng.normal(4, 0.3, size=(50, 2))])
    variances = np.full((100, 2), 0.01)
    gmm = init_gmm(mus, variances, (2,), rng)
    gmm, iterations = fit_gmm(mus, variances, np.array([0.5, 0.5]), gmm, rng)
    assert iterations < 100

    labels = hard_assignments(responsibilities(mus, gmm, np.array([0.5, 0.5])))
    assert len(set(labels[:50])) == 1 and len(set(labels[50:])) == 1
    assert labels[0] != labels[-1]
    assert_allclose(occupancy(np.eye(2)[labels]), [50, 50])
