# Standard library
import math

# Third party
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm, multivariate_normal, qmc

# Local
from causalpima.tensor import Tensor
from causalpima.gmm import GaussianDiag, LatentGmm, responsibilities, block_update
from causalpima.dag import DagParams
from causalpima.errors import ContractViolation, FactorizationError
from causalpima.elbo import (
    ElboBreakdown,
    gaussian_cross_entropy_diag,
    gaussian_cross_entropy_full,
    reconstruction_term,
    entropy_term,
    clustering_term,
    single_sample_elbo,
    dataset_loss,
)


def test_cross_entropy_examples():
    standard = GaussianDiag([0.0], [1.0])
    assert gaussian_cross_entropy_diag(standard, standard) == pytest.approx(
        -0.5 * (math.log(2 * math.pi) + 1)
    )

    shifted = GaussianDiag([1.0], [1.0])
    assert gaussian_cross_entropy_diag(shifted, standard) == pytest.approx(
        -0.5 * (math.log(2 * math.pi) + 2)
    )

    with pytest.raises(ContractViolation):
        gaussian_cross_entropy_diag(GaussianDiag([0.0, 0.0], [1.0, 1.0]), standard)


def test_full_and_diagonal_cross_entropies_agree(rng):
    for _ in range(50):
        dim = int(rng.integers(1, 6))
        y1 = GaussianDiag(rng.normal(size=dim), rng.uniform(0.1, 3, size=dim))
        y2 = GaussianDiag(rng.normal(size=dim), rng.uniform(0.1, 3, size=dim))
        full = gaussian_cross_entropy_full(y1.mean, np.diag(y1.var), y2.mean, np.diag(y2.var))
        assert full == pytest.approx(gaussian_cross_entropy_diag(y1, y2), abs=1e-12)


def qmc_normal(mean, cov, seed: int, log2_samples: int) -> np.ndarray:
    engine = qmc.MultivariateNormalQMC(mean, cov, seed=seed)
    return engine.random(2**log2_samples)


def within_standard_errors(values: np.ndarray, expected: float, count: float = 3.0):
    error = abs(values.mean() - expected)
    standard_error = values.std(ddof=1) / math.sqrt(len(values))
    assert error <= count * standard_error, (error, standard_error)


def random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim))
    return a @ a.T + 0.5 * np.eye(dim)


@pytest.mark.parametrize("seed", range(50))
def test_cross_entropy_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 6))

    y1 = GaussianDiag(rng.normal(size=dim), rng.uniform(0.2, 3.0, size=dim))
    y2 = GaussianDiag(rng.normal(size=dim), rng.uniform(0.2, 3.0, size=dim))
    samples = qmc_normal(y1.mean, np.diag(y1.var), seed, 20)
    values = norm.logpdf(samples, y2.mean, np.sqrt(y2.var)).sum(axis=1)
    within_standard_errors(values, gaussian_cross_entropy_diag(y1, y2))

    mu1, mu2 = rng.normal(size=dim), rng.normal(size=dim)
    cov1, cov2 = random_spd(rng, dim), random_spd(rng, dim)
    samples = qmc_normal(mu1, cov1, seed, 20)
    values = np.atleast_1d(multivariate_normal(mu2, cov2).logpdf(samples))
    within_standard_errors(values, gaussian_cross_entropy_full(mu1, cov1, mu2, cov2))


def test_full_cross_entropy_rejects_bad_covariances():
    with pytest.raises(FactorizationError):
        gaussian_cross_entropy_full([0.0, 0.0], np.eye(2), [0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))

    with pytest.raises(FactorizationError):
        gaussian_cross_entropy_full([0.0, 0.0], np.array([[1.0, 0.5], [0.0, 1.0]]), [0.0, 0.0], np.eye(2))


def test_reconstruction_term_examples(rng):
    x = rng.normal(size=(4, 3))
    perfect = reconstruction_term(x, (Tensor(x[None]), Tensor(np.ones((1, 4, 3)))), np.ones((4, 1)))
    assert_allclose(perfect.data, 0.0)

    off = reconstruction_term(x, (Tensor(x[None] + 1.0), Tensor(np.ones((1, 4, 3)))), np.ones((4, 1)))
    assert_allclose(off.data, -3.0)

    present = np.array([1, 0, 1, 0])
    masked = reconstruction_term(
        x, (Tensor(x[None] + 1.0), Tensor(np.ones((1, 4, 3)))), np.ones((4, 1)), present
    )
    assert_allclose(masked.data, [-3.0, 0.0, -3.0, 0.0])


def test_per_cluster_reconstruction_is_mixed_by_gamma(rng):
    x = np.zeros((2, 1))
    means = Tensor(np.array([[[0.0], [0.0]], [[1.0], [1.0]]]))  # cluster 1 is off by one
    variances = Tensor(np.ones((2, 2, 1)))
    gammas = np.array([[1.0, 0.0], [0.25, 0.75]])
    term = reconstruction_term(x, (means, variances), gammas)
    assert_allclose(term.data, [0.0, -0.75])

    with pytest.raises(ContractViolation):
        reconstruction_term(x, (means, variances), np.ones((2, 3)) / 3)


def test_entropy_term():
    var = Tensor(np.array([[1.0, math.e], [math.e**2, 1.0]]))
    assert_allclose(entropy_term(var).data, [1.0, 2.0])


def test_single_cluster_elbo(rng):
    mu, var = Tensor(rng.normal(size=(5, 2))), Tensor(rng.uniform(0.5, 2, size=(5, 2)))
    gmm = LatentGmm(np.zeros((1, 2)), np.ones((1, 2)))
    gammas = np.ones((5, 1))
    term = clustering_term((mu, var), gmm, Tensor(np.ones(1)), gammas)
    assert_allclose(term.data, -(var.data + mu.data**2).sum(axis=1))


def test_clustering_term_matches_direct_sum(rng):
    mu, var = Tensor(rng.normal(size=(3, 2))), Tensor(rng.uniform(0.5, 2, size=(3, 2)))
    gmm = LatentGmm(rng.normal(size=(2, 2, 2)), rng.uniform(0.5, 2, size=(2, 2, 2)))
    a = rng.dirichlet(np.ones(4)).reshape(2, 2)
    gammas = responsibilities(mu.data, gmm, a)
    term = clustering_term((mu, var), gmm, Tensor(a), gammas)

    for d in range(3):
        expected = 0.0
        for index in np.ndindex(2, 2):
            g = gammas[(d, *index)]
            s2, m = gmm.vars[index], gmm.means[index]
            fit = np.sum(np.log(s2) + var.data[d] / s2 + (mu.data[d] - m) ** 2 / s2)
            expected += g * (2 * math.log(a[index] / g) - fit)
        assert term.data[d] == pytest.approx(expected, abs=1e-10)


def test_single_sample_elbo_matches_monte_carlo_expectations(rng):
    x = {"a": rng.normal(size=(3, 4))}
    mu, var = rng.normal(size=(3, 2)), rng.uniform(0.3, 2.0, size=(3, 2))
    mu_hat, var_hat = rng.normal(size=(1, 3, 4)), rng.uniform(0.5, 2.0, size=(1, 3, 4))
    gmm = LatentGmm(rng.normal(size=(2, 2, 2)), rng.uniform(0.5, 2.0, size=(2, 2, 2)))
    a = rng.dirichlet(np.ones(4)).reshape(2, 2)
    gammas = responsibilities(mu, gmm, a)
    breakdown = single_sample_elbo(
        x, (Tensor(mu), Tensor(var)), {"a": (Tensor(mu_hat), Tensor(var_hat))}, gmm, Tensor(a), gammas
    )

    log_likelihood = norm.logpdf(x["a"], mu_hat[0], np.sqrt(var_hat[0])).sum(axis=1)
    assert_allclose(breakdown.reconstruction["a"].data, 2 * log_likelihood + 4 * math.log(2 * math.pi))

    # Entropy plus clustering is 2 E_q[log p(z, c) - log q(z) - log q(c)] shifted by J
    for d in range(3):
        z = qmc_normal(mu[d], np.diag(var[d]), d, 17)
        log_q = norm.logpdf(z, mu[d], np.sqrt(var[d])).sum(axis=1)
        log_prior = np.zeros(len(z))
        for index in np.ndindex(2, 2):
            g = gammas[(d, *index)]
            log_pz = norm.logpdf(z, gmm.means[index], np.sqrt(gmm.vars[index])).sum(axis=1)
            log_prior += g * (math.log(a[index]) - math.log(g) + log_pz)

        expected = breakdown.entropy.data[d] + breakdown.clustering.data[d] + 2
        within_standard_errors(2 * (log_prior - log_q), expected)


def test_elbo_is_invariant_to_relabeling_node_outcomes(rng):
    x = {"a": rng.normal(size=(4, 3))}
    fused = (Tensor(rng.normal(size=(4, 2))), Tensor(rng.uniform(0.5, 2.0, size=(4, 2))))
    mu_hat, var_hat = rng.normal(size=(6, 4, 3)), rng.uniform(0.5, 2.0, size=(6, 4, 3))
    gmm = LatentGmm(rng.normal(size=(2, 3, 2)), rng.uniform(0.5, 2.0, size=(2, 3, 2)))
    a = rng.dirichlet(np.ones(6)).reshape(2, 3)
    gammas = responsibilities(fused[0].data, gmm, a)

    first, second = np.array([1, 0]), np.array([2, 0, 1])

    def relabel(array: np.ndarray, axis: int) -> np.ndarray:
        return np.take(np.take(array, first, axis=axis), second, axis=axis + 1)

    def per_cluster(array: np.ndarray) -> Tensor:
        return Tensor(relabel(array.reshape(2, 3, 4, 3), 0).reshape(6, 4, 3))

    original = single_sample_elbo(
        x, fused, {"a": (Tensor(mu_hat), Tensor(var_hat))}, gmm, Tensor(a), gammas
    )
    relabeled = single_sample_elbo(
        x,
        fused,
        {"a": (per_cluster(mu_hat), per_cluster(var_hat))},
        LatentGmm(relabel(gmm.means, 0), relabel(gmm.vars, 0)),
        Tensor(relabel(a, 0)),
        relabel(gammas, 1),
    )
    assert_allclose(relabeled.total.data, original.total.data, rtol=1e-12, atol=1e-10)
    assert_allclose(relabeled.clustering.data, original.clustering.data, rtol=1e-12, atol=1e-10)


def test_breakdown_total_is_the_sum_of_its_terms(rng):
    x = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 2))}
    mu, var = Tensor(rng.normal(size=(4, 2))), Tensor(rng.uniform(0.5, 2, size=(4, 2)))
    recon = {
        "a": (Tensor(rng.normal(size=(1, 4, 3))), Tensor(np.ones((1, 4, 3)))),
        "b": (Tensor(rng.normal(size=(1, 4, 2))), Tensor(np.full((1, 4, 2), 0.5))),
    }
    gmm = LatentGmm(rng.normal(size=(2, 2)), np.ones((2, 2)))
    a = Tensor(np.array([0.3, 0.7]))
    gammas = responsibilities(mu.data, gmm, a.data)
    breakdown = single_sample_elbo(x, (mu, var), recon, gmm, a, gammas)

    parts = breakdown.entropy.data + breakdown.clustering.data
    parts = parts + sum(t.data for t in breakdown.reconstruction.values())
    assert_allclose(breakdown.total.data, parts)
    assert set(breakdown.means()) == {
        "reconstruction/a", "reconstruction/b", "entropy", "clustering", "total"
    }

    with pytest.raises(ContractViolation):
        single_sample_elbo(x, (mu, var), recon, gmm, a, gammas[:2])


def test_dataset_loss_is_a_mean_over_samples(rng):
    x = {"a": rng.normal(size=(3, 2))}
    mu, var = Tensor(rng.normal(size=(3, 2))), Tensor(rng.uniform(0.5, 2, size=(3, 2)))
    recon = {"a": (Tensor(rng.normal(size=(1, 3, 2))), Tensor(np.ones((1, 3, 2))))}
    gmm = LatentGmm(rng.normal(size=(2, 2)), np.ones((2, 2)))
    a = Tensor(np.array([0.5, 0.5]))
    gammas = responsibilities(mu.data, gmm, a.data)
    loss = dataset_loss(single_sample_elbo(x, (mu, var), recon, gmm, a, gammas))

    twice = np.concatenate([np.arange(3), np.arange(3)])
    doubled = single_sample_elbo(
        {"a": x["a"][twice]},
        (Tensor(mu.data[twice]), Tensor(var.data[twice])),
        {"a": (Tensor(recon["a"][0].data[:, twice]), Tensor(np.ones((1, 6, 2))))},
        gmm,
        a,
        gammas[twice],
    )
    assert dataset_loss(doubled).item() == pytest.approx(loss.item(), abs=1e-12)


def test_dataset_loss_adds_the_sparsity_penalty(rng):
    total = Tensor(np.array([-1.0, -3.0]))
    breakdown = ElboBreakdown({}, total, total, total)
    dag = DagParams.initialize(3, rng)
    plain = dataset_loss(breakdown).item()
    assert plain == pytest.approx(2.0)
    assert dataset_loss(breakdown, dag, lambda_b=0.5).item() > plain

    with pytest.raises(ContractViolation):
        empty = Tensor(np.zeros(0))
        dataset_loss(ElboBreakdown({}, empty, empty, empty))


def test_block_update_maximizes_the_elbo(rng):
    x = {"a": rng.normal(size=(10, 2))}
    mu, var = Tensor(rng.normal(size=(10, 2))), Tensor(rng.uniform(0.2, 1, size=(10, 2)))
    recon = {"a": (Tensor(np.zeros((1, 10, 2))), Tensor(np.ones((1, 10, 2))))}
    a = Tensor(np.array([0.4, 0.6]))
    gammas = responsibilities(mu.data, LatentGmm(rng.normal(size=(2, 2)), np.ones((2, 2))), a.data)
    best_gmm = block_update(mu.data, var.data, gammas)

    def elbo(gmm):
        return single_sample_elbo(x, (mu, var), recon, gmm, a, gammas).total.data.mean()

    best = elbo(best_gmm)
    for k in range(2):
        for j in range(2):
            for step in (1e-2, -1e-2):
                means = best_gmm.means.copy()
                means[k, j] += step
                assert elbo(LatentGmm(means, best_gmm.vars)) <= best

                variances = best_gmm.vars.copy()
                variances[k, j] += step
                assert elbo(LatentGmm(best_gmm.means, variances)) <= best
