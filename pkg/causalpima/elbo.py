# Standard library
import math
import logging
from dataclasses import dataclass
from collections.abc import Mapping

# Third party
import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

# Local
try:
    from causalpima import tensor as T
    from causalpima.tensor import Tensor
    from causalpima.gmm import GaussianDiag, LatentGmm
    from causalpima.dag import DagParams, sparsity_penalty
    from causalpima.errors import ContractViolation, FactorizationError
except ImportError:
    import tensor as T
    from tensor import Tensor
    from gmm import GaussianDiag, LatentGmm
    from dag import DagParams, sparsity_penalty
    from errors import ContractViolation, FactorizationError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
TINY = 1e-300  # Floor for log A; entries of A are products of softmax outputs


#########
# HELPERS
#########


def _factor(matrix: np.ndarray, name: str):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise FactorizationError(name, f"must be square, got {matrix.shape}")

    if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-12):
        raise FactorizationError(name, "not symmetric")

    try:
        return cho_factor(matrix, lower=True)
    except LinAlgError:
        raise FactorizationError(name)


def _gamma_entropy_part(gammas: np.ndarray) -> np.ndarray:
    """sum_k gamma log gamma, with 0 log 0 = 0."""

    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(gammas > 0, gammas * np.log(gammas), 0.0)

    return terms.sum(axis=1)


######
# MAIN
######


@dataclass
class ElboBreakdown:
    """Per-sample ELBO terms (each a tensor of shape (N,)), constants dropped."""

    reconstruction: dict[str, Tensor]
    entropy: Tensor
    clustering: Tensor
    total: Tensor

    def means(self) -> dict[str, float]:
        summary = {
            f"reconstruction/{name}": float(term.data.mean())
            for name, term in self.reconstruction.items()
        }
        summary["entropy"] = float(self.entropy.data.mean())
        summary["clustering"] = float(self.clustering.data.mean())
        summary["total"] = float(self.total.data.mean())
        return summary


def gaussian_cross_entropy_diag(y1: GaussianDiag, y2: GaussianDiag) -> float:
    """E_{y1}[log p_{y2}(Z)] for diagonal Gaussians."""

    if y1.mean.shape != y2.mean.shape:
        raise ContractViolation(f"dimensions differ: {y1.mean.shape} vs {y2.mean.shape}")

    terms = (
        np.log(2.0 * math.pi * y2.var)
        + y1.var / y2.var
        + (y1.mean - y2.mean) ** 2 / y2.var
    )
    return float(-0.5 * terms.sum())


def gaussian_cross_entropy_full(mu1, cov1, mu2, cov2) -> float:
    """E_{N(mu1, cov1)}[log N(Z; mu2, cov2)] with symmetric positive definite covariances."""

    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    dim = mu1.shape[0]
    if mu2.shape != (dim,) or np.shape(cov1) != (dim, dim) or np.shape(cov2) != (dim, dim):
        raise ContractViolation("means and covariances must share one dimension")

    _factor(cov1, "cov1")
    factor2 = _factor(cov2, "cov2")
    log_det2 = 2.0 * np.sum(np.log(np.diag(factor2[0])))
    diff = mu1 - mu2
    mahalanobis = float(diff @ cho_solve(factor2, diff))
    trace = float(np.trace(cho_solve(factor2, np.asarray(cov1, dtype=np.float64))))
    return -0.5 * (dim * LOG_2PI + log_det2 + mahalanobis + trace)


def reconstruction_term(
    x: np.ndarray,
    recon: tuple[Tensor, Tensor],
    gammas: np.ndarray,
    present: np.ndarray | None = None,
) -> Tensor:
    """-sum_d [log var_hat + (x - mu_hat)^2 / var_hat] per sample, mixed over
    clusters by gamma when the decoder is per-cluster."""

    mu_hat, var_hat = recon
    num_samples = x.shape[0]
    copies = mu_hat.shape[0]
    flat_gammas = gammas.reshape(num_samples, -1)
    if copies not in (1, flat_gammas.shape[1]):
        raise ContractViolation(f"{copies} decoder outputs for {flat_gammas.shape[1]} clusters")

    x = x.reshape(num_samples, -1)
    per_copy = -T.reduce("sum", T.log(var_hat) + T.square(x - mu_hat) / var_hat, [2])
    if copies == 1:
        term = per_copy[0]
    else:
        term = T.reduce("sum", per_copy * flat_gammas.T, [0])

    if present is not None:
        term = term * np.asarray(present, dtype=np.float64)

    return term


def entropy_term(var: Tensor) -> Tensor:
    return T.reduce("sum", T.log(var), [1])


def clustering_term(
    fused: tuple[Tensor, Tensor], gmm: LatentGmm, a: Tensor, gammas: np.ndarray
) -> Tensor:
    """sum_c gamma_c [2 log(A_c / gamma_c) - sum_j (log s2 + var / s2 + (mu - m)^2 / s2)]
    with gamma held constant."""

    mu, var = fused
    num_samples = mu.shape[0]
    weights = np.asarray(gammas).reshape(num_samples, gmm.num_clusters)
    means, variances = gmm.flat_means()[None], gmm.flat_vars()[None]

    log_a = T.log(T.clamp_min(T.reshape(a, (gmm.num_clusters,)), TINY))
    mixing = 2.0 * T.reduce("sum", weights * log_a, [1]) - 2.0 * _gamma_entropy_part(weights)

    spread = (
        np.log(variances)
        + T.expand_dims(var, 1) / variances
        + T.square(T.expand_dims(mu, 1) - means) / variances
    )
    fit = T.reduce("sum", weights * T.reduce("sum", spread, [2]), [1])
    return mixing - fit


def single_sample_elbo(
    x: Mapping[str, np.ndarray],
    fused: tuple[Tensor, Tensor],
    recon: Mapping[str, tuple[Tensor, Tensor]],
    gmm: LatentGmm,
    a: Tensor,
    gammas: np.ndarray,
    present: Mapping[str, np.ndarray] | None = None,
) -> ElboBreakdown:
    """Closed-form ELBO of every sample in the batch (constants dropped)."""

    present = present or {}
    num_samples = fused[0].shape[0]
    if np.asarray(gammas).shape != (num_samples,) + gmm.arities:
        raise ContractViolation(
            f"gammas have shape {np.shape(gammas)}, expected {(num_samples,) + gmm.arities}"
        )

    reconstruction = {
        name: reconstruction_term(x[name], recon[name], gammas, present.get(name))
        for name in recon
    }
    entropy = entropy_term(fused[1])
    clustering = clustering_term(fused, gmm, a, gammas)

    total = entropy + clustering
    for term in reconstruction.values():
        total = total + term

    return ElboBreakdown(reconstruction, entropy, clustering, total)


def dataset_loss(
    breakdown: ElboBreakdown, dag: DagParams | None = None, lambda_b: float = 0.0
) -> Tensor:
    """-mean_d L_d plus the optional L1 penalty on the edge metric."""

    if breakdown.total.shape[0] == 0:
        raise ContractViolation("dataset_loss needs a nonempty batch")

    loss = -T.reduce("mean", breakdown.total)
    if dag is not None and lambda_b > 0:
        loss = loss + lambda_b * sparsity_penalty(dag)

    return loss
