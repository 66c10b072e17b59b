# Standard library
import math
import logging
from dataclasses import dataclass
from collections.abc import Sequence

# Third party
import numpy as np
import pandas as pd
from scipy.special import logsumexp

# Local
try:
    from causalpima.tensor import Tensor
    from causalpima.errors import ContractViolation, NumericalFault
    from causalpima.constants import (
        VARIANCE_FLOOR,
        EMPTY_CLUSTER_MASS,
        GMM_INIT_JITTER_STD,
        GMM_FIT_MAX_ITERS,
    )
except ImportError:
    from tensor import Tensor
    from errors import ContractViolation, NumericalFault
    from constants import (
        VARIANCE_FLOOR,
        EMPTY_CLUSTER_MASS,
        GMM_INIT_JITTER_STD,
        GMM_FIT_MAX_ITERS,
    )

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


#########
# HELPERS
#########


def _values(array) -> np.ndarray:
    return array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float64)


def global_variance(mus: np.ndarray, variances: np.ndarray) -> np.ndarray:
    return mus.var(axis=0) + variances.mean(axis=0)


def hard_assignments(gammas: np.ndarray) -> np.ndarray:
    """Flat argmax cluster index per data point."""

    gammas = np.asarray(gammas)
    return gammas.reshape(gammas.shape[0], -1).argmax(axis=1)


def occupancy(gammas: np.ndarray) -> np.ndarray:
    gammas = np.asarray(gammas)
    num_clusters = int(np.prod(gammas.shape[1:]))
    return np.bincount(hard_assignments(gammas), minlength=num_clusters)


######
# MAIN
######


@dataclass
class GaussianDiag:
    mean: np.ndarray
    var: np.ndarray
    floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if self.mean.shape != self.var.shape:
            raise ContractViolation(f"mean {self.mean.shape} and var {self.var.shape} differ")

        if np.any(self.var < self.floor):
            raise ContractViolation(f"variances must be >= {self.floor}")


@dataclass
class LatentGmm:
    means: np.ndarray  # (C_1, ..., C_L, J)
    vars: np.ndarray  # (C_1, ..., C_L, J)
    floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.vars = np.asarray(self.vars, dtype=np.float64)
        if self.means.shape != self.vars.shape or self.means.ndim < 2:
            raise ContractViolation(
                f"means {self.means.shape} and vars {self.vars.shape} must share (*arities, J)"
            )

        if np.any(self.vars < self.floor):
            raise ContractViolation(f"cluster variances must be >= {self.floor}")

    @property
    def arities(self) -> tuple[int, ...]:
        return self.means.shape[:-1]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[-1]

    @property
    def num_clusters(self) -> int:
        return int(np.prod(self.arities))

    def flat_means(self) -> np.ndarray:
        return self.means.reshape(self.num_clusters, self.latent_dim)

    def flat_vars(self) -> np.ndarray:
        return self.vars.reshape(self.num_clusters, self.latent_dim)

    def component(self, index: Sequence[int]) -> GaussianDiag:
        index = tuple(index)
        return GaussianDiag(self.means[index], self.vars[index], floor=0.0)

    @classmethod
    def from_flat(
        cls,
        means: np.ndarray,
        variances: np.ndarray,
        arities: Sequence[int],
        floor: float = VARIANCE_FLOOR,
    ):
        shape = tuple(arities) + (means.shape[-1],)
        return cls(means.reshape(shape), variances.reshape(shape), floor)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for flat, index in enumerate(np.ndindex(*self.arities)):
            row = {"cluster": flat}
            row.update({f"n{ell + 1}": int(c) for ell, c in enumerate(index)})
            row.update({f"mean_{j}": float(v) for j, v in enumerate(self.means[index])})
            row.update({f"var_{j}": float(v) for j, v in enumerate(self.vars[index])})
            rows.append(row)

        return pd.DataFrame(rows)


def log_density_diag(z, gaussian: GaussianDiag) -> float:
    z = np.atleast_1d(_values(z))
    if z.shape != gaussian.mean.shape:
        raise ContractViolation(f"z has shape {z.shape}, gaussian has {gaussian.mean.shape}")

    var = gaussian.var
    return float(-0.5 * np.sum(np.log(2.0 * math.pi * var) + (z - gaussian.mean) ** 2 / var))


def log_density_table(z: np.ndarray, gmm: LatentGmm) -> np.ndarray:
    """log p(z_n | cluster k) for every point and cluster, shape (N, K)."""

    means, variances = gmm.flat_means(), gmm.flat_vars()
    diff = z[:, None, :] - means[None, :, :]
    terms = LOG_2PI + np.log(variances)[None, :, :] + diff**2 / variances[None, :, :]
    return -0.5 * terms.sum(axis=-1)


def responsibilities(z_or_mu, gmm: LatentGmm, a) -> np.ndarray:
    """gamma = A * p(z | N) / sum(A * p(z | N)), evaluated in log-space.

    Accepts one point (J,) or a batch (N, J); returns arities or (N, *arities)."""

    z = _values(z_or_mu)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != gmm.latent_dim:
        raise ContractViolation(f"z has dim {z.shape[1]}, gmm has {gmm.latent_dim}")

    a = _values(a)
    if a.shape != gmm.arities:
        raise ContractViolation(f"joint tensor has shape {a.shape}, gmm has {gmm.arities}")

    with np.errstate(divide="ignore"):
        log_a = np.log(a.reshape(-1))

    log_joint = log_a[None, :] + log_density_table(z, gmm)
    gammas = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
    if not np.all(np.isfinite(gammas)):
        raise NumericalFault(
            "responsibilities are not finite",
            {
                "points": int(np.sum(~np.isfinite(gammas).all(axis=1))),
                "min_joint": float(a.min()),
                "min_var": float(gmm.vars.min()),
                "max_abs_z": float(np.abs(z).max()),
            },
        )

    gammas = gammas.reshape((z.shape[0],) + gmm.arities)
    return gammas[0] if single else gammas


def block_update(
    batch_mus,
    batch_vars,
    batch_gammas,
    floor: float = VARIANCE_FLOOR,
    previous: LatentGmm | None = None,
) -> LatentGmm:
    """Closed-form maximizer of the clustering term over cluster means and variances.

    Clusters with no mass keep their previous mean and take the global data variance."""

    mus, variances, gammas = _values(batch_mus), _values(batch_vars), _values(batch_gammas)
    if mus.shape[0] == 0:
        raise ContractViolation("block_update needs at least one data point")

    if not (mus.shape == variances.shape and gammas.shape[0] == mus.shape[0]):
        raise ContractViolation(
            f"batch shapes disagree: mus {mus.shape}, vars {variances.shape}, gammas {gammas.shape}"
        )

    arities = gammas.shape[1:]
    weights = gammas.reshape(mus.shape[0], -1)
    mass = weights.sum(axis=0)
    empty = mass < EMPTY_CLUSTER_MASS
    safe_mass = np.where(empty, 1.0, mass)[:, None]

    means = weights.T @ mus / safe_mass
    spread = (mus[:, None, :] - means[None, :, :]) ** 2 + variances[:, None, :]
    new_vars = np.einsum("nk,nkj->kj", weights, spread) / safe_mass

    if np.any(empty):
        fallback = previous.flat_means() if previous is not None else np.broadcast_to(
            mus.mean(axis=0), means.shape
        )
        means[empty] = fallback[empty]
        new_vars[empty] = global_variance(mus, variances)
        logger.debug("block_update: %d empty clusters", int(empty.sum()))

    return LatentGmm.from_flat(means, np.maximum(new_vars, floor), arities, floor)


def init_gmm(
    mus: np.ndarray,
    variances: np.ndarray,
    arities: Sequence[int],
    rng: np.random.Generator,
    floor: float = VARIANCE_FLOOR,
) -> LatentGmm:
    """Seeds cluster means at distinct embedded points with the global variance."""

    num_points, latent_dim = mus.shape
    num_clusters = int(np.prod(arities))
    picks = rng.choice(num_points, size=num_clusters, replace=num_points < num_clusters)
    means = mus[picks].copy()
    if num_points < num_clusters:
        means += rng.normal(0.0, GMM_INIT_JITTER_STD, size=means.shape)

    spread = np.maximum(global_variance(mus, variances), floor)
    return LatentGmm.from_flat(means, np.tile(spread, (num_clusters, 1)), arities, floor)


def fit_gmm(
    mus: np.ndarray,
    variances: np.ndarray,
    a,
    gmm: LatentGmm,
    rng: np.random.Generator,
    max_iters: int = GMM_FIT_MAX_ITERS,
    floor: float = VARIANCE_FLOOR,
) -> tuple[LatentGmm, int]:
    """Alternates responsibilities and block updates on fixed embeddings until
    the hard assignments stop changing."""

    labels = None
    for iteration in range(1, max_iters + 1):
        gammas = responsibilities(mus, gmm, a)
        new_labels = hard_assignments(gammas)
        if labels is not None and np.array_equal(labels, new_labels):
            return gmm, iteration

        labels = new_labels
        gmm = block_update(mus, variances, gammas, floor, previous=gmm)

        starved = np.bincount(labels, minlength=gmm.num_clusters) == 0
        if iteration == 1 and np.any(starved):
            means = gmm.flat_means().copy()
            means[starved] += rng.normal(0.0, GMM_INIT_JITTER_STD, size=means[starved].shape)
            gmm = LatentGmm.from_flat(means, gmm.flat_vars(), gmm.arities, gmm.floor)

    return gmm, max_iters
