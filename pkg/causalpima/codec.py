# Standard library
import math
import logging
from dataclasses import dataclass
from collections.abc import Sequence

# Third party
import numpy as np

# Local
try:
    from causalpima import tensor as T
    from causalpima.tensor import Tensor
    from causalpima.errors import ContractViolation
except ImportError:
    import tensor as T
    from tensor import Tensor
    from errors import ContractViolation

logger = logging.getLogger(__name__)

Gaussian = tuple[Tensor, Tensor]  # (mean, variance)


#########
# HELPERS
#########


ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}
EXPERT_INIT_VAR = 0.01


def logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ContractViolation(f"grid must be a vector of >= 2 points, got {grid.shape}")

    if np.any(np.diff(grid) < 0):
        raise ContractViolation("grid must be sorted ascending")

    if grid[0] < 0 or grid[-1] > 1:
        raise ContractViolation("grid must lie in [0, 1]")

    return grid


######
# MAIN
######


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]  # Input width first, output width last
    activation: str = "relu"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ContractViolation(f"MLP widths must be >= 2 positive sizes, got {self.widths}")

        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")


class Mlp:
    def __init__(self, spec: MlpSpec, rng: np.random.Generator, name: str = "mlp"):
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []

        last = len(spec.widths) - 2
        for layer, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            gain = 1.0 if layer == last else 2.0  # He init for hidden layers
            weight = rng.normal(0.0, math.sqrt(gain / fan_in), size=(fan_in, fan_out))
            self.weights.append(Tensor(weight, requires_grad=True, name=f"{name}.w{layer}"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b{layer}"))

    def params(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x: Tensor) -> Tensor:
        activation = ACTIVATIONS[self.spec.activation]
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            x = x @ weight + bias
            if layer < len(self.weights) - 1:
                x = activation(x)

        return x


@dataclass
class ModalityBatch:
    data: np.ndarray  # (N, *feature dims)
    present: np.ndarray | None = None  # (N,) availability mask

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.present is None:
            self.present = np.ones(self.data.shape[0], dtype=bool)

        self.present = np.asarray(self.present, dtype=bool)
        if self.present.shape != (self.data.shape[0],):
            raise ContractViolation(
                f"mask has shape {self.present.shape} for a batch of {self.data.shape[0]}"
            )

    def __len__(self) -> int:
        return self.data.shape[0]

    def flat(self) -> np.ndarray:
        return self.data.reshape(self.data.shape[0], -1)

    def take(self, indices: np.ndarray) -> "ModalityBatch":
        return ModalityBatch(self.data[indices], self.present[indices])


class GaussianEncoder:
    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int],
        latent_dim: int,
        rng: np.random.Generator,
        name: str = "encoder",
    ):
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.mlp = Mlp(MlpSpec((input_dim, *hidden, 2 * latent_dim)), rng, name)

    def params(self) -> list[Tensor]:
        return self.mlp.params()


class NeuralDecoder:
    """Gaussian decoder head. `per_cluster` keeps one network per cluster;
    `shared` uses a single network regardless of cluster."""

    def __init__(
        self,
        latent_dim: int,
        hidden: Sequence[int],
        output_dim: int,
        num_clusters: int,
        rng: np.random.Generator,
        mode: str = "shared",
        name: str = "decoder",
    ):
        if mode not in ("shared", "per_cluster"):
            raise ContractViolation(f"neural decoder mode must be shared or per_cluster, got {mode!r}")

        self.mode = mode
        self.latent_dim = latent_dim
        self.output_dim = output_dim
        copies = num_clusters if mode == "per_cluster" else 1
        spec = MlpSpec((latent_dim, *hidden, 2 * output_dim))
        self.mlps = [Mlp(spec, rng, f"{name}[{k}]") for k in range(copies)]

    def params(self) -> list[Tensor]:
        return [p for mlp in self.mlps for p in mlp.params()]


@dataclass
class ExpertCurveParams:
    breakpoint: float
    slope1: float
    slope2: float
    intercept: float

    def __post_init__(self):
        if not 0.0 < self.breakpoint < 1.0:
            raise ContractViolation(f"breakpoint must lie in (0, 1), got {self.breakpoint}")


class ExpertCurveDecoder:
    """Two-segment continuous piecewise-linear curve per cluster, with one
    reconstruction variance per cluster. The breakpoint is a sigmoid of an
    unconstrained parameter."""

    def __init__(self, grid: np.ndarray, num_clusters: int, name: str = "expert"):
        self.grid = check_grid(grid)
        self.num_clusters = num_clusters
        spread = np.linspace(0.2, 0.8, num_clusters) if num_clusters > 1 else np.array([0.5])
        self.breakpoint_raw = Tensor(logit(spread), requires_grad=True, name=f"{name}.breakpoint")
        self.slope1 = Tensor(np.ones(num_clusters), requires_grad=True, name=f"{name}.slope1")
        self.slope2 = Tensor(np.ones(num_clusters), requires_grad=True, name=f"{name}.slope2")
        self.intercept = Tensor(np.zeros(num_clusters), requires_grad=True, name=f"{name}.intercept")
        self.log_var = Tensor(
            np.full(num_clusters, math.log(EXPERT_INIT_VAR)), requires_grad=True, name=f"{name}.log_var"
        )

    @property
    def output_dim(self) -> int:
        return self.grid.size

    def params(self) -> list[Tensor]:
        return [self.breakpoint_raw, self.slope1, self.slope2, self.intercept, self.log_var]

    def breakpoints(self) -> Tensor:
        return T.sigmoid(self.breakpoint_raw)

    def curve_params(self) -> list[ExpertCurveParams]:
        breakpoints = self.breakpoints().data
        return [
            ExpertCurveParams(
                float(breakpoints[k]),
                float(self.slope1.data[k]),
                float(self.slope2.data[k]),
                float(self.intercept.data[k]),
            )
            for k in range(self.num_clusters)
        ]

    def set_curve_params(self, params: Sequence[ExpertCurveParams]):
        if len(params) != self.num_clusters:
            raise ContractViolation(f"{len(params)} curves for {self.num_clusters} clusters")

        self.breakpoint_raw.data = logit(np.array([p.breakpoint for p in params]))
        self.slope1.data = np.array([p.slope1 for p in params], dtype=np.float64)
        self.slope2.data = np.array([p.slope2 for p in params], dtype=np.float64)
        self.intercept.data = np.array([p.intercept for p in params], dtype=np.float64)


def encode(encoder: GaussianEncoder, batch: ModalityBatch) -> Gaussian:
    """[mu_m, var_m] = F_m(X_m); the variance head is a log-variance."""

    flat = batch.flat()
    if flat.shape[1] != encoder.input_dim:
        raise ContractViolation(f"encoder expects {encoder.input_dim} features, got {flat.shape[1]}")

    out = encoder.mlp(Tensor(flat))
    latent_dim = encoder.latent_dim
    return out[:, :latent_dim], T.exp(out[:, latent_dim:])


def fuse_poe(
    experts: Sequence[Gaussian], masks: Sequence[np.ndarray] | None = None
) -> Gaussian:
    """Product of Gaussian experts: precisions add, means are precision-weighted.
    Experts whose mask entry is 0 are left out for that sample."""

    if not experts:
        raise ContractViolation("fuse_poe needs at least one expert")

    num_samples = experts[0][0].shape[0]
    if masks is None:
        masks = [np.ones(num_samples) for _ in experts]

    if len(masks) != len(experts):
        raise ContractViolation(f"{len(masks)} masks for {len(experts)} experts")

    present = np.stack([np.asarray(m, dtype=np.float64) for m in masks])
    if np.any(present.sum(axis=0) == 0):
        missing = np.nonzero(present.sum(axis=0) == 0)[0].tolist()
        raise ContractViolation(f"samples {missing} have no modality to fuse")

    precision, weighted = None, None
    for (mu, var), mask in zip(experts, present):
        mask = mask[:, None]
        expert_precision = mask / var
        precision = expert_precision if precision is None else precision + expert_precision
        term = mu * expert_precision
        weighted = term if weighted is None else weighted + term

    fused_var = 1.0 / precision
    return weighted * fused_var, fused_var


def sample_latent(
    mu: Tensor, var: Tensor, rng: np.random.Generator | None = None, eps: np.ndarray | None = None
) -> Tensor:
    """z = mu + eps * sqrt(var); eps is drawn outside the graph."""

    if eps is None:
        eps = rng.standard_normal(mu.shape)

    return mu + eps * T.sqrt(var)


def decode_neural(decoder: NeuralDecoder, z: Tensor) -> Gaussian:
    """Stacked reconstruction Gaussians, shape (S, N, D) with S = 1 (shared)
    or the number of clusters (per_cluster)."""

    if z.ndim != 2 or z.shape[1] != decoder.latent_dim:
        raise ContractViolation(f"decoder expects (N, {decoder.latent_dim}) latents, got {z.shape}")

    means, variances = [], []
    dim = decoder.output_dim
    for mlp in decoder.mlps:
        out = mlp(z)
        means.append(out[:, :dim])
        variances.append(T.exp(out[:, dim:]))

    return T.stack(means), T.stack(variances)


def decode_expert_curve(
    breakpoint: Tensor,
    slope1: Tensor,
    slope2: Tensor,
    intercept: Tensor,
    grid: np.ndarray,
) -> Tensor:
    """Curves of shape (K, D): intercept + slope1 * s up to the breakpoint, then
    continuing from that endpoint with slope2."""

    grid = check_grid(grid)[None, :]
    column = lambda t: T.reshape(t, (-1, 1))
    b = column(breakpoint)
    before = b - T.relu(b - grid)  # min(s, b)
    after = T.relu(grid - b)  # max(s - b, 0)
    return column(intercept) + column(slope1) * before + column(slope2) * after


def decode_expert(decoder: ExpertCurveDecoder) -> Gaussian:
    """Expert reconstruction Gaussians, shape (K, 1, D)."""

    curves = decode_expert_curve(
        decoder.breakpoints(), decoder.slope1, decoder.slope2, decoder.intercept, decoder.grid
    )
    variances = T.broadcast_to(T.reshape(T.exp(decoder.log_var), (-1, 1)), curves.shape)
    return T.expand_dims(curves, 1), T.expand_dims(variances, 1)
