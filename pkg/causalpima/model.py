# Standard library
import logging
from dataclasses import dataclass
from collections.abc import Mapping

# Third party
import numpy as np

# Local
try:
    from causalpima.tensor import Tensor
    from causalpima.config import ExperimentConfig, ModalitySpec
    from causalpima.dag import DagParams, EdgeScores, edge_indicator
    from causalpima.joint import CausalTables, joint_tensor
    from causalpima.gmm import LatentGmm, responsibilities
    from causalpima.elbo import ElboBreakdown, single_sample_elbo
    from causalpima.errors import ContractViolation
    from causalpima.codec import (
        Gaussian,
        ModalityBatch,
        GaussianEncoder,
        NeuralDecoder,
        ExpertCurveDecoder,
        encode,
        fuse_poe,
        sample_latent,
        decode_neural,
        decode_expert,
    )
except ImportError:
    from tensor import Tensor
    from config import ExperimentConfig, ModalitySpec
    from dag import DagParams, EdgeScores, edge_indicator
    from joint import CausalTables, joint_tensor
    from gmm import LatentGmm, responsibilities
    from elbo import ElboBreakdown, single_sample_elbo
    from errors import ContractViolation
    from codec import (
        Gaussian,
        ModalityBatch,
        GaussianEncoder,
        NeuralDecoder,
        ExpertCurveDecoder,
        encode,
        fuse_poe,
        sample_latent,
        decode_neural,
        decode_expert,
    )

logger = logging.getLogger(__name__)

Batch = Mapping[str, ModalityBatch]
Decoder = NeuralDecoder | ExpertCurveDecoder

PARAMETER_GROUPS = ("encoder", "decoder", "expert", "xi", "b_raw", "w_logits")
CAUSAL_GROUPS = ("xi", "b_raw", "w_logits")


#########
# HELPERS
#########


def curve_grid(length: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, length)


def build_decoder(
    spec: ModalitySpec, config: ExperimentConfig, rng: np.random.Generator
) -> Decoder:
    model = config.model
    if spec.decoder == "expert":
        return ExpertCurveDecoder(curve_grid(spec.shape[0]), model.num_clusters, f"expert.{spec.name}")

    return NeuralDecoder(
        model.latent_dim,
        model.decoder_widths,
        spec.size,
        model.num_clusters,
        rng,
        mode=spec.decoder,
        name=f"decoder.{spec.name}",
    )


def decode(decoder: Decoder, z: Tensor) -> Gaussian:
    if isinstance(decoder, ExpertCurveDecoder):
        return decode_expert(decoder)

    return decode_neural(decoder, z)


######
# MAIN
######


@dataclass
class ForwardPass:
    breakdown: ElboBreakdown
    fused: Gaussian
    z: Tensor
    scores: EdgeScores
    joint: Tensor
    gammas: np.ndarray  # (N, *arities), held constant in the graph


class CausalPima:
    """Multimodal VAE whose latent prior is a GMM with one component per joint
    outcome of the categorical DAG nodes, weighted by A = p(N).

    Cluster means and variances live in `gmm` and are only ever set by block
    updates; every other parameter is a leaf tensor reachable through
    `parameter_groups()`."""

    def __init__(self, config: ExperimentConfig, rng: np.random.Generator):
        model = config.model
        self.config = config
        self.modalities = {spec.name: spec for spec in config.modalities()}
        self.encoders = {
            name: GaussianEncoder(
                spec.size, model.encoder_widths, model.latent_dim, rng, f"encoder.{name}"
            )
            for name, spec in self.modalities.items()
        }
        self.decoders = {
            name: build_decoder(spec, config, rng) for name, spec in self.modalities.items()
        }
        self.dag = DagParams.initialize(len(model.arities), rng, beta=model.init_beta)
        self.tables = CausalTables.initialize(model.arities, rng)
        self.gmm: LatentGmm | None = None

    @property
    def arities(self) -> tuple[int, ...]:
        return self.tables.arities

    @property
    def latent_dim(self) -> int:
        return self.config.model.latent_dim

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        groups = {group: [] for group in PARAMETER_GROUPS}
        for encoder in self.encoders.values():
            groups["encoder"].extend(encoder.params())

        for decoder in self.decoders.values():
            key = "expert" if isinstance(decoder, ExpertCurveDecoder) else "decoder"
            groups[key].extend(decoder.params())

        groups["xi"].append(self.dag.xi)
        groups["b_raw"].append(self.dag.b_raw)
        groups["w_logits"].extend(self.tables.w_logits)
        return groups

    def parameters(self, groups=PARAMETER_GROUPS) -> dict[str, Tensor]:
        """Leaf tensors by unique name, in a stable order."""

        named = {}
        for group, params in self.parameter_groups().items():
            if group not in groups:
                continue

            for param in params:
                if param.name in named:
                    raise ContractViolation(f"duplicate parameter name {param.name!r}")

                named[param.name] = param

        return named

    def _check_batch(self, batch: Batch):
        missing = set(self.modalities) - set(batch)
        if missing:
            raise ContractViolation(f"batch lacks modalities {sorted(missing)}")

        sizes = {len(b) for b in batch.values()}
        if len(sizes) != 1:
            raise ContractViolation(f"modalities disagree on batch size: {sorted(sizes)}")

    def fuse(self, batch: Batch) -> Gaussian:
        self._check_batch(batch)
        names = list(self.modalities)
        experts = [encode(self.encoders[name], batch[name]) for name in names]
        masks = [batch[name].present for name in names]
        return fuse_poe(experts, masks)

    def reconstruct(self, z: Tensor) -> dict[str, Gaussian]:
        return {name: decode(decoder, z) for name, decoder in self.decoders.items()}

    def causal_joint(self, beta: float | None = None) -> tuple[EdgeScores, Tensor]:
        if beta is not None:
            self.dag.beta = beta

        scores = edge_indicator(self.dag)
        return scores, joint_tensor(self.tables, scores, self.dag.order())

    def forward(
        self,
        batch: Batch,
        gmm: LatentGmm,
        beta: float | None = None,
        rng: np.random.Generator | None = None,
        eps: np.ndarray | None = None,
    ) -> ForwardPass:
        """encode -> PoE -> sample -> decode -> E, A, gamma -> ELBO."""

        if gmm.arities != self.arities:
            raise ContractViolation(f"gmm arities {gmm.arities} differ from model {self.arities}")

        mu, var = self.fuse(batch)
        z = sample_latent(mu, var, rng, eps)
        recon = self.reconstruct(z)
        scores, joint = self.causal_joint(beta)
        gammas = responsibilities(z.data, gmm, joint.data)

        x = {name: batch[name].data for name in self.modalities}
        present = {name: batch[name].present for name in self.modalities}
        breakdown = single_sample_elbo(x, (mu, var), recon, gmm, joint, gammas, present)
        return ForwardPass(breakdown, (mu, var), z, scores, joint, gammas)

    def embed(self, batch: Batch, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
        """Fused posterior means and variances, off the gradient tape."""

        size = len(next(iter(batch.values())))
        mus, variances = [], []
        for start in range(0, size, chunk):
            indices = np.arange(start, min(start + chunk, size))
            mu, var = self.fuse({name: b.take(indices) for name, b in batch.items()})
            mus.append(mu.data)
            variances.append(var.data)

        if not mus:
            return np.zeros((0, self.latent_dim)), np.zeros((0, self.latent_dim))

        return np.concatenate(mus), np.concatenate(variances)

    def decoded_means(self, gmm: LatentGmm) -> dict[str, np.ndarray]:
        """Reconstruction mean of every cluster center, shape (K, *modality shape).

        Per-cluster decoders decode each center with that cluster's own copy."""

        centers = Tensor(gmm.flat_means())
        outputs = {}
        for name, decoder in self.decoders.items():
            means = decode(decoder, centers)[0].data
            shape = self.modalities[name].shape
            if isinstance(decoder, ExpertCurveDecoder):
                outputs[name] = means[:, 0].reshape((-1,) + shape)
            elif decoder.mode == "per_cluster":
                clusters = np.arange(gmm.num_clusters)
                outputs[name] = means[clusters, clusters].reshape((-1,) + shape)
            else:
                outputs[name] = means[0].reshape((-1,) + shape)

        return outputs
