# Standard library
import io
import json
import math
import logging
from pathlib import Path
from dataclasses import dataclass, field, replace
from collections.abc import Callable, Sequence

# Third party
import numpy as np

# Local
try:
    from causalpima import tensor as T
    from causalpima.tensor import GradTape, Tensor, backward
    from causalpima.model import CausalPima, PARAMETER_GROUPS, CAUSAL_GROUPS
    from causalpima.config import ExperimentConfig, BetaSchedule
    from causalpima.datagen import Dataset, split_indices
    from causalpima.dag import hard_adjacency, anneal_beta, perturb_scores, HardDag
    from causalpima.gmm import (
        LatentGmm,
        init_gmm,
        fit_gmm,
        block_update,
        responsibilities,
        occupancy,
    )
    from causalpima.elbo import dataset_loss, reconstruction_term
    from causalpima.optim import Optimizer, make_optimizer, clip_by_global_norm
    from causalpima.errors import (
        AcyclicityError,
        ConfigurationError,
        ContractViolation,
        NumericalFault,
        TrainingFault,
    )
    from causalpima.constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
except ImportError:
    import tensor as T
    from tensor import GradTape, Tensor, backward
    from model import CausalPima, PARAMETER_GROUPS, CAUSAL_GROUPS
    from config import ExperimentConfig, BetaSchedule
    from datagen import Dataset, split_indices
    from dag import hard_adjacency, anneal_beta, perturb_scores, HardDag
    from gmm import LatentGmm, init_gmm, fit_gmm, block_update, responsibilities, occupancy
    from elbo import dataset_loss, reconstruction_term
    from optim import Optimizer, make_optimizer, clip_by_global_norm
    from errors import (
        AcyclicityError,
        ConfigurationError,
        ContractViolation,
        NumericalFault,
        TrainingFault,
    )
    from constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION

logger = logging.getLogger(__name__)

CODEC_GROUPS = ("encoder", "decoder", "expert")
EpochCallback = Callable[["TrainState", dict], None]


#########
# HELPERS
#########


def steps_per_epoch(num_samples: int, batch_size: int) -> int:
    return math.ceil(num_samples / batch_size)


def resolved_schedule(config: ExperimentConfig, num_samples: int) -> BetaSchedule:
    """The beta schedule with `total_steps` defaulting to every optimizer step."""

    schedule = config.train.beta
    if schedule.total_steps is not None:
        return schedule

    total = config.train.epochs * steps_per_epoch(num_samples, config.train.batch_size)
    return replace(schedule, total_steps=total)


def minibatches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[start : start + batch_size] for start in range(0, len(order), batch_size)]


def flip_rng(state: "TrainState") -> np.random.Generator | None:
    return state.rng if state.config.dataset.flip else None


def group_norms(model: CausalPima) -> dict[str, float]:
    return {
        group: math.sqrt(sum(float(np.sum(p.data**2)) for p in params))
        for group, params in model.parameter_groups().items()
    }


def _rng_state_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _restore_rng(state_json: str) -> np.random.Generator:
    state = json.loads(state_json)
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


######
# MAIN
######


@dataclass
class TrainState:
    model: CausalPima
    optimizer: Optimizer
    rng: np.random.Generator
    gmm: LatentGmm | None = None
    epoch: int = 0
    step: int = 0
    beta: float = 1.0
    pretrained: bool = False
    pretrain_losses: list[float] = field(default_factory=list)

    @property
    def config(self) -> ExperimentConfig:
        return self.model.config


def init_state(config: ExperimentConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    model = CausalPima(config, rng)
    optimizer = make_optimizer(config.train.optimizer, config.train.learning_rate)
    return TrainState(model, optimizer, rng, beta=config.train.beta.beta_init)


def gradient_step(
    state: TrainState,
    loss_fn: Callable[[], Tensor],
    groups: Sequence[str] = PARAMETER_GROUPS,
) -> float:
    """One clipped optimizer update of the named parameter groups. Numerical
    faults become `TrainingFault`s carrying parameter norms."""

    params = state.model.parameters(groups)
    try:
        with GradTape() as tape:
            loss = loss_fn()

        grads = backward(loss, tape)
    except NumericalFault as fault:
        diagnostics = dict(fault.diagnostics)
        diagnostics.update(epoch=state.epoch, step=state.step, norms=group_norms(state.model))
        raise TrainingFault(f"training diverged: {fault.args[0]}", diagnostics) from fault

    named = {name: grads[param] for name, param in params.items()}
    named, norm = clip_by_global_norm(named, state.config.train.grad_clip)
    if norm > state.config.train.grad_clip:
        logger.debug("step %d: gradient norm %.3g clipped", state.step, norm)

    state.optimizer.step(params, named)
    return loss.item()


def warmup_loss(model: CausalPima, batch, rng: np.random.Generator, mode: str) -> Tensor:
    """Reconstruction-only loss, plus a unit-normal KL term in `vae` mode. Both
    are on the doubled scale of the ELBO with constants dropped."""

    mu, var = model.fuse(batch)
    z = mu + rng.standard_normal(mu.shape) * T.sqrt(var)
    num_samples = mu.shape[0]
    uniform = np.full((num_samples,) + model.arities, 1.0 / int(np.prod(model.arities)))

    total = None
    for name, recon in model.reconstruct(z).items():
        term = reconstruction_term(batch[name].data, recon, uniform, batch[name].present)
        total = term if total is None else total + term

    loss = -T.reduce("mean", total)
    if mode == "vae":
        kl = T.reduce("sum", var + T.square(mu) - T.log(var), [1])
        loss = loss + T.reduce("mean", kl)

    return loss


def fit_prior(state: TrainState, dataset: Dataset) -> int:
    """Seeds the GMM on the current embeddings if needed, then alternates
    responsibilities and block updates until assignments settle."""

    config = state.config.train
    mus, variances = state.model.embed(dataset.batch())
    _, joint = state.model.causal_joint(state.beta)
    if state.gmm is None:
        state.gmm = init_gmm(mus, variances, state.model.arities, state.rng, config.variance_floor)

    state.gmm, iterations = fit_gmm(
        mus, variances, joint.data, state.gmm, state.rng, config.gmm_fit_iters, config.variance_floor
    )
    return iterations


def pretrain(state: TrainState, dataset: Dataset) -> TrainState:
    config = state.config.train
    iterations = fit_prior(state, dataset)
    logger.info("Initial GMM fit settled after %d iterations", iterations)

    if config.pretrain_mode != "none" and config.pretrain_epochs > 0:
        for epoch in range(config.pretrain_epochs):
            order = state.rng.permutation(len(dataset))
            weighted = 0.0
            for indices in minibatches(order, config.batch_size):
                batch = dataset.batch(indices, flip_rng(state))
                loss = gradient_step(
                    state,
                    lambda: warmup_loss(state.model, batch, state.rng, config.pretrain_mode),
                    CODEC_GROUPS,
                )
                weighted += loss * len(indices)

            state.pretrain_losses.append(weighted / len(dataset))
            logger.info("Pretrain epoch %d: loss %.4f", epoch + 1, state.pretrain_losses[-1])

        iterations = fit_prior(state, dataset)
        logger.info("GMM refit after warm-up settled after %d iterations", iterations)

    state.pretrained = True
    return state


def train_epoch(state: TrainState, dataset: Dataset) -> dict:
    """One pass of batch gradient steps followed by the GMM block updates and
    extra gradient steps on the causal parameters. Returns the epoch record."""

    if not state.pretrained:
        raise ContractViolation("train_epoch needs a pretrained (or explicitly skipped) state")

    config = state.config.train
    model = state.model
    schedule = resolved_schedule(state.config, len(dataset))

    sums: dict[str, float] = {}
    loss_sum = 0.0
    last_batch, last_eps = None, None
    for indices in minibatches(state.rng.permutation(len(dataset)), config.batch_size):
        if config.xi_noise_std > 0 and state.step % config.xi_noise_every == 0:
            model.dag.xi.data = perturb_scores(model.dag, config.xi_noise_std, state.rng).xi.data

        state.beta = anneal_beta(schedule, state.step)
        batch = dataset.batch(indices, flip_rng(state))
        eps = state.rng.standard_normal((len(indices), model.latent_dim))
        passes = []

        def loss_fn():
            forward = model.forward(batch, state.gmm, state.beta, eps=eps)
            passes.append(forward)
            return dataset_loss(forward.breakdown, model.dag, config.lambda_b)

        loss_sum += gradient_step(state, loss_fn) * len(indices)
        for key, value in passes[-1].breakdown.means().items():
            sums[key] = sums.get(key, 0.0) + value * len(indices)

        last_batch, last_eps = batch, eps
        state.step += 1

    full = dataset.batch()
    for _ in range(config.gmm_iterations):
        mus, variances = model.embed(full)
        _, joint = model.causal_joint(state.beta)
        gammas = responsibilities(mus, state.gmm, joint.data)
        state.gmm = block_update(mus, variances, gammas, config.variance_floor, previous=state.gmm)

        for _ in range(config.extra_a_steps if last_batch is not None else 0):
            gradient_step(
                state,
                lambda: dataset_loss(
                    model.forward(last_batch, state.gmm, state.beta, eps=last_eps).breakdown,
                    model.dag,
                    config.lambda_b,
                ),
                CAUSAL_GROUPS,
            )

    mus, _ = model.embed(full)
    _, joint = model.causal_joint(state.beta)
    gammas = responsibilities(mus, state.gmm, joint.data)
    hard = hard_adjacency(model.dag, config.zero_tol)
    if not hard.is_acyclic():
        raise AcyclicityError(f"epoch {state.epoch + 1}: extracted graph has a cycle")

    state.epoch += 1
    record = {
        "epoch": state.epoch,
        "step": state.step,
        "loss": loss_sum / len(dataset),
        "beta": state.beta,
        "elbo": {key: value / len(dataset) for key, value in sums.items()},
        "occupancy": occupancy(gammas).tolist(),
        "edges": hard.edges(),
        "topo_order": list(hard.topo_order),
    }
    logger.info(
        "Epoch %d: loss %.4f, beta %.4g, %d occupied clusters, edges %s",
        state.epoch,
        record["loss"],
        state.beta,
        int(np.count_nonzero(record["occupancy"])),
        record["edges"],
    )
    return record


def heldout_loss(state: TrainState, dataset: Dataset) -> float:
    """Mean negative ELBO on samples the optimizer never sees, with a fixed
    draw of latent noise so epochs are comparable."""

    if len(dataset) == 0:
        raise ContractViolation("heldout_loss needs at least one sample")

    model = state.model
    noise = np.random.default_rng([state.config.seed, 3])
    eps = noise.standard_normal((len(dataset), model.latent_dim))
    forward = model.forward(dataset.batch(), state.gmm, state.beta, eps=eps)
    return dataset_loss(forward.breakdown, model.dag, state.config.train.lambda_b).item()


def split_dataset(dataset: Dataset, config: ExperimentConfig) -> dict[str, Dataset]:
    if tuple(config.dataset.split) == (1.0, 0.0, 0.0):
        return {"train": dataset}

    parts = split_indices(len(dataset), config.dataset.split, config.seed)
    return {name: dataset.subset(indices) for name, indices in parts.items() if len(indices)}


def fit(
    dataset: Dataset,
    config: ExperimentConfig,
    state: TrainState | None = None,
    on_epoch: EpochCallback | None = None,
) -> tuple[TrainState, list[dict]]:
    """Pretrains (unless resuming) and runs the remaining epochs on the training
    split, scoring the validation split after every epoch when there is one."""

    dataset.check_modalities(config.modalities())
    parts = split_dataset(dataset, config)
    state = state or init_state(config)
    if not state.pretrained:
        pretrain(state, parts["train"])

    history = []
    while state.epoch < config.train.epochs:
        record = train_epoch(state, parts["train"])
        if "val" in parts:
            record["val_loss"] = heldout_loss(state, parts["val"])

        history.append(record)
        if on_epoch is not None:
            on_epoch(state, record)

    return state, history


def hard_dag(state: TrainState) -> HardDag:
    return hard_adjacency(state.model.dag, state.config.train.zero_tol)


def save_checkpoint(state: TrainState, path: str | Path):
    """An .npz archive of every parameter, the GMM and the optimizer moments,
    with a JSON header holding counters, shapes and the generator state."""

    params = state.model.parameters()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_digest": state.config.digest(),
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "beta": state.beta,
        "pretrained": state.pretrained,
        "pretrain_losses": state.pretrain_losses,
        "optimizer": state.optimizer.kind,
        "parameters": {name: list(p.shape) for name, p in params.items()},
        "rng": _rng_state_json(state.rng),
    }

    arrays = {f"param/{name}": p.data for name, p in params.items()}
    arrays.update({f"optim/{key}": value for key, value in state.optimizer.state_dict().items()})
    if state.gmm is not None:
        arrays["gmm/means"] = state.gmm.means
        arrays["gmm/vars"] = state.gmm.vars

    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf8"), dtype=np.uint8)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    path.write_bytes(buffer.getvalue())


def load_checkpoint(path: str | Path, config: ExperimentConfig) -> TrainState:
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as error:
        raise ContractViolation(f"cannot read checkpoint {path}: {error}")

    with archive:
        header = json.loads(archive["header"].tobytes().decode("utf8"))
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise ContractViolation(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")

        if header["config_digest"] != config.digest():
            logger.warning("Checkpoint %s was written under a different config", path)

        if header["optimizer"] != config.train.optimizer:
            raise ConfigurationError(
                f"checkpoint optimizer {header['optimizer']!r} != config {config.train.optimizer!r}"
            )

        state = init_state(config)
        params = state.model.parameters()
        if {n: list(p.shape) for n, p in params.items()} != header["parameters"]:
            raise ConfigurationError(f"{path}: parameter shapes do not match the config")

        for name, param in params.items():
            param.data = np.array(archive[f"param/{name}"], dtype=np.float64)

        state.optimizer.load_state_dict(
            {key[len("optim/") :]: archive[key] for key in archive.files if key.startswith("optim/")}
        )
        if "gmm/means" in archive.files:
            state.gmm = LatentGmm(
                np.array(archive["gmm/means"]),
                np.array(archive["gmm/vars"]),
                config.train.variance_floor,
            )

    state.rng = _restore_rng(header["rng"])
    state.epoch, state.step = header["epoch"], header["step"]
    state.beta = header["beta"]
    state.model.dag.beta = header["beta"]
    state.pretrained = header["pretrained"]
    state.pretrain_losses = list(header["pretrain_losses"])
    return state
