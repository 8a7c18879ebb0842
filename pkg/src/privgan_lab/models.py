"""Training loops and inference for the baseline GAN and the multi-pair
privacy-regularized GAN (privGAN).

The privGAN schedule: the privacy discriminator D_p is pre-trained for
``dp_init_epochs`` epochs on the real partitions, then frozen for the first
``co_train_delay`` main epochs while the generator/discriminator pairs train;
after the delay it co-trains on fakes labeled with their true generator
index. Generators always carry the privacy term: fool their own pair
discriminator plus ``privacy_weight`` times a cross-entropy pushing D_p
toward a random wrong generator index (or, in "direct" mode, minimizing
log D_p^i of the true index).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as datamod
from .numkit import (
    AdamState,
    ContractError,
    MlpModel,
    Rng,
    ShapeError,
    adam_step,
    as_matrix,
    backward,
    bce_loss,
    categorical_ce_loss,
    forward,
    sample_noise,
)

LOSS_CEILING = 1e6
CHECKPOINT_VERSION = 1


class DivergedTrainingError(RuntimeError):
    """Training produced a non-finite or runaway loss."""


# ---------------------------------------------------------------------------
# Architectures and configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GanArch:
    """Dense generator/discriminator family: leaky-ReLU hiddens, tanh
    generator output, sigmoid pair-discriminator head, softmax privacy head."""

    data_dim: int
    noise_dim: int = 100
    gen_hidden: tuple[int, ...] = (128, 128)
    disc_hidden: tuple[int, ...] = (128, 64)

    def build_generator(self, rng: Rng) -> MlpModel:
        dims = [self.noise_dim, *self.gen_hidden, self.data_dim]
        acts = ["leaky_relu"] * len(self.gen_hidden) + ["tanh"]
        return MlpModel.init(dims, acts, rng)

    def build_discriminator(self, rng: Rng) -> MlpModel:
        dims = [self.data_dim, *self.disc_hidden, 1]
        acts = ["leaky_relu"] * len(self.disc_hidden) + ["sigmoid"]
        return MlpModel.init(dims, acts, rng)

    def build_privacy_disc(self, rng: Rng, n_pairs: int) -> MlpModel:
        dims = [self.data_dim, *self.disc_hidden, n_pairs]
        acts = ["leaky_relu"] * len(self.disc_hidden) + ["softmax"]
        return MlpModel.init(dims, acts, rng)


@dataclass(frozen=True)
class GanConfig:
    epochs: int
    batch_size: int = 256
    lr: float = 2e-4
    beta1: float = 0.5
    seed: int = 0
    saturating_gen_loss: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be ≥ 0 and batch_size ≥ 1")


@dataclass(frozen=True)
class PrivGanConfig(GanConfig):
    n_pairs: int = 2
    privacy_weight: float = 1.0
    dp_init_epochs: int = 50
    co_train_delay: int = 100
    privacy_mode: str = "flip"  # "flip": random wrong-index targets; "direct": minimize log D_p^i

    def __post_init__(self):
        super().__post_init__()
        if self.n_pairs < 2:
            raise ContractError(f"need at least 2 generator/discriminator pairs, got {self.n_pairs}")
        if self.privacy_weight < 0:
            raise ContractError("privacy weight must be non-negative")
        if self.dp_init_epochs < 0 or self.co_train_delay < 0:
            raise ContractError("schedule epochs must be non-negative")
        if self.privacy_mode not in ("flip", "direct"):
            raise ContractError(f"unknown privacy_mode {self.privacy_mode!r}")


@dataclass
class TrainTrace:
    """Per-epoch losses. Inner lists hold one value per pair (length 1 for a
    plain GAN). Wall times are carried in memory and in the run manifest but
    never serialized into checkpoints, which must be byte-stable."""

    gen_losses: list[list[float]] = field(default_factory=list)
    disc_losses: list[list[float]] = field(default_factory=list)
    dp_losses: list[float] = field(default_factory=list)
    dp_updates: list[int] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)

    def record(self, gen, disc, dp_loss, dp_updates, wall):
        self.gen_losses.append([float(v) for v in gen])
        self.disc_losses.append([float(v) for v in disc])
        self.dp_losses.append(float(dp_loss))
        self.dp_updates.append(int(dp_updates))
        self.wall_times.append(float(wall))

    def epochs(self) -> int:
        return len(self.gen_losses)


@dataclass
class GanModel:
    generator: MlpModel
    discriminator: MlpModel

    def __post_init__(self):
        if self.generator.output_dim != self.discriminator.input_dim:
            raise ShapeError("generator output dim != discriminator input dim")
        if self.discriminator.output_dim != 1:
            raise ShapeError("pair discriminator must have a single output")


@dataclass
class PrivGanModel:
    generators: list[MlpModel]
    discriminators: list[MlpModel]
    privacy_disc: MlpModel
    config: PrivGanConfig

    def __post_init__(self):
        n = len(self.generators)
        if n != len(self.discriminators):
            raise ShapeError(f"{n} generators vs {len(self.discriminators)} discriminators")
        dims0 = self.generators[0].layer_dims
        if any(g.layer_dims != dims0 for g in self.generators):
            raise ShapeError("generator shapes differ across pairs")
        ddims0 = self.discriminators[0].layer_dims
        if any(d.layer_dims != ddims0 for d in self.discriminators):
            raise ShapeError("discriminator shapes differ across pairs")
        if self.privacy_disc.output_dim != n:
            raise ShapeError(
                f"privacy discriminator has {self.privacy_disc.output_dim} outputs for {n} pairs"
            )

    @property
    def n_pairs(self) -> int:
        return len(self.generators)


# ---------------------------------------------------------------------------
# Shared step helpers
# ---------------------------------------------------------------------------


def _check_loss(value: float, epoch: int, component: str):
    if not math.isfinite(value) or abs(value) > LOSS_CEILING:
        raise DivergedTrainingError(
            f"{component} loss diverged at epoch {epoch}: {value}"
        )


def _disc_step(disc: MlpModel, state: AdamState, real: np.ndarray, fake: np.ndarray) -> float:
    """One discriminator update on a real(→1)/fake(→0) batch."""
    x = np.vstack([real, fake])
    y = np.vstack([np.ones((real.shape[0], 1)), np.zeros((fake.shape[0], 1))])
    out, cache = forward(disc, x)
    loss, grad = bce_loss(out, y)
    res = backward(disc, cache, grad)
    adam_step(disc.params(), res.weight_grads + res.bias_grads, state)
    return loss


def _classifier_step(model: MlpModel, state: AdamState, x: np.ndarray, y: np.ndarray) -> float:
    """One softmax-head update toward integer class targets."""
    out, cache = forward(model, x)
    loss, grad = categorical_ce_loss(out, y)
    res = backward(model, cache, grad)
    adam_step(model.params(), res.weight_grads + res.bias_grads, state)
    return loss


def _adversarial_input_grad(disc: MlpModel, fake: np.ndarray, saturating: bool) -> tuple[float, np.ndarray]:
    """Generator-side loss and dL/d(fake) through the pair discriminator."""
    out, cache = forward(disc, fake)
    if saturating:
        # minimize log(1 − D(G(z)))
        loss = float(np.log(1.0 - out).mean())
        grad = -1.0 / (1.0 - out) / out.size
    else:
        # non-saturating: minimize −log D(G(z))
        loss, grad = bce_loss(out, np.ones_like(out))
    return loss, backward(disc, cache, grad).input_grad


def _epoch_batches(n: int, batch_size: int, rng: Rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# ---------------------------------------------------------------------------
# Baseline GAN
# ---------------------------------------------------------------------------


def train_gan(train_features, arch: GanArch, config: GanConfig) -> tuple[GanModel, TrainTrace]:
    """Alternating training: one discriminator epoch then one generator epoch
    per outer epoch, deterministic in (data, arch, config)."""
    x = as_matrix(train_features)
    if x.shape[0] == 0:
        raise ContractError("training set is empty")
    if x.shape[1] != arch.data_dim:
        raise ShapeError(f"data dim {x.shape[1]} != arch data dim {arch.data_dim}")

    root = Rng(config.seed)
    gen = arch.build_generator(root.substream("init/generator"))
    disc = arch.build_discriminator(root.substream("init/discriminator"))
    g_state = AdamState.for_params(gen.params(), config.lr, config.beta1)
    d_state = AdamState.for_params(disc.params(), config.lr, config.beta1)
    train_rng = root.substream("train")

    trace = TrainTrace()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        d_losses = []
        for idx in _epoch_batches(x.shape[0], config.batch_size, train_rng):
            z = sample_noise(train_rng, idx.size, arch.noise_dim)
            fake, _ = forward(gen, z)
            d_losses.append(_disc_step(disc, d_state, x[idx], fake))
        g_losses = []
        for idx in _epoch_batches(x.shape[0], config.batch_size, train_rng):
            z = sample_noise(train_rng, idx.size, arch.noise_dim)
            fake, cache = forward(gen, z)
            loss, input_grad = _adversarial_input_grad(disc, fake, config.saturating_gen_loss)
            res = backward(gen, cache, input_grad)
            adam_step(gen.params(), res.weight_grads + res.bias_grads, g_state)
            g_losses.append(loss)
        d_mean, g_mean = float(np.mean(d_losses)), float(np.mean(g_losses))
        _check_loss(d_mean, epoch, "discriminator")
        _check_loss(g_mean, epoch, "generator")
        trace.record([g_mean], [d_mean], 0.0, 0, time.perf_counter() - t0)
    return GanModel(gen, disc), trace


# ---------------------------------------------------------------------------
# privGAN
# ---------------------------------------------------------------------------


def train_privgan(train_features, arch: GanArch, config: PrivGanConfig,
                  parts: datamod.Partition | None = None) -> tuple[PrivGanModel, TrainTrace]:
    """Multi-pair training with the built-in privacy adversary.

    ``parts`` may be a precomputed equal partition over the rows of
    ``train_features``; when omitted the rows are partitioned here with the
    run seed.
    """
    x = as_matrix(train_features)
    if x.shape[1] != arch.data_dim:
        raise ShapeError(f"data dim {x.shape[1]} != arch data dim {arch.data_dim}")
    if config.privacy_weight <= 0:
        raise ContractError("training requires a positive privacy weight")
    n = config.n_pairs
    if parts is None:
        parts = datamod.partition(np.arange(x.shape[0]), n, config.seed,
                                  batch_floor=min(config.batch_size, x.shape[0] // n))
    if parts.n_parts != n:
        raise ContractError(f"partition has {parts.n_parts} parts for n_pairs={n}")
    part_rows = [x[p] for p in parts.parts]
    part_size = part_rows[0].shape[0]

    root = Rng(config.seed)
    gens = [arch.build_generator(root.substream(f"init/generator/{j}")) for j in range(n)]
    discs = [arch.build_discriminator(root.substream(f"init/discriminator/{j}")) for j in range(n)]
    dp = arch.build_privacy_disc(root.substream("init/privacy"), n)
    g_states = [AdamState.for_params(g.params(), config.lr, config.beta1) for g in gens]
    d_states = [AdamState.for_params(d.params(), config.lr, config.beta1) for d in discs]
    dp_state = AdamState.for_params(dp.params(), config.lr, config.beta1)

    # D_p warm start: learn the real partitions for dp_init_epochs
    pre_rng = root.substream("pretrain")
    all_real = np.vstack(part_rows)
    part_labels = np.repeat(np.arange(n), part_size)
    for _ in range(config.dp_init_epochs):
        for idx in _epoch_batches(all_real.shape[0], config.batch_size, pre_rng):
            _classifier_step(dp, dp_state, all_real[idx], part_labels[idx])

    train_rng = root.substream("train")
    trace = TrainTrace()
    n_batches = math.ceil(part_size / config.batch_size)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        d_sums = np.zeros(n)
        g_sums = np.zeros(n)
        dp_sum, dp_count = 0.0, 0
        perms = [train_rng.permutation(part_size) for _ in range(n)]
        for b in range(n_batches):
            lo, hi = b * config.batch_size, min((b + 1) * config.batch_size, part_size)
            noises, fakes = [], []
            for j in range(n):
                real = part_rows[j][perms[j][lo:hi]]
                z = sample_noise(train_rng, real.shape[0], arch.noise_dim)
                fake, _ = forward(gens[j], z)
                d_sums[j] += _disc_step(discs[j], d_states[j], real, fake)
                noises.append(z)
                fakes.append(fake)
            if epoch >= config.co_train_delay:
                batch_fakes = np.vstack(fakes)
                true_idx = np.repeat(np.arange(n), [f.shape[0] for f in fakes])
                dp_sum += _classifier_step(dp, dp_state, batch_fakes, true_idx)
                dp_count += 1
            for j in range(n):
                g_sums[j] += _gen_step(
                    gens[j], g_states[j], discs[j], dp, noises[j], j, config, train_rng
                )
        d_means = d_sums / n_batches
        g_means = g_sums / n_batches
        dp_mean = dp_sum / dp_count if dp_count else 0.0
        for j in range(n):
            _check_loss(float(d_means[j]), epoch, f"discriminator {j}")
            _check_loss(float(g_means[j]), epoch, f"generator {j}")
        _check_loss(float(dp_mean), epoch, "privacy discriminator")
        trace.record(g_means, d_means, dp_mean, dp_count, time.perf_counter() - t0)
    return PrivGanModel(gens, discs, dp, config), trace


def _gen_step(gen: MlpModel, state: AdamState, disc: MlpModel, dp: MlpModel,
              z: np.ndarray, pair_index: int, config: PrivGanConfig, rng: Rng) -> float:
    """Combined generator update: fool the pair discriminator plus the
    weighted privacy term through the (frozen) privacy discriminator."""
    fake, cache = forward(gen, z)
    adv_loss, input_grad = _adversarial_input_grad(disc, fake, config.saturating_gen_loss)

    dp_out, dp_cache = forward(dp, fake)
    n_rows = fake.shape[0]
    if config.privacy_mode == "flip":
        wrong = _wrong_labels(rng, pair_index, config.n_pairs, n_rows)
        priv_loss, logit_grad = categorical_ce_loss(dp_out, wrong)
    else:
        # minimize log D_p^i(G_i(z)) directly
        picked = np.clip(dp_out[:, pair_index], 1e-12, None)
        priv_loss = float(np.log(picked).mean())
        logit_grad = -dp_out.copy()
        logit_grad[:, pair_index] += 1.0
        logit_grad /= n_rows
    priv_input_grad = backward(dp, dp_cache, logit_grad).input_grad

    total_grad = input_grad + config.privacy_weight * priv_input_grad
    res = backward(gen, cache, total_grad)
    adam_step(gen.params(), res.weight_grads + res.bias_grads, state)
    return adv_loss + config.privacy_weight * priv_loss


def _wrong_labels(rng: Rng, pair_index: int, n_pairs: int, count: int) -> np.ndarray:
    """Random generator indices excluding the true one."""
    draws = rng.integers(0, n_pairs - 1, count)
    return np.where(draws >= pair_index, draws + 1, draws)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def generate(model, count: int, rng: Rng, policy="random") -> np.ndarray:
    """Sample synthetic rows. For a privGAN model, ``policy`` is an integer
    generator index, "round_robin", or "random" (per-row generator draw)."""
    if count <= 0:
        raise ContractError("count must be positive")
    if isinstance(model, GanModel):
        z = sample_noise(rng, count, model.generator.input_dim)
        out, _ = forward(model.generator, z)
        return out
    n = model.n_pairs
    if isinstance(policy, int):
        if not 0 <= policy < n:
            raise ContractError(f"generator index {policy} out of range [0, {n})")
        assignment = np.full(count, policy)
    elif policy == "round_robin":
        assignment = np.arange(count) % n
    elif policy == "random":
        assignment = rng.integers(0, n, count)
    else:
        raise ContractError(f"unknown generator policy {policy!r}")
    z = sample_noise(rng, count, model.generators[0].input_dim)
    out = np.empty((count, model.generators[0].output_dim))
    for j in range(n):
        mask = assignment == j
        if mask.any():
            out[mask], _ = forward(model.generators[j], z[mask])
    return out


def disc_scores(model, X) -> np.ndarray:
    """Discriminator scores: (n, 1) for a GAN, one column per pair for privGAN."""
    x = as_matrix(X)
    if isinstance(model, GanModel):
        out, _ = forward(model.discriminator, x)
        return out
    cols = [forward(d, x)[0] for d in model.discriminators]
    return np.hstack(cols)


@dataclass
class ValueEstimate:
    utility: float
    privacy: float
    total: float


def privgan_value(model: PrivGanModel, parts: list[np.ndarray], rng: Rng,
                  mc_samples: int, privacy_weight: float | None = None) -> ValueEstimate:
    """Monte-Carlo estimate of the training value function and its split into
    the utility term (pairwise real/fake) and the privacy term (log D_p^i on
    own fakes); total = utility + weight·privacy by construction."""
    if mc_samples <= 0:
        raise ContractError("mc_samples must be positive")
    if len(parts) != model.n_pairs:
        raise ShapeError(f"{len(parts)} parts for {model.n_pairs} pairs")
    w = model.config.privacy_weight if privacy_weight is None else privacy_weight
    utility = 0.0
    privacy = 0.0
    for j in range(model.n_pairs):
        real = as_matrix(parts[j])
        real_scores, _ = forward(model.discriminators[j], real)
        z = sample_noise(rng, mc_samples, model.generators[j].input_dim)
        fake, _ = forward(model.generators[j], z)
        fake_scores, _ = forward(model.discriminators[j], fake)
        utility += float(np.log(real_scores).mean() + np.log(1.0 - fake_scores).mean())
        dp_out, _ = forward(model.privacy_disc, fake)
        privacy += float(np.log(np.clip(dp_out[:, j], 1e-300, None)).mean())
    return ValueEstimate(utility=utility, privacy=privacy, total=utility + w * privacy)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _mlp_to_dict(m: MlpModel) -> dict:
    return {
        "layer_dims": m.layer_dims,
        "activations": m.activations,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }


def _mlp_from_dict(d: dict) -> MlpModel:
    return MlpModel(
        list(d["layer_dims"]),
        list(d["activations"]),
        [np.array(w, dtype=np.float64) for w in d["weights"]],
        [np.array(b, dtype=np.float64) for b in d["biases"]],
    )


def checkpoint_document(model, trace: TrainTrace, arch: GanArch, config) -> dict:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(arch),
        "config": asdict(config),
        "seed": config.seed,
        "trace": {
            "gen_losses": trace.gen_losses,
            "disc_losses": trace.disc_losses,
            "dp_losses": trace.dp_losses,
            "dp_updates": trace.dp_updates,
        },
    }
    if isinstance(model, GanModel):
        doc["family"] = "gan"
        doc["models"] = {
            "generators": [_mlp_to_dict(model.generator)],
            "discriminators": [_mlp_to_dict(model.discriminator)],
            "privacy_disc": None,
        }
    else:
        doc["family"] = "privgan"
        doc["models"] = {
            "generators": [_mlp_to_dict(g) for g in model.generators],
            "discriminators": [_mlp_to_dict(d) for d in model.discriminators],
            "privacy_disc": _mlp_to_dict(model.privacy_disc),
        }
    return doc


def save_checkpoint(path, model, trace: TrainTrace, arch: GanArch, config) -> None:
    doc = checkpoint_document(model, trace, arch, config)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (model, trace, arch, config)."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('format_version')}")
    arch = GanArch(
        data_dim=doc["arch"]["data_dim"],
        noise_dim=doc["arch"]["noise_dim"],
        gen_hidden=tuple(doc["arch"]["gen_hidden"]),
        disc_hidden=tuple(doc["arch"]["disc_hidden"]),
    )
    trace = TrainTrace(
        gen_losses=doc["trace"]["gen_losses"],
        disc_losses=doc["trace"]["disc_losses"],
        dp_losses=doc["trace"]["dp_losses"],
        dp_updates=doc["trace"]["dp_updates"],
        wall_times=[0.0] * len(doc["trace"]["gen_losses"]),
    )
    models = doc["models"]
    if doc["family"] == "gan":
        config = GanConfig(**doc["config"])
        model = GanModel(
            _mlp_from_dict(models["generators"][0]),
            _mlp_from_dict(models["discriminators"][0]),
        )
    else:
        config = PrivGanConfig(**doc["config"])
        model = PrivGanModel(
            [_mlp_from_dict(g) for g in models["generators"]],
            [_mlp_from_dict(d) for d in models["discriminators"]],
            _mlp_from_dict(models["privacy_disc"]),
            config,
        )
    return model, trace, arch, config
