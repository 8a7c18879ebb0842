"""Utility-side measurements: downstream classification on synthetic data,
predictive entropy, class diversity, and score-histogram emission."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import TvdResult, tvd_attack
from .data import Dataset, SplitPlan
from .models import GanConfig, GanModel, disc_scores, generate, _classifier_step
from .numkit import AdamState, ContractError, MlpModel, Rng, forward


@dataclass
class UtilityReport:
    downstream_accuracy: float
    avg_entropy: float
    class_diversity: float
    reference_accuracy_real: float


def train_classifier(dataset: Dataset, hidden: tuple[int, ...],
                     config: GanConfig) -> tuple[MlpModel, float]:
    """Softmax MLP classifier; returns (model, training accuracy)."""
    if dataset.labels is None:
        raise ContractError("classifier training needs a labeled dataset")
    n_classes = dataset.num_classes()
    rng = Rng(config.seed).substream("classifier")
    dims = [dataset.dims, *hidden, n_classes]
    acts = ["leaky_relu"] * len(hidden) + ["softmax"]
    model = MlpModel.init(dims, acts, rng.substream("init"))
    state = AdamState.for_params(model.params(), config.lr, config.beta1)
    x, y = dataset.features, dataset.labels
    train_rng = rng.substream("train")
    for _ in range(config.epochs):
        perm = train_rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], config.batch_size):
            idx = perm[start : start + config.batch_size]
            _classifier_step(model, state, x[idx], y[idx])
    train_acc = float((predict_classes(model, x) == y).mean())
    return model, train_acc


def predict_classes(classifier: MlpModel, samples) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    probs, _ = forward(classifier, samples)
    return probs.argmax(axis=1)


def classifier_accuracy(classifier: MlpModel, dataset: Dataset) -> float:
    return float((predict_classes(classifier, dataset.features) == dataset.labels).mean())


def synthetic_trainset(models_by_class: list, counts: list[int], rng: Rng,
                       policy="random") -> Dataset:
    """Labeled synthetic dataset: counts[c] rows generated by the class-c
    model (a randomly chosen generator per row for multi-pair models)."""
    if len(models_by_class) != len(counts):
        raise ContractError(f"{len(models_by_class)} models for {len(counts)} counts")
    blocks, labels = [], []
    for c, (model, count) in enumerate(zip(models_by_class, counts)):
        if count <= 0:
            raise ContractError(f"class {c}: count must be positive")
        blocks.append(generate(model, count, rng.substream(f"class/{c}"), policy))
        labels.append(np.full(count, c, dtype=np.int64))
    return Dataset(np.vstack(blocks), np.concatenate(labels), name="synthetic")


def avg_entropy(classifier: MlpModel, samples) -> float:
    """Mean over samples of the predictive entropy −Σ p·log p."""
    probs, _ = forward(classifier, samples)
    if probs.shape[0] == 0:
        raise ContractError("empty sample set")
    logp = np.where(probs > 0, np.log(np.clip(probs, 1e-300, None)), 0.0)
    return float(-(probs * logp).sum(axis=1).mean())


def class_diversity(classifier: MlpModel, samples) -> float:
    """Entropy of the relative abundance of predicted classes."""
    probs, _ = forward(classifier, samples)
    if probs.shape[0] == 0:
        raise ContractError("empty sample set")
    picks = probs.argmax(axis=1)
    counts = np.bincount(picks, minlength=probs.shape[1]).astype(np.float64)
    rel = counts / counts.sum()
    mask = rel > 0
    return float(-(rel[mask] * np.log(rel[mask])).sum())


def score_histograms(model, dataset: Dataset, split: SplitPlan, rng: Rng,
                     bins: int = 20) -> tuple[TvdResult, int]:
    """Train-vs-holdout score histograms for plotting; a multi-pair model
    contributes one seeded-random discriminator. Returns (histograms,
    discriminator index used)."""
    scores = disc_scores(model, dataset.features)
    if isinstance(model, GanModel):
        disc_index = 0
    else:
        disc_index = int(rng.substream("histogram-disc").integers(0, scores.shape[1], 1)[0])
    col = scores[:, disc_index : disc_index + 1]
    result = tvd_attack(col[split.train_indices], col[split.holdout_indices], bins)
    return result, disc_index
