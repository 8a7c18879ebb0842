"""Membership-inference attack suite.

White-box score attacks rank every candidate by discriminator score and call
the top f-fraction the training set. The binned-TVD attack upper-bounds what
any score-only adversary can achieve. The Monte-Carlo set attack decides
which of two sample sets was used for training by counting synthetic
neighbors within a PCA-space radius chosen by the median heuristic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PcaBasis, SplitPlan, pca_fit, pca_project
from .models import GanModel, disc_scores, generate
from .numkit import ContractError, Rng, ShapeError, as_matrix


@dataclass
class WhiteBoxResult:
    scores: np.ndarray  # aggregated per-sample score used for ranking
    predicted: np.ndarray  # indices called "training set"
    accuracy: float


def _top_fraction(scores: np.ndarray, f: float) -> np.ndarray:
    """Indices of the top ⌈f·n⌉ scores; ties broken by lower index first."""
    k = math.ceil(f * scores.size)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def whitebox_gan(scores, f: float, truth) -> WhiteBoxResult:
    """Rank by score, call the top f-fraction members, grade against truth."""
    if not 0.0 < f < 1.0:
        raise ContractError(f"f must lie in (0, 1), got {f}")
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel().astype(bool)
    if s.size != t.size:
        raise ShapeError(f"{s.size} scores vs {t.size} truth bits")
    predicted = _top_fraction(s, f)
    accuracy = float(t[predicted].mean())
    return WhiteBoxResult(scores=s, predicted=predicted, accuracy=accuracy)


def whitebox_privgan(scores, f: float, truth, aggregate: str = "max") -> WhiteBoxResult:
    """Aggregate the per-pair score columns per row (max by default), then
    run the single-score attack on the aggregate."""
    s = as_matrix(scores)
    if aggregate == "max":
        agg = s.max(axis=1)
    elif aggregate == "mean":
        agg = s.mean(axis=1)
    else:
        raise ContractError(f"unknown aggregate {aggregate!r}")
    return whitebox_gan(agg, f, truth)


@dataclass
class TvdResult:
    bin_edges: np.ndarray  # (bins+1,) equal-width edges on [0, 1]
    train_hists: np.ndarray  # (n_disc, bins) each summing to 1
    holdout_hists: np.ndarray
    per_disc: np.ndarray  # (n_disc,) TVD per score column
    score: float  # max over columns


def _bin_scores(scores: np.ndarray, bins: int) -> np.ndarray:
    # equal-width bins on [0,1]; the last bin is closed on the right
    idx = np.minimum((scores * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    return hist / hist.sum()


def tvd_attack(scores_train, scores_holdout, bins: int = 20) -> TvdResult:
    """Binned total variation distance between train and holdout score
    distributions, per score column; the attack score is the max column."""
    if bins < 2:
        raise ContractError(f"need at least 2 bins, got {bins}")
    st = np.asarray(scores_train, dtype=np.float64)
    sh = np.asarray(scores_holdout, dtype=np.float64)
    if st.ndim == 1:
        st = st[:, None]
    if sh.ndim == 1:
        sh = sh[:, None]
    if st.size == 0 or sh.size == 0:
        raise ContractError("empty score set")
    if st.shape[1] != sh.shape[1]:
        raise ShapeError(f"{st.shape[1]} train columns vs {sh.shape[1]} holdout columns")
    n_disc = st.shape[1]
    p = np.stack([_bin_scores(st[:, j], bins) for j in range(n_disc)])
    q = np.stack([_bin_scores(sh[:, j], bins) for j in range(n_disc)])
    per_disc = 0.5 * np.abs(p - q).sum(axis=1)
    return TvdResult(
        bin_edges=np.linspace(0.0, 1.0, bins + 1),
        train_hists=p,
        holdout_hists=q,
        per_disc=per_disc,
        score=float(per_disc.max()),
    )


def histogram_csv(result: TvdResult, disc_index: int = 0) -> str:
    """One score-histogram pair as ``bin_lo,bin_hi,p,q`` CSV."""
    lines = ["bin_lo,bin_hi,p,q"]
    edges = result.bin_edges
    for b in range(edges.size - 1):
        lines.append(
            f"{edges[b]!r},{edges[b + 1]!r},"
            f"{result.train_hists[disc_index, b]!r},{result.holdout_hists[disc_index, b]!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Monte-Carlo set membership attack
# ---------------------------------------------------------------------------


@dataclass
class McAttackConfig:
    set_size: int = 20  # m: samples per candidate set
    synthetic_count: int = 10_000  # n: synthetic pool size per repeat
    pca_k: int = 40
    epsilon: float | str = "median"  # explicit radius or the median heuristic
    repeats: int = 10

    def __post_init__(self):
        if self.set_size <= 0 or self.synthetic_count <= 0:
            raise ContractError("set_size and synthetic_count must be positive")
        if isinstance(self.epsilon, (int, float)) and self.epsilon <= 0:
            raise ContractError("explicit epsilon must be positive")


def _min_distances(points: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Per-point min Euclidean distance to any pool row (both already in
    PCA space)."""
    # ||a-b||² = ||a||² + ||b||² − 2a·b, chunked over the pool
    d2 = (
        np.sum(points ** 2, axis=1)[:, None]
        + np.sum(pool ** 2, axis=1)[None, :]
        - 2.0 * points @ pool.T
    )
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0))


def median_epsilon(candidates, synthetic, basis: PcaBasis) -> float:
    """Median over all candidates of the min PCA-space distance to any
    synthetic sample."""
    c = as_matrix(candidates)
    s = as_matrix(synthetic)
    if c.shape[0] == 0 or s.shape[0] == 0:
        raise ContractError("empty candidate or synthetic set")
    return float(np.median(_min_distances(pca_project(basis, c), pca_project(basis, s))))


def _neighbor_fractions(samples: np.ndarray, pool_proj: np.ndarray,
                        basis: PcaBasis, epsilon: float) -> np.ndarray:
    proj = pca_project(basis, samples)
    d2 = (
        np.sum(proj ** 2, axis=1)[:, None]
        + np.sum(pool_proj ** 2, axis=1)[None, :]
        - 2.0 * proj @ pool_proj.T
    )
    return (d2 <= epsilon * epsilon).mean(axis=1)


def mc_set_attack(s1, s0, synthetic, basis: PcaBasis, epsilon: float, rng: Rng) -> int:
    """Decide which candidate set was the training set (1 = first set).

    Each pair (s1[i], s0[i]) votes for the set whose sample has the larger
    fraction of synthetic points within epsilon; an exactly split vote falls
    back to a fair coin.
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    a = as_matrix(s1)
    b = as_matrix(s0)
    if a.shape != b.shape:
        raise ShapeError(f"candidate sets differ in shape: {a.shape} vs {b.shape}")
    pool = pca_project(basis, as_matrix(synthetic))
    f1 = _neighbor_fractions(a, pool, basis, epsilon)
    f0 = _neighbor_fractions(b, pool, basis, epsilon)
    votes = int((f1 >= f0).sum())
    m = a.shape[0]
    if votes * 2 > m:
        return 1
    if votes * 2 < m:
        return 0
    return rng.bernoulli(0.5)


@dataclass
class McSetResult:
    accuracy: float
    bits: list[int] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)


def mc_set_accuracy(model, dataset: Dataset, split: SplitPlan,
                    config: McAttackConfig, rng: Rng) -> McSetResult:
    """Average over repeats of the set attack with S1 drawn from the training
    rows and S0 from the holdout rows; the PCA basis comes from the holdout
    features and the synthetic pool is regenerated each repeat."""
    m = config.set_size
    train_pool = dataset.features[split.train_indices]
    holdout_pool = dataset.features[split.holdout_indices]
    if m > train_pool.shape[0] or m > holdout_pool.shape[0]:
        raise ContractError(
            f"set_size {m} exceeds pool sizes ({train_pool.shape[0]} train, "
            f"{holdout_pool.shape[0]} holdout)"
        )
    basis = pca_fit(holdout_pool, k=min(config.pca_k, min(holdout_pool.shape)))
    bits, epsilons = [], []
    for r in range(config.repeats):
        rep = rng.substream(f"repeat/{r}")
        s1 = train_pool[rep.substream("s1").choice(train_pool.shape[0], m, replace=False)]
        s0 = holdout_pool[rep.substream("s0").choice(holdout_pool.shape[0], m, replace=False)]
        policy = "random" if not isinstance(model, GanModel) else "round_robin"
        synthetic = generate(model, config.synthetic_count, rep.substream("synthetic"), policy)
        if config.epsilon == "median":
            eps = median_epsilon(np.vstack([s1, s0]), synthetic, basis)
            if eps == 0.0:
                eps = np.finfo(np.float64).tiny
        else:
            eps = float(config.epsilon)
        epsilons.append(eps)
        bits.append(mc_set_attack(s1, s0, synthetic, basis, eps, rep.substream("tie")))
    return McSetResult(accuracy=float(np.mean(bits)), bits=bits, epsilons=epsilons)
