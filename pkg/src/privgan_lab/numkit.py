"""Deterministic numeric core: dense MLPs, losses, Adam, and a seeded PRNG.

Everything downstream (training loops, attacks, metrics) builds on the
primitives here. Matrices are plain float64 C-order numpy arrays; models are
small dataclasses holding weight/bias arrays. All randomness flows through
:class:`Rng`, a wrapper around numpy's Philox counter-based bit generator
(bit-stream frozen by numpy's RNG compatibility policy) with labeled
substreams, so the draw order of one component never perturbs another.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

LEAKY_ALPHA = 0.2
PROB_EPS = 1e-7

ACTIVATIONS = ("linear", "leaky_relu", "tanh", "sigmoid", "softmax")
_FINAL_ONLY = ("sigmoid", "softmax")


class ShapeError(ValueError):
    """Array dimensions disagree with a declared contract."""


class ContractError(ValueError):
    """A non-shape precondition was violated."""


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 C-order array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def require_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# PRNG
# ---------------------------------------------------------------------------


def _label_key(label: str) -> tuple[int, ...]:
    # 128 bits of SHA-256(label) as four uint32 spawn-key words
    h = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(h[i : i + 4], "big") for i in range(0, 16, 4))


class Rng:
    """Seeded deterministic stream with labeled substreams.

    Same seed ⇒ same stream. ``substream(label)`` derives an independent
    child stream keyed by (seed, SHA-256(label)); children are stable no
    matter how many other substreams exist or in which order they are made.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def substream(self, label: str) -> "Rng":
        return Rng(self.seed, self._key + _label_key(label))

    def normal(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.standard_normal((rows, cols), dtype=np.float64)

    def uniform(self, rows: int, cols: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=(rows, cols))

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        """Uniform ints in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def bernoulli(self, p: float = 0.5) -> int:
        return int(self._gen.random() < p)


def sample_noise(rng: Rng, n: int, dim: int) -> np.ndarray:
    """n×dim standard Gaussian draws (the generator input distribution)."""
    if n <= 0 or dim <= 0:
        raise ContractError(f"sample_noise needs positive sizes, got n={n}, dim={dim}")
    return rng.normal(n, dim)


# ---------------------------------------------------------------------------
# MLP model
# ---------------------------------------------------------------------------


@dataclass
class MlpModel:
    """Dense network: layer_dims[0] inputs through len(layer_dims)-1 affine layers.

    activations[k] applies after layer k; sigmoid/softmax are final-only.
    weights[k] has shape (layer_dims[k], layer_dims[k+1]); biases[k] is
    (1, layer_dims[k+1]).
    """

    layer_dims: list[int]
    activations: list[str]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims, acts = self.layer_dims, self.activations
        if len(dims) < 2:
            raise ShapeError("need at least input and output dims")
        if len(acts) != len(dims) - 1:
            raise ShapeError(f"expected {len(dims) - 1} activations, got {len(acts)}")
        for k, a in enumerate(acts):
            if a not in ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r} at layer {k}")
            if a in _FINAL_ONLY and k != len(acts) - 1:
                raise ContractError(f"{a} is only valid as the final activation (layer {k})")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k], dims[k + 1]):
                raise ShapeError(
                    f"layer {k}: weight shape {w.shape} != ({dims[k]}, {dims[k + 1]})"
                )
            if b.shape != (1, dims[k + 1]):
                raise ShapeError(f"layer {k}: bias shape {b.shape} != (1, {dims[k + 1]})")

    @classmethod
    def init(cls, layer_dims: list[int], activations: list[str], rng: Rng) -> "MlpModel":
        """Scaled-uniform fan-in init: W ~ U(−1/√fan_in, 1/√fan_in), b = 0."""
        weights, biases = [], []
        for k in range(len(layer_dims) - 1):
            bound = 1.0 / np.sqrt(layer_dims[k])
            weights.append(rng.uniform(layer_dims[k], layer_dims[k + 1], -bound, bound))
            biases.append(np.zeros((1, layer_dims[k + 1])))
        return cls(list(layer_dims), list(activations), weights, biases)

    def params(self) -> list[np.ndarray]:
        """Live parameter arrays, weights then biases (mutated by adam_step)."""
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            list(self.activations),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_ALPHA * z)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-z))
        return np.clip(out, PROB_EPS, 1.0 - PROB_EPS)
    if name == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ContractError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d(activation)/d(pre-activation), elementwise. Not defined for softmax."""
    if name == "linear":
        return np.ones_like(z)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_ALPHA)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ContractError(f"no elementwise gradient for activation {name!r}")


@dataclass
class ForwardCache:
    model: MlpModel
    x: np.ndarray
    pre_acts: list[np.ndarray]
    post_acts: list[np.ndarray]


def forward(model: MlpModel, batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (final activations, cache for backward)."""
    x = as_matrix(batch)
    if x.shape[1] != model.input_dim:
        raise ShapeError(
            f"layer 0: expected input dim {model.input_dim}, got {x.shape[1]}"
        )
    a = x
    pre_acts, post_acts = [], []
    for k, name in enumerate(model.activations):
        z = a @ model.weights[k] + model.biases[k]
        a = _apply_activation(name, z)
        pre_acts.append(z)
        post_acts.append(a)
    require_finite("forward output", a)
    return a, ForwardCache(model, x, pre_acts, post_acts)


@dataclass
class BackwardResult:
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray


def backward(model: MlpModel, cache: ForwardCache, loss_grad) -> BackwardResult:
    """Backprop a loss gradient through the cached forward pass.

    ``loss_grad`` is dL/d(final activations) — except for a softmax head,
    where it must be dL/d(logits) (the form categorical_ce_loss returns,
    since softmax+cross-entropy fuse cleanly).
    """
    if cache.model is not model:
        raise ContractError("cache was produced by a different model")
    g = as_matrix(loss_grad)
    out = cache.post_acts[-1]
    if g.shape != out.shape:
        raise ShapeError(f"loss_grad shape {g.shape} != output shape {out.shape}")

    n_layers = len(model.weights)
    weight_grads = [np.empty(0)] * n_layers
    bias_grads = [np.empty(0)] * n_layers
    delta = g
    for k in range(n_layers - 1, -1, -1):
        name = model.activations[k]
        if name != "softmax":
            delta = delta * _activation_grad(name, cache.pre_acts[k], cache.post_acts[k])
        below = cache.x if k == 0 else cache.post_acts[k - 1]
        weight_grads[k] = below.T @ delta
        bias_grads[k] = delta.sum(axis=0, keepdims=True)
        delta = delta @ model.weights[k].T
    for k in range(n_layers):
        require_finite(f"weight grad {k}", weight_grads[k])
        require_finite(f"bias grad {k}", bias_grads[k])
    return BackwardResult(weight_grads, bias_grads, delta)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_loss(pred, target) -> tuple[float, np.ndarray]:
    """Binary cross-entropy; returns (loss, dL/dpred).

    Predictions are clamped into [PROB_EPS, 1−PROB_EPS] before logs.
    """
    p = as_matrix(pred)
    t = as_matrix(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != target shape {t.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    n = p.size
    loss = -np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)) / n
    grad = (p - t) / (p * (1.0 - p)) / n
    return float(loss), grad


def categorical_ce_loss(pred, target_index) -> tuple[float, np.ndarray]:
    """Cross-entropy for a softmax head; returns (loss, dL/dlogits).

    The gradient is (pred − one_hot)/rows, i.e. with respect to the
    pre-softmax logits, which is what ``backward`` expects for a softmax
    final layer.
    """
    p = as_matrix(pred)
    idx = np.asarray(target_index, dtype=np.int64).ravel()
    if idx.shape[0] != p.shape[0]:
        raise ShapeError(f"{idx.shape[0]} targets for {p.shape[0]} rows")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= p.shape[1]):
        raise ContractError(f"class index out of range [0, {p.shape[1]})")
    n = p.shape[0]
    picked = np.clip(p[np.arange(n), idx], PROB_EPS, None)
    loss = -np.log(picked).mean()
    grad = p.copy()
    grad[np.arange(n), idx] -= 1.0
    grad /= n
    return float(loss), grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed list of parameter arrays."""

    lr: float
    beta1: float
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractError("beta1, beta2 must lie in (0, 1)")
        if self.t < 0:
            raise ContractError("step counter must be non-negative")

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float, beta1: float,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One in-place Adam update; increments state.t exactly once."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
