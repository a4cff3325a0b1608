"""The per-point refinement network, its trainer, and field statistics.

The network is a small feedforward stack applied independently to each
descriptor row, followed by row L2 normalization onto the unit sphere.
Nonlinearity is the softplus smooth ramp log(1 + e^x).  Training runs
minibatch Adam on the contrastive objective, with the gradient chained
through the normalization Jacobian by hand (no autodiff framework).

`depth` counts hidden layers; it is the capacity knob exposed for
ablation studies.
"""

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .descriptors import D_IN, extract_descriptors
from .errors import InvalidArgumentError, NumericalError
from .losses import (LabeledFeatureBatch, LossConfig, geometric_loss,
                     loss_gradients, sample_batch_indices, semantic_loss)
from .nn import Adam, sigmoid, softplus
from .rng import rng_from
from .serialize import load_arrays, save_arrays

FIELD_MAGIC = b"PFF1"


@dataclass
class RefineNetParams:
    """Weights/biases of the d_in -> hidden x depth -> n stack."""

    weights: list   # [(W, b), ...], depth+1 linear layers
    d_in: int
    hidden: int
    depth: int
    n: int
    seed: int

    def copy(self) -> "RefineNetParams":
        return RefineNetParams([(W.copy(), b.copy()) for W, b in self.weights],
                               self.d_in, self.hidden, self.depth, self.n, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in self.weights for a in (W, b)])

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.weights)


@dataclass
class FeatureField:
    """Unit-norm per-point embeddings, row-aligned with a source cloud."""

    values: np.ndarray
    cloud: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def init_refine_net(d_in: int = D_IN, hidden: int = 64, depth: int = 2,
                    n: int = 32, seed: int = 0) -> RefineNetParams:
    """Seeded scaled-Gaussian (1/sqrt(fan_in)) initialization."""
    if min(d_in, hidden, depth, n) < 1:
        raise InvalidArgumentError("all dims must be >= 1")
    rng = rng_from(seed, "refine-init")
    dims = [d_in] + [hidden] * depth + [n]
    weights = []
    for i in range(len(dims) - 1):
        W = rng.standard_normal((dims[i], dims[i + 1])) / np.sqrt(dims[i])
        b = np.zeros(dims[i + 1])
        weights.append((W, b))
    return RefineNetParams(weights, d_in, hidden, depth, n, seed)


def _forward_raw(params: RefineNetParams, desc: np.ndarray):
    """Pre-normalization outputs plus activations for backprop."""
    a = desc
    acts = [a]
    for W, b in params.weights[:-1]:
        a = softplus(a @ W + b)
        acts.append(a)
    W, b = params.weights[-1]
    y = a @ W + b
    return y, acts


def _normalize_rows(y: np.ndarray):
    norms = np.linalg.norm(y, axis=1)
    ok = norms > 0.0
    f = np.empty_like(y)
    f[ok] = y[ok] / norms[ok, None]
    if not np.all(ok):
        # zero pre-normalization rows map to the fixed fallback e1
        f[~ok] = 0.0
        f[~ok, 0] = 1.0
    return f, norms, ok


def forward(params: RefineNetParams, desc: np.ndarray) -> FeatureField:
    """Apply the net per point and L2-normalize each row."""
    desc = np.asarray(desc, dtype=np.float64)
    if desc.ndim != 2 or desc.shape[1] != params.d_in:
        raise InvalidArgumentError(
            f"descriptor width {desc.shape[-1]} != d_in {params.d_in}")
    y, _ = _forward_raw(params, desc)
    f, _, _ = _normalize_rows(y)
    return FeatureField(f)


def backward(params: RefineNetParams, desc: np.ndarray, grad_f: np.ndarray):
    """Parameter gradients of a scalar loss given dL/d(normalized rows).

    Chains through the normalization Jacobian (I - f f^T)/|y| and the
    softplus stack.  Returns gradients shaped like params.weights.
    """
    y, acts = _forward_raw(params, desc)
    f, norms, ok = _normalize_rows(y)
    g = np.zeros_like(y)
    g[ok] = (grad_f[ok] - (np.sum(grad_f[ok] * f[ok], axis=1, keepdims=True)
                           * f[ok])) / norms[ok, None]
    grads = [None] * len(params.weights)
    W_last, _ = params.weights[-1]
    grads[-1] = (acts[-1].T @ g, g.sum(axis=0))
    upstream = g @ W_last.T
    for i in range(len(params.weights) - 2, -1, -1):
        W, b = params.weights[i]
        z = acts[i] @ W + b
        gz = upstream * sigmoid(z)
        grads[i] = (acts[i].T @ gz, gz.sum(axis=0))
        upstream = gz @ W.T
    return grads


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    steps: int = 600
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    points_per_part: int = 16
    instances_per_batch: int = 4
    loss: LossConfig = dc_field(default_factory=LossConfig)
    seed: int = 0
    hidden: int = 64
    depth: int = 2
    n_dim: int = 32
    k_neighbors: int = 16

    def __post_init__(self):
        if self.steps < 1 or self.learning_rate <= 0:
            raise InvalidArgumentError("steps and learning rate must be positive")


def train_field(clouds, codebooks: dict, config: TrainConfig,
                descriptors=None):
    """Minibatch Adam on the contrastive objective.

    Returns (params, log) where log is a list of dicts with per-step
    loss terms (disabled terms stay None).  Descriptors may be passed
    precomputed (row-aligned with clouds); otherwise they are extracted
    once here.
    """
    if not clouds:
        raise InvalidArgumentError("dataset must be non-empty")
    categories = sorted({c.category for c in clouds})
    for cat in categories:
        if cat not in codebooks:
            raise InvalidArgumentError(f"no codebook for category {cat!r}")
    if descriptors is None:
        descriptors = [extract_descriptors(c, config.k_neighbors) for c in clouds]
    params = init_refine_net(D_IN, config.hidden, config.depth,
                             config.n_dim, config.seed)
    tensors = [a for W, b in params.weights for a in (W, b)]
    opt = Adam([a.shape for a in tensors], config.learning_rate,
               config.beta1, config.beta2, config.eps)
    history = []
    for step in range(config.steps):
        category = categories[step % len(categories)]
        idx = sample_batch_indices(clouds, category, config.points_per_part,
                                   config.instances_per_batch,
                                   config.seed, tags=("step", step))
        desc = np.stack([descriptors[c][p] for c, p in
                         zip(idx.cloud_indices, idx.point_indices)])
        ff = forward(params, desc)
        batch = LabeledFeatureBatch(ff.values, idx.labels, category)
        cb = codebooks[category]
        l_geo = geometric_loss(batch, config.loss.tau_geo) \
            if config.loss.enable_geo else None
        l_sem = semantic_loss(batch, cb, config.loss.tau_sem) \
            if config.loss.enable_sem else None
        total = (l_geo or 0.0) + (l_sem or 0.0)
        if not np.isfinite(total):
            err = NumericalError(f"non-finite loss at step {step}")
            err.step = step
            err.params = params.copy()
            raise err
        grad_f = loss_gradients(batch, cb, config.loss)
        grads = backward(params, desc, grad_f)
        opt.step(tensors, [a for W, b in grads for a in (W, b)])
        history.append({"step": step, "L_geo": l_geo, "L_sem": l_sem,
                        "total": total})
    return params, history


def write_training_log(path, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "L_geo", "L_sem", "total"])
        for row in history:
            writer.writerow([row["step"],
                             "" if row["L_geo"] is None else repr(row["L_geo"]),
                             "" if row["L_sem"] is None else repr(row["L_sem"]),
                             repr(row["total"])])


# ---------------------------------------------------------------------------
# statistics

@dataclass
class SimilarityStats:
    intra: float
    inter: float  # None when only one part is present


def part_similarity_stats(field: FeatureField, labels,
                          max_pairs: int = 1_000_000,
                          seed: int = 0) -> SimilarityStats:
    """Mean same-part and cross-part cosine over (subsampled) pairs."""
    values = field.values if isinstance(field, FeatureField) else np.asarray(field)
    labels = np.asarray(labels)
    if len(labels) != len(values):
        raise InvalidArgumentError("labels must align with field rows")
    n = len(values)
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        iu, ju = np.triu_indices(n, k=1)
    else:
        rng = rng_from(seed, "simstats")
        iu = rng.integers(0, n, size=max_pairs)
        ju = rng.integers(0, n - 1, size=max_pairs)
        ju = np.where(ju >= iu, ju + 1, ju)  # avoid i == j
    cos = np.sum(values[iu] * values[ju], axis=1)
    same = labels[iu] == labels[ju]
    intra = float(cos[same].mean()) if np.any(same) else float("nan")
    inter = float(cos[~same].mean()) if np.any(~same) else None
    return SimilarityStats(intra, inter)


# ---------------------------------------------------------------------------
# checkpoints

def save_field_checkpoint(path, params: RefineNetParams) -> None:
    meta = {"d_in": params.d_in, "hidden": params.hidden,
            "depth": params.depth, "n": params.n, "seed": params.seed}
    arrays = [a for W, b in params.weights for a in (W, b)]
    save_arrays(path, FIELD_MAGIC, meta, arrays)


def load_field_checkpoint(path) -> RefineNetParams:
    meta, arrays = load_arrays(path, FIELD_MAGIC)
    weights = [(arrays[2 * i], arrays[2 * i + 1])
               for i in range(len(arrays) // 2)]
    return RefineNetParams(weights, meta["d_in"], meta["hidden"],
                           meta["depth"], meta["n"], meta["seed"])
