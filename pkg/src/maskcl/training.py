"""Learning one binary mask per task over the frozen network.

Scores are real-valued, one per maskable unit. The forward pass uses the
binarized scores; the backward pass treats binarization as the identity
(straight-through), so the score gradient equals the effective-mask
gradient. Scores are updated with RMSProp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .masks import LAYER_OUTPUTS, WEIGHTS, Supermask
from .net import (
    FixedNet,
    backward_mask_grads,
    cross_entropy_logit_grad,
    forward_effective,
)
from .validation import as_label_vector, as_sample_matrix

THRESHOLD0 = "threshold0"
TOPK = "topk"


@dataclass
class ScoreTensor:
    """Real-valued scores matching the mask shapes of one net."""

    layers: list
    rule: str = THRESHOLD0
    keep_frac: float = None
    placement: str = WEIGHTS

    def __post_init__(self):
        if self.rule not in (THRESHOLD0, TOPK):
            raise ConfigurationError(f"unknown binarize rule {self.rule!r}")
        if self.rule == TOPK and not (self.keep_frac and 0.0 < self.keep_frac <= 1.0):
            raise ConfigurationError(
                f"topk rule needs keep_frac in (0, 1], got {self.keep_frac!r}"
            )
        self.layers = [np.asarray(a, dtype=np.float64) for a in self.layers]

    def copy(self):
        return ScoreTensor(
            [a.copy() for a in self.layers], self.rule, self.keep_frac, self.placement
        )


def default_score_init(net: FixedNet, seed=0, rule=THRESHOLD0, keep_frac=None) -> ScoreTensor:
    """Seeded uniform scores in (-b, b) with b = sqrt(1 / fan_in_l)."""
    rng = np.random.default_rng(seed)
    layers = []
    dims = net.config.layer_dims
    for i, shape in enumerate(net.config.mask_shapes()):
        bound = np.sqrt(1.0 / dims[i])
        layers.append(rng.uniform(-bound, bound, size=shape))
    return ScoreTensor(layers, rule, keep_frac, net.config.mask_placement)


def binarize_threshold(scores: ScoreTensor) -> Supermask:
    """Mask entry is 1 iff the score is strictly positive."""
    return Supermask(
        [(a > 0.0).astype(np.float64) for a in scores.layers], scores.placement
    )


def binarize_topk(scores: ScoreTensor, keep_frac) -> Supermask:
    """Keep exactly round(keep_frac * size) largest entries per layer.

    Ties are broken toward the lowest flat index so the result is
    deterministic.
    """
    if not 0.0 < keep_frac <= 1.0:
        raise ConfigurationError(f"keep_frac must lie in (0, 1], got {keep_frac}")
    layers = []
    for a in scores.layers:
        flat = a.reshape(-1)
        n_keep = int(round(keep_frac * flat.size))
        order = np.argsort(-flat, kind="stable")
        mask = np.zeros(flat.size, dtype=np.float64)
        mask[order[:n_keep]] = 1.0
        layers.append(mask.reshape(a.shape))
    return Supermask(layers, scores.placement)


def binarize(scores: ScoreTensor) -> Supermask:
    if scores.rule == TOPK:
        return binarize_topk(scores, scores.keep_frac)
    return binarize_threshold(scores)


def score_gradient(net: FixedNet, scores: ScoreTensor, batch):
    """Straight-through gradient of mean cross-entropy w.r.t. the scores.

    Cross-entropy runs over all output neurons, which drives the
    superfluous neurons negative during training.
    """
    x, labels = batch
    x = as_sample_matrix(x, n_features=net.config.input_dim)
    labels = as_label_vector(labels, num_classes=net.config.real_labels)
    if labels.shape[0] != x.shape[0]:
        raise DataError("batch images and labels differ in length")
    mask = binarize(scores)
    if mask.placement != net.config.mask_placement:
        raise ConfigurationError("score placement does not match net placement")
    cache = forward_effective(net, mask.layers, x)
    _, dlogits = cross_entropy_logit_grad(cache, labels)
    return backward_mask_grads(net, cache, mask.layers, dlogits)


@dataclass
class RmspropState:
    """Second-moment accumulators, one per score layer."""

    v: list
    rho: float = 0.99
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def for_scores(cls, scores: ScoreTensor, rho=0.99, eps=1e-8, lr=1e-4):
        return cls([np.zeros_like(a) for a in scores.layers], rho, eps, lr)


def rmsprop_step(state: RmspropState, scores: ScoreTensor, grads) -> ScoreTensor:
    """v <- rho v + (1 - rho) g^2; S <- S - lr g / (sqrt(v) + eps). In place."""
    for v, s, g in zip(state.v, scores.layers, grads):
        v *= state.rho
        v += (1.0 - state.rho) * g * g
        s -= state.lr * g / (np.sqrt(v) + state.eps)
    return scores


def transfer_init(prior_masks, net: FixedNet, seed=0, rule=THRESHOLD0, keep_frac=None) -> ScoreTensor:
    """Scores from the running mean of prior masks, scaled by c_l per layer.

    With no priors, falls back to the seeded default initialization.
    """
    if not prior_masks:
        return default_score_init(net, seed, rule, keep_frac)
    count = len(prior_masks)
    layers = []
    for l in range(len(prior_masks[0].layers)):
        mean = prior_masks[0].layers[l].copy()
        for m in prior_masks[1:]:
            mean += m.layers[l]
        mean /= count
        layers.append(mean * net.layer_constants[l])
    return ScoreTensor(layers, rule, keep_frac, prior_masks[0].placement)


def train_task(
    net: FixedNet,
    data,
    steps,
    batch_size=128,
    lr=1e-4,
    rho=0.99,
    eps_opt=1e-8,
    init: ScoreTensor = None,
    seed=0,
) -> Supermask:
    """Run `steps` batches of score updates and return the binarized mask.

    The frozen weights are untouched; `data` is any object with train_x and
    train_y arrays.
    """
    x_all = np.asarray(data.train_x, dtype=np.float64)
    y_all = as_label_vector(np.asarray(data.train_y))
    if x_all.shape[0] == 0:
        raise DataError("task has no training data")
    scores = (init or default_score_init(net, seed)).copy()
    state = RmspropState.for_scores(scores, rho=rho, eps=eps_opt, lr=lr)
    rng = np.random.default_rng(seed)
    take = min(batch_size, x_all.shape[0])
    order = rng.permutation(x_all.shape[0])
    pos = 0
    for _ in range(steps):
        if pos + take > order.size:
            order = rng.permutation(x_all.shape[0])
            pos = 0
        idx = order[pos : pos + take]
        pos += take
        grads = score_gradient(net, scores, (x_all[idx], y_all[idx]))
        rmsprop_step(state, scores, grads)
    return binarize(scores)
