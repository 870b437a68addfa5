"""Rank-one fast-weight baseline and its batch-replicated task inference.

Each task modulates a shared weight matrix W per layer with vectors r and
s, equivalent to using W * (r s'). Task inference either replicates the
batch once per task and scores each block (the large-batch route), or
attaches a mixing coefficient to every rank-one modulation and reads a
single gradient (the one-shot route).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    InvalidStateError,
    ResourceError,
)
from .net import ENTROPY, _softmax
from .validation import as_label_vector, as_sample_matrix

RANDOM = "random"
FIRST_TASK = "first_task"

MAX_CONF = "max_conf"


@dataclass
class FastWeights:
    """Per-layer modulation vectors: r over inputs, s over outputs."""

    r: list
    s: list

    def copy(self):
        return FastWeights([a.copy() for a in self.r], [a.copy() for a in self.s])


@dataclass
class SharedTrunk:
    """Shared weight matrices, frozen after the first task (or always)."""

    weights: list
    provenance: str = RANDOM
    frozen: bool = True

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def build_trunk(layer_dims, seed=0, provenance=RANDOM) -> SharedTrunk:
    """Kaiming-normal trunk; trainable only when provenance is first_task."""
    if provenance not in (RANDOM, FIRST_TASK):
        raise ConfigurationError(f"unknown trunk provenance {provenance!r}")
    rng = np.random.default_rng(seed)
    weights = [
        rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:])
    ]
    return SharedTrunk(weights, provenance, frozen=(provenance == RANDOM))


def init_fast_weights(trunk: SharedTrunk, seed=0) -> FastWeights:
    """Near-identity start: all-ones vectors plus small seeded noise."""
    rng = np.random.default_rng(seed)
    r = [1.0 + 0.1 * rng.standard_normal(w.shape[0]) for w in trunk.weights]
    s = [1.0 + 0.1 * rng.standard_normal(w.shape[1]) for w in trunk.weights]
    return FastWeights(r, s)


def _check_fast(trunk, fast):
    for i, w in enumerate(trunk.weights):
        if fast.r[i].shape != (w.shape[0],) or fast.s[i].shape != (w.shape[1],):
            raise DimensionError(f"fast weights at layer {i} do not match the trunk")


def _forward_cached(trunk, fast, x):
    """Vectorized forward ((X * R) W) * S per layer, relu between layers."""
    h = x
    inputs, pre = [], []
    last = len(trunk.weights) - 1
    for l, w in enumerate(trunk.weights):
        inputs.append(h)
        z = ((h * fast.r[l]) @ w) * fast.s[l]
        pre.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
    return inputs, pre, _softmax(pre[-1])


def batche_forward(x, trunk: SharedTrunk, fast: FastWeights):
    """Softmax outputs under one task's rank-one modulation."""
    _check_fast(trunk, fast)
    x = as_sample_matrix(x, n_features=trunk.weights[0].shape[0])
    _, _, probs = _forward_cached(trunk, fast, x)
    return probs


def batche_train_task(
    trunk: SharedTrunk,
    data,
    steps,
    lr=0.01,
    batch_size=128,
    seed=0,
    train_trunk=False,
    trunk_lr=1e-4,
) -> FastWeights:
    """Train one task's fast weights by cross-entropy with RMSProp.

    The trunk itself is updated only when train_trunk is set, which is
    legal just once for a first_task trunk; afterwards it freezes.
    """
    if train_trunk and trunk.frozen:
        raise InvalidStateError("trunk is frozen; it can only be trained on the first task")
    x_all = as_sample_matrix(np.asarray(data.train_x), trunk.weights[0].shape[0])
    y_all = as_label_vector(np.asarray(data.train_y), trunk.weights[-1].shape[1])
    if x_all.shape[0] == 0:
        raise DataError("task has no training data")
    fast = init_fast_weights(trunk, seed)
    sq_r = [np.zeros_like(v) for v in fast.r]
    sq_s = [np.zeros_like(v) for v in fast.s]
    sq_w = [np.zeros_like(w) for w in trunk.weights]
    rho, eps = 0.99, 1e-8
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
        x, y = x_all[idx], y_all[idx]
        inputs, pre, probs = _forward_cached(trunk, fast, x)
        batch = x.shape[0]
        delta = probs.copy()
        delta[np.arange(batch), y] -= 1.0
        delta /= batch
        grads_r, grads_s, grads_w = [], [], []
        for l in range(len(trunk.weights) - 1, -1, -1):
            w = trunk.weights[l]
            h = inputs[l]
            ds = (delta * ((h * fast.r[l]) @ w)).sum(axis=0)
            back = (delta * fast.s[l]) @ w.T
            dr = (back * h).sum(axis=0)
            grads_s.append(ds)
            grads_r.append(dr)
            if train_trunk:
                grads_w.append((h * fast.r[l]).T @ (delta * fast.s[l]))
            if l > 0:
                delta = back * fast.r[l] * (pre[l - 1] > 0.0)
        grads_r.reverse()
        grads_s.reverse()
        grads_w.reverse()
        for l in range(len(trunk.weights)):
            for value, grad, sq in (
                (fast.r[l], grads_r[l], sq_r[l]),
                (fast.s[l], grads_s[l], sq_s[l]),
            ):
                sq *= rho
                sq += (1.0 - rho) * grad * grad
                value -= lr * grad / (np.sqrt(sq) + eps)
            if train_trunk:
                sq_w[l] *= rho
                sq_w[l] += (1.0 - rho) * grads_w[l] * grads_w[l]
                trunk.weights[l] -= trunk_lr * grads_w[l] / (np.sqrt(sq_w[l]) + eps)
    if train_trunk and trunk.provenance == FIRST_TASK:
        trunk.frozen = True
    return fast


def max_conf_metric(p) -> float:
    """Negated peak probability; lower means more confident."""
    p = np.asarray(p, dtype=np.float64)
    return float(-p.max())


def _row_scores(probs, objective):
    """Per-row objective values used to score a task block."""
    if objective == ENTROPY:
        q = np.maximum(probs, 1e-12)
        return -(probs * np.log(q)).sum(axis=1)
    if objective == MAX_CONF:
        return -probs.max(axis=1)
    raise ConfigurationError(f"unknown objective {objective!r}")


def abatche_infer(X, trunk, bank, objective=ENTROPY, row_cap=65536) -> int:
    """Replicate the batch once per task stacked as blocks and score each block.

    Builds the bk-row batch with block-structured fast-weight matrices in a
    single forward pass; row b*i + w reproduces the task-i forward of row w
    exactly. Returns the block with the lowest summed objective.
    """
    if not bank:
        raise InvalidStateError("cannot infer over an empty fast-weight bank")
    X = as_sample_matrix(X, n_features=trunk.weights[0].shape[0])
    b, k = X.shape[0], len(bank)
    if b * k > row_cap:
        raise ResourceError(
            f"replicated batch needs {b * k} rows, above the cap of {row_cap}"
        )
    h = np.vstack([X] * k)
    last = len(trunk.weights) - 1
    for l, w in enumerate(trunk.weights):
        r_tile = np.repeat(np.stack([fw.r[l] for fw in bank]), b, axis=0)
        s_tile = np.repeat(np.stack([fw.s[l] for fw in bank]), b, axis=0)
        z = ((h * r_tile) @ w) * s_tile
        h = np.maximum(z, 0.0) if l < last else z
    probs = _softmax(h)
    scores = _row_scores(probs, objective).reshape(k, b).sum(axis=1)
    return int(np.argmin(scores))


def batche_oneshot(trunk, bank, x, objective=ENTROPY, real_labels=None) -> int:
    """Single-gradient task inference over alpha-weighted rank-one modulations.

    The layer modulation is sum_i alpha_i r_i s_i' applied as W * (.); the
    returned index maximizes the negated objective gradient.
    """
    if not bank:
        raise InvalidStateError("cannot infer over an empty fast-weight bank")
    x = as_sample_matrix(x, n_features=trunk.weights[0].shape[0])
    k = len(bank)
    alpha = np.full(k, 1.0 / k)
    mods = []
    for l in range(len(trunk.weights)):
        acc = alpha[0] * np.outer(bank[0].r[l], bank[0].s[l])
        for i in range(1, k):
            acc += alpha[i] * np.outer(bank[i].r[l], bank[i].s[l])
        mods.append(acc)
    # forward with effective weights W * mod
    h = x
    inputs, pre = [], []
    last = len(trunk.weights) - 1
    for l, w in enumerate(trunk.weights):
        inputs.append(h)
        z = h @ (w * mods[l])
        pre.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
    probs = _softmax(pre[-1])
    batch = x.shape[0]
    if objective == ENTROPY:
        q = np.maximum(probs, 1e-12)
        logq = np.log(q)
        row_h = -(probs * logq).sum(axis=1)
        delta = -probs * (logq + row_h[:, None]) / batch
    else:
        if real_labels is None or real_labels >= probs.shape[1]:
            raise ConfigurationError("gsumexp objective needs real_labels < outputs")
        delta = probs.copy() / batch
        delta[:, :real_labels] = 0.0
    g = np.zeros(k)
    for l in range(len(trunk.weights) - 1, -1, -1):
        w = trunk.weights[l]
        d_eff = (inputs[l].T @ delta) * w
        for i in range(k):
            g[i] += float(np.sum(d_eff * np.outer(bank[i].r[l], bank[i].s[l])))
        if l > 0:
            w_eff = w * mods[l]
            delta = (delta @ w_eff.T) * (pre[l - 1] > 0.0)
    return int(np.argmax(-g))
