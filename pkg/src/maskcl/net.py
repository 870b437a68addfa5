"""Fixed random multilayer perceptron: construction, masked forward, manual backward.

The network weights are frozen at initialization and never trained. Every
learnable object in this package (score tensors, mask banks) modulates the
forward pass of one of these nets, so the forward and backward machinery
here is shared by mask training and by task-identity inference.

Weight entries are exactly +/- c_l where c_l = sqrt(2 / fan_in_l), the
standard deviation of the matching Kaiming normal distribution. Biases do
not exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, InvalidStateError
from .masks import LAYER_OUTPUTS, WEIGHTS, MaskBank, Supermask, combine_masks
from .validation import as_sample_matrix, check_simplex

RELU = "relu"
SWISH = "swish"

# Inference objectives. "entropy" is the output entropy H of the softmax
# probabilities; "gsumexp" is logsumexp over the logits whose gradient is
# routed only to the superfluous output neurons (those past real_labels).
ENTROPY = "entropy"
GSUMEXP = "gsumexp"
OBJECTIVES = (ENTROPY, GSUMEXP)

# Softmax can underflow to exactly 0 for large logit gaps; entropy terms
# are computed on probabilities floored at this value.
PROB_FLOOR = 1e-12

BN_EPS = 1e-5


@dataclass(frozen=True)
class NetConfig:
    """Shape, seeding, and masking mode of a frozen network.

    layer_dims runs input, hidden..., output. real_labels is the number of
    output neurons carrying actual classes; the remainder are superfluous
    neurons used only by the gsumexp objective.
    """

    layer_dims: tuple
    seed: int = 0
    nonlinearity: str = RELU
    mask_placement: str = WEIGHTS
    real_labels: int = None
    standardize_inputs: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigurationError("layer_dims needs at least input and output sizes")
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"layer sizes must be >= 1, got {dims}")
        if self.nonlinearity not in (RELU, SWISH):
            raise ConfigurationError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.mask_placement not in (WEIGHTS, LAYER_OUTPUTS):
            raise ConfigurationError(f"unknown mask placement {self.mask_placement!r}")
        ell = dims[-1] if self.real_labels is None else int(self.real_labels)
        object.__setattr__(self, "real_labels", ell)
        if not 1 <= ell <= dims[-1]:
            raise ConfigurationError(
                f"real_labels must lie in [1, {dims[-1]}], got {ell}"
            )
        if int(self.seed) < 0:
            raise ConfigurationError("seed must be a nonnegative integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_linear_layers(self):
        return len(self.layer_dims) - 1

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_size(self):
        return self.layer_dims[-1]

    def mask_shapes(self):
        """Expected shapes of one mask under this config's placement."""
        dims = self.layer_dims
        if self.mask_placement == WEIGHTS:
            return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        return [(dims[i + 1],) for i in range(len(dims) - 2)]


@dataclass
class FixedNet:
    """Frozen signed-constant weights plus the config that produced them."""

    config: NetConfig
    weights: tuple
    layer_constants: tuple

    @property
    def num_layers(self):
        return len(self.weights)


def build_fixed_net(config: NetConfig) -> FixedNet:
    """Draw the frozen weights: each entry +/- c_l with equal probability.

    Rebuilding from the same config reproduces the weights bit-identically.
    """
    rng = np.random.default_rng(config.seed)
    weights, constants = [], []
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        c = math.sqrt(2.0 / fan_in)
        signs = rng.integers(0, 2, size=(fan_in, fan_out)).astype(np.float64) * 2.0 - 1.0
        w = signs * c
        w.flags.writeable = False
        weights.append(w)
        constants.append(c)
    return FixedNet(config, tuple(weights), tuple(constants))


@dataclass
class ForwardCache:
    """Per-layer intermediates from one forward pass, enough to backprop.

    probs rows sum to one; logits are the raw final-layer outputs.
    """

    logits: np.ndarray
    probs: np.ndarray
    layer_inputs: list  # input to each linear layer, element 0 is the batch
    pre_acts: list  # z_l = h_l @ W_eff_l
    # layer_outputs placement only:
    bn_outs: list = None  # normalized pre-activations per hidden layer
    bn_inv_std: list = None
    masked_acts: list = None  # mask * bn output, the nonlinearity input


def _softmax(y):
    shifted = y - y.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _act(z, kind):
    if kind == RELU:
        return np.maximum(z, 0.0)
    return z * _sigmoid(z)  # swish with beta = 1


def _act_grad(z, kind):
    if kind == RELU:
        return (z > 0.0).astype(np.float64)
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _check_effective_layers(net, eff_layers):
    expected = net.config.mask_shapes()
    if len(eff_layers) != len(expected):
        raise DimensionError(
            f"got {len(eff_layers)} mask layers, net expects {len(expected)}"
        )
    for i, (arr, shape) in enumerate(zip(eff_layers, expected)):
        if np.shape(arr) != shape:
            raise DimensionError(
                f"mask layer {i} has shape {np.shape(arr)}, expected {shape}"
            )


def forward_effective(net: FixedNet, eff_layers, x) -> ForwardCache:
    """Forward pass with real-valued per-layer modulation arrays.

    This is the common core behind single-mask and superposed forwards; the
    modulation may be binary, a convex combination of binary masks, or the
    relaxed mask used during associative recovery.
    """
    _check_effective_layers(net, eff_layers)
    x = as_sample_matrix(x, n_features=net.config.input_dim)
    kind = net.config.nonlinearity
    if net.config.mask_placement == WEIGHTS:
        h = x
        layer_inputs, pre_acts = [], []
        last = net.num_layers - 1
        for l, w in enumerate(net.weights):
            layer_inputs.append(h)
            z = h @ (w * eff_layers[l])
            pre_acts.append(z)
            if l < last:
                h = _act(z, kind)
        logits = pre_acts[-1]
        return ForwardCache(logits, _softmax(logits), layer_inputs, pre_acts)

    # layer_outputs: linear -> non-affine batch norm -> mask -> nonlinearity
    # for every layer except the last, which stays a plain linear readout.
    h = x
    layer_inputs, pre_acts = [], []
    bn_outs, bn_inv_std, masked_acts = [], [], []
    last = net.num_layers - 1
    for l, w in enumerate(net.weights):
        layer_inputs.append(h)
        z = h @ w
        pre_acts.append(z)
        if l < last:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zb = (z - mean) * inv_std
            a = zb * eff_layers[l]
            bn_outs.append(zb)
            bn_inv_std.append(inv_std)
            masked_acts.append(a)
            h = _act(a, kind)
    logits = pre_acts[-1]
    return ForwardCache(
        logits, _softmax(logits), layer_inputs, pre_acts, bn_outs, bn_inv_std, masked_acts
    )


def forward_masked(net: FixedNet, mask: Supermask, x) -> ForwardCache:
    """Outputs of the net under a single binary mask: softmax(f(x, W * M))."""
    if mask.placement != net.config.mask_placement:
        raise DimensionError(
            f"mask placement {mask.placement!r} does not match net "
            f"placement {net.config.mask_placement!r}"
        )
    return forward_effective(net, mask.layers, x)


def forward_superposed(net: FixedNet, bank: MaskBank, x) -> ForwardCache:
    """Outputs under the alpha-weighted superposition of all bank masks."""
    if bank.k == 0:
        raise InvalidStateError("cannot forward through an empty mask bank")
    check_simplex(bank.alpha)
    return forward_effective(net, combine_masks(bank.masks, bank.alpha), x)


def objective_value_and_logit_grad(cache: ForwardCache, objective, real_labels):
    """Batch-mean objective value and its gradient with respect to the logits.

    For gsumexp the gradient on the first real_labels output columns is
    exactly zero; on the remaining columns it equals the softmax
    probabilities, which is also the supervised cross-entropy gradient on
    those neurons for any label among the real ones.
    """
    p = cache.probs
    batch = p.shape[0]
    if objective == ENTROPY:
        logq = np.log(np.maximum(p, PROB_FLOOR))
        row_entropy = -(p * logq).sum(axis=1)
        dlogits = -p * (logq + row_entropy[:, None]) / batch
        return float(row_entropy.mean()), dlogits
    if objective == GSUMEXP:
        s = p.shape[1]
        if real_labels >= s:
            raise ConfigurationError(
                f"gsumexp objective needs superfluous neurons: real_labels="
                f"{real_labels} leaves none out of {s} outputs"
            )
        y = cache.logits
        m = y.max(axis=1)
        rows = m + np.log(np.exp(y - m[:, None]).sum(axis=1))
        dlogits = p / batch
        dlogits[:, :real_labels] = 0.0
        return float(rows.mean()), dlogits
    raise ConfigurationError(f"unknown objective {objective!r}")


def cross_entropy_logit_grad(cache: ForwardCache, labels):
    """Mean cross-entropy over all output neurons and its logit gradient."""
    p = cache.probs
    batch = p.shape[0]
    picked = p[np.arange(batch), labels]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    dlogits = p.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    return loss, dlogits


def backward_mask_grads(net: FixedNet, cache: ForwardCache, eff_layers, dlogits):
    """Gradient of a scalar objective with respect to the effective mask.

    Under weights placement the per-layer result is dObj/dW_eff * W, the
    quantity contracted against binary masks for both straight-through
    score updates and alpha gradients. Under layer_outputs placement it is
    the gradient with respect to the per-layer mask vectors.
    """
    kind = net.config.nonlinearity
    if net.config.mask_placement == WEIGHTS:
        num = net.num_layers
        grads = [None] * num
        delta = dlogits
        for l in range(num - 1, -1, -1):
            grads[l] = (cache.layer_inputs[l].T @ delta) * net.weights[l]
            if l > 0:
                w_eff = net.weights[l] * eff_layers[l]
                delta = (delta @ w_eff.T) * _act_grad(cache.pre_acts[l - 1], kind)
        return grads

    hidden = net.num_layers - 1
    grads = [None] * hidden
    delta_h = dlogits @ net.weights[-1].T
    for l in range(hidden - 1, -1, -1):
        delta_a = delta_h * _act_grad(cache.masked_acts[l], kind)
        grads[l] = (delta_a * cache.bn_outs[l]).sum(axis=0)
        d_zb = delta_a * eff_layers[l]
        zb = cache.bn_outs[l]
        # backward through per-batch non-affine normalization
        d_z = cache.bn_inv_std[l] * (
            d_zb - d_zb.mean(axis=0) - zb * (d_zb * zb).mean(axis=0)
        )
        if l > 0:
            delta_h = d_z @ net.weights[l].T
    return grads


def grad_alpha(net: FixedNet, bank: MaskBank, x, objective) -> np.ndarray:
    """Raw partial derivatives of the objective with respect to each alpha.

    Computed by the chain rule through the superposition: component i is
    the contraction of the effective-mask gradient with mask i.
    """
    if bank.k == 0:
        raise InvalidStateError("cannot take alpha gradients over an empty bank")
    check_simplex(bank.alpha)
    return grad_alpha_raw(net, bank.masks, bank.alpha, x, objective)


def grad_alpha_raw(net, masks, alpha, x, objective):
    """grad_alpha without the simplex requirement on alpha."""
    eff = combine_masks(masks, alpha)
    cache = forward_effective(net, eff, x)
    _, dlogits = objective_value_and_logit_grad(cache, objective, net.config.real_labels)
    mask_grads = backward_mask_grads(net, cache, eff, dlogits)
    out = np.empty(len(masks), dtype=np.float64)
    for i, mask in enumerate(masks):
        out[i] = sum(
            float(np.sum(mask_grads[l] * mask.layers[l])) for l in range(len(mask_grads))
        )
    return out


def superposed_objective(net, masks, alpha, x, objective) -> float:
    """Objective value at an arbitrary raw alpha. Used for gradient checks."""
    eff = combine_masks(masks, np.asarray(alpha, dtype=np.float64))
    cache = forward_effective(net, eff, x)
    value, _ = objective_value_and_logit_grad(cache, objective, net.config.real_labels)
    return value


def predict_labels(net: FixedNet, mask: Supermask, x, num_classes=None):
    """Class predictions restricted to the first num_classes output neurons."""
    cache = forward_masked(net, mask, x)
    ell = net.config.real_labels if num_classes is None else num_classes
    return np.argmax(cache.logits[:, :ell], axis=1)
