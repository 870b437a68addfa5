"""Constant-size associative storage of layer-output masks.

Masks are converted to spin vectors z = 2m - 1 and written into a
symmetric coupling matrix with either the Hebbian or the Storkey rule. A
running mean of the stored spins seeds recovery, which descends a
time-scheduled blend of the coupling energy and the output entropy of the
masked network.

The energy is implemented as E(z) = -z' Psi z so that stored patterns are
minima under both update rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidStateError
from .masks import LAYER_OUTPUTS, Supermask
from .net import (
    ENTROPY,
    FixedNet,
    backward_mask_grads,
    forward_effective,
    objective_value_and_logit_grad,
)


@dataclass
class HopfieldStore:
    """Symmetric couplings, running mean of stored spins, and pattern count."""

    psi: np.ndarray
    mu: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros((d, d)), np.zeros(d), 0)

    @property
    def d(self):
        return self.mu.size


def _check_spins(store, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (store.d,):
        raise DimensionError(f"pattern has length {z.size}, store expects {store.d}")
    if not np.all(np.abs(z) == 1.0):
        raise DimensionError("pattern entries must be exactly -1 or +1")
    return z


def hebbian_update(store: HopfieldStore, z) -> HopfieldStore:
    """Psi += z z' / d and bump the pattern count."""
    z = _check_spins(store, z)
    store.psi += np.outer(z, z) / store.d
    store.count += 1
    return store


def storkey_update(store: HopfieldStore, z) -> HopfieldStore:
    """Psi += (z z' - z (Psi z)' - (Psi z) z' - Id) / d; symmetric increment."""
    z = _check_spins(store, z)
    h = store.psi @ z
    d = store.d
    cross = np.outer(z, h)
    # grouping the two cross terms first keeps the update bit-exactly symmetric
    store.psi += (np.outer(z, z) - (cross + cross.T) - np.eye(d)) / d
    store.count += 1
    return store


def update_mean(store: HopfieldStore, z) -> HopfieldStore:
    """mu <- ((k-1)/k) mu + z/k, called after the count was incremented."""
    z = _check_spins(store, z)
    k = store.count
    if k < 1:
        raise InvalidStateError("update_mean expects a post-increment count >= 1")
    store.mu *= (k - 1) / k
    store.mu += z / k
    return store


def store_pattern(store: HopfieldStore, z, rule="storkey") -> HopfieldStore:
    """Write one spin pattern: coupling update followed by the mean update."""
    if rule == "storkey":
        storkey_update(store, z)
    elif rule == "hebbian":
        hebbian_update(store, z)
    else:
        raise InvalidStateError(f"unknown learning rule {rule!r}")
    return update_mean(store, z)


def energy(store: HopfieldStore, z) -> float:
    """E(z) = -z' Psi z. Stored patterns sit at minima."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (store.d,):
        raise DimensionError(f"vector has length {z.size}, store expects {store.d}")
    return float(-(z @ store.psi @ z))


def energy_grad(store: HopfieldStore, z):
    """Gradient of the energy; Psi is kept exactly symmetric so this is -2 Psi z."""
    z = np.asarray(z, dtype=np.float64)
    return -2.0 * (store.psi @ z)


def mask_to_spins(mask: Supermask):
    """Concatenate the per-layer vectors in network order as spins 2m - 1."""
    if mask.placement != LAYER_OUTPUTS:
        raise DimensionError("only layer-output masks can be stored as spins")
    return np.concatenate([2.0 * layer - 1.0 for layer in mask.layers])


def spins_to_mask(z, layer_widths) -> Supermask:
    """Binarize spins by sign (ties to +1) and split into layer vectors."""
    z = np.asarray(z, dtype=np.float64)
    if z.size != sum(layer_widths):
        raise DimensionError(
            f"spin vector length {z.size} does not match widths {layer_widths}"
        )
    bits = (z >= 0.0).astype(np.float64)
    layers, start = [], 0
    for w in layer_widths:
        layers.append(bits[start : start + w])
        start += w
    return Supermask(layers, LAYER_OUTPUTS)


def _split_mask_vector(m, layer_widths):
    layers, start = [], 0
    for w in layer_widths:
        layers.append(m[start : start + w])
        start += w
    return layers


@dataclass
class RecoveryResult:
    mask: Supermask
    spins: np.ndarray
    diverged: bool = False


def recovery_step(
    store,
    net,
    z,
    velocity,
    x,
    energy_coef,
    entropy_coef,
    lr,
    momentum=0.9,
    weight_decay=1e-4,
):
    """One momentum-SGD step on energy_coef * E(z) + entropy_coef * H(p).

    Returns the updated (z, velocity). The mask applied to the net is
    m = (z + 1) / 2, kept real-valued during recovery.
    """
    hidden = _hidden_widths(net)
    m_layers = _split_mask_vector((z + 1.0) / 2.0, hidden)
    grad = energy_coef * energy_grad(store, z)
    if entropy_coef != 0.0:
        cache = forward_effective(net, m_layers, x)
        _, dlogits = objective_value_and_logit_grad(
            cache, ENTROPY, net.config.real_labels
        )
        mask_grads = backward_mask_grads(net, cache, m_layers, dlogits)
        # dm/dz = 1/2 from the spin-to-mask map
        grad = grad + entropy_coef * 0.5 * np.concatenate(mask_grads)
    grad = grad + weight_decay * z
    velocity = momentum * velocity + grad
    z = z - lr * velocity
    return z, velocity


def _hidden_widths(net: FixedNet):
    return list(net.config.layer_dims[1:-1])


def recover_mask(
    store: HopfieldStore,
    net: FixedNet,
    batches,
    steps=30,
    gamma=1.5e-3,
    lr=500.0,
    momentum=0.9,
    weight_decay=1e-4,
) -> RecoveryResult:
    """Recover a stored mask from unlabeled batches of one task.

    Starts from the running mean, then for t = 1..steps descends
    (gamma t / T) E(z) + (1 - t / T) H(p) with momentum SGD, one batch per
    step (cycling if the batch list is shorter). The coupling term ramps up
    while the entropy term ramps down, so the end state sits at a stored
    attractor. The returned mask is the sign binarization of z.

    After every step z (and the velocity with it) is rescaled back to the
    norm-sqrt(d) sphere where every true spin vector lives; without this
    the quadratic energy grows the norm without bound, which would drown
    the entropy term and defeat the divergence check. A step whose raw
    result escapes 10 sqrt(d) is flagged as diverged.
    """
    if store.count == 0:
        raise InvalidStateError("cannot recover from an empty store")
    hidden = _hidden_widths(net)
    if net.config.mask_placement != LAYER_OUTPUTS:
        raise DimensionError("recovery needs a layer-output masked net")
    if sum(hidden) != store.d:
        raise DimensionError(
            f"store dimension {store.d} does not match hidden widths {hidden}"
        )
    z = store.mu.copy()
    if steps == 0:
        return RecoveryResult(spins_to_mask(z, hidden), z)
    batches = list(batches)
    if not batches:
        raise InvalidStateError("recovery needs at least one batch")
    velocity = np.zeros_like(z)
    limit = 10.0 * math.sqrt(store.d)
    sphere = math.sqrt(store.d)
    diverged = False
    for t in range(1, steps + 1):
        x = batches[(t - 1) % len(batches)]
        z, velocity = recovery_step(
            store,
            net,
            z,
            velocity,
            x,
            energy_coef=gamma * t / steps,
            entropy_coef=1.0 - t / steps,
            lr=lr,
            momentum=momentum,
            weight_decay=weight_decay,
        )
        norm = float(np.linalg.norm(z))
        if not np.isfinite(norm) or norm > limit:
            diverged = True
            break
        if norm > 0.0:
            factor = sphere / norm
            z *= factor
            velocity *= factor
    return RecoveryResult(spins_to_mask(z, hidden), z, diverged)


def nearest_pattern(patterns, mask: Supermask) -> int:
    """Index of the stored spin pattern closest in Hamming distance."""
    z = mask_to_spins(mask)
    distances = [int(np.sum(p != z)) for p in patterns]
    return int(np.argmin(distances))
