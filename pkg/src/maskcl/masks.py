"""Binary masks over a fixed network, and banks of masks with mixing coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidStateError
from .validation import check_simplex

# Where a mask applies: every weight entry, or the output units of every
# layer except the last.
WEIGHTS = "weights"
LAYER_OUTPUTS = "layer_outputs"


@dataclass
class Supermask:
    """A binary mask, one array per maskable layer.

    Under ``weights`` placement the arrays match the weight matrices; under
    ``layer_outputs`` they are per-hidden-layer vectors.
    """

    layers: list[np.ndarray]
    placement: str = WEIGHTS

    def __post_init__(self):
        if self.placement not in (WEIGHTS, LAYER_OUTPUTS):
            raise DimensionError(f"unknown mask placement {self.placement!r}")
        coerced = []
        for i, layer in enumerate(self.layers):
            arr = np.asarray(layer, dtype=np.float64)
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise DimensionError(f"mask layer {i} has entries outside {{0, 1}}")
            coerced.append(arr)
        self.layers = coerced

    def sparsity(self):
        """Fraction of ones per layer."""
        return [float(layer.mean()) if layer.size else 0.0 for layer in self.layers]

    def ones_count(self):
        return [int(layer.sum()) for layer in self.layers]

    def copy(self):
        return Supermask([layer.copy() for layer in self.layers], self.placement)

    def __eq__(self, other):
        if not isinstance(other, Supermask):
            return NotImplemented
        return (
            self.placement == other.placement
            and len(self.layers) == len(other.layers)
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(self.layers, other.layers)
            )
        )


def uniform_alpha(k):
    """Mixing coefficients 1/k, the starting point of every inference run."""
    if k < 1:
        raise InvalidStateError("cannot build coefficients for an empty bank")
    return np.full(k, 1.0 / k, dtype=np.float64)


@dataclass
class MaskBank:
    """An ordered set of learned masks plus simplex coefficients alpha."""

    masks: list[Supermask]
    alpha: np.ndarray = None

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = uniform_alpha(len(self.masks)) if self.masks else np.zeros(0)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (len(self.masks),):
            raise DimensionError(
                f"alpha has length {self.alpha.size}, bank holds {len(self.masks)} masks"
            )
        if self.masks:
            check_simplex(self.alpha)
            first = self.masks[0]
            for i, m in enumerate(self.masks[1:], start=1):
                if m.placement != first.placement or [a.shape for a in m.layers] != [
                    a.shape for a in first.layers
                ]:
                    raise DimensionError(f"mask {i} is not shape-compatible with mask 0")

    @property
    def k(self):
        return len(self.masks)

    def with_uniform_alpha(self):
        return MaskBank(self.masks, uniform_alpha(self.k))


def combine_masks(masks, alpha):
    """Per-layer convex (or raw linear) combination sum_i alpha_i * M_i."""
    if not masks:
        raise InvalidStateError("cannot combine an empty mask list")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(masks),):
        raise DimensionError("alpha length does not match mask count")
    combined = []
    for layer_idx in range(len(masks[0].layers)):
        acc = alpha[0] * masks[0].layers[layer_idx]
        for i in range(1, len(masks)):
            acc = acc + alpha[i] * masks[i].layers[layer_idx]
        combined.append(acc)
    return combined
