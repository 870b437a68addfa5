"""Task-identity inference over a superposition of learned masks.

All algorithms start from uniform mixing coefficients and read the sign
structure of the objective's alpha gradient: the coordinate in which the
objective decreases fastest belongs to the mask trained on the data's task.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, InvalidStateError
from .masks import MaskBank, uniform_alpha
from .net import ENTROPY, GSUMEXP, FixedNet, grad_alpha_raw, _softmax
from .validation import check_probability_vector


def entropy(p) -> float:
    """Shannon entropy in nats with the 0 log 0 := 0 convention."""
    p = check_probability_vector(p)
    nonzero = p[p > 0.0]
    return float(-(nonzero * np.log(nonzero)).sum())


def g_objective(logits, real_labels) -> float:
    """logsumexp of the logits over all output neurons."""
    y = np.asarray(logits, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("logits must be a vector")
    if real_labels >= y.size:
        raise ConfigurationError(
            f"no superfluous neurons: real_labels={real_labels} of {y.size} outputs"
        )
    m = float(y.max())
    return m + math.log(np.exp(y - m).sum())


def g_objective_grad(logits, real_labels):
    """Gradient of g_objective: softmax on superfluous neurons, zero on real ones."""
    y = np.asarray(logits, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("logits must be a vector")
    if real_labels >= y.size:
        raise ConfigurationError(
            f"no superfluous neurons: real_labels={real_labels} of {y.size} outputs"
        )
    grad = _softmax(y[None, :])[0]
    grad[:real_labels] = 0.0
    return grad


def _negative_alpha_grad(net, masks, alpha, x, objective):
    return -grad_alpha_raw(net, masks, alpha, x, objective)


def one_shot(net: FixedNet, bank: MaskBank, x, objective=ENTROPY) -> int:
    """Infer the task from a single superposed gradient at uniform alpha.

    Returns argmax_i of the negated objective gradient; ties go to the
    lowest index.
    """
    if bank.k == 0:
        raise InvalidStateError("cannot infer over an empty bank")
    g = _negative_alpha_grad(net, bank.masks, uniform_alpha(bank.k), x, objective)
    return int(np.argmax(g))


def _lower_median(values):
    ordered = np.sort(values)
    return ordered[(ordered.size - 1) // 2]


def binary_infer(net: FixedNet, bank: MaskBank, x, objective=ENTROPY, return_trace=False):
    """Median-elimination inference: halve the surviving set each round.

    Survivors whose negated gradient is at or below the lower median are
    zeroed and alpha is renormalized, until a single coefficient remains.
    For k a power of two this takes exactly log2(k) superposed passes.
    """
    if bank.k == 0:
        raise InvalidStateError("cannot infer over an empty bank")
    alpha = uniform_alpha(bank.k)
    rounds = 0
    while int((alpha > 0.0).sum()) > 1:
        g = _negative_alpha_grad(net, bank.masks, alpha, x, objective)
        live = alpha > 0.0
        median = _lower_median(g[live])
        kill = live & (g <= median)
        if kill[live].all():
            # fully tied round: keep the lowest-index maximizer alive
            keep = int(np.argmax(np.where(live, g, -np.inf)))
            kill[keep] = False
        alpha[kill] = 0.0
        alpha /= alpha.sum()
        rounds += 1
    index = int(np.argmax(alpha))
    if return_trace:
        return index, rounds
    return index


def gamma_infer(net, bank, x, objective=ENTROPY, gamma_frac=0.5, return_trace=False):
    """Elimination inference keeping the top ceil(gamma * survivors) per round.

    gamma = 1/2 reproduces the median rule; gamma = 1/k collapses to the
    single-gradient rule.
    """
    if bank.k == 0:
        raise InvalidStateError("cannot infer over an empty bank")
    k = bank.k
    if not (1.0 / k - 1e-12 <= gamma_frac <= 0.5 + 1e-12):
        raise ConfigurationError(
            f"gamma_frac must lie in [1/k, 1/2] = [{1.0 / k}, 0.5], got {gamma_frac}"
        )
    alpha = uniform_alpha(k)
    survivor_counts = []
    while int((alpha > 0.0).sum()) > 1:
        g = _negative_alpha_grad(net, bank.masks, alpha, x, objective)
        live_idx = np.flatnonzero(alpha > 0.0)
        n_keep = max(1, math.ceil(gamma_frac * live_idx.size))
        ranked = live_idx[np.argsort(-g[live_idx], kind="stable")]
        keep = ranked[:n_keep]
        new_alpha = np.zeros_like(alpha)
        new_alpha[keep] = alpha[keep]
        alpha = new_alpha / new_alpha.sum()
        survivor_counts.append(int(n_keep))
    index = int(np.argmax(alpha))
    if return_trace:
        return index, survivor_counts
    return index


def alpha_descent(net, bank, x, objective=ENTROPY, eta=1e3, steps=20):
    """Projected gradient descent on alpha: step, clip at zero, renormalize.

    Returns the final simplex vector. If a step clips every coefficient to
    zero, alpha resets to uniform and a warning is emitted.
    """
    if bank.k == 0:
        raise InvalidStateError("cannot descend over an empty bank")
    if eta <= 0:
        raise ConfigurationError(f"step size must be positive, got {eta}")
    alpha = uniform_alpha(bank.k)
    for _ in range(steps):
        g = grad_alpha_raw(net, bank.masks, alpha, x, objective)
        alpha = np.maximum(alpha - eta * g, 0.0)
        total = alpha.sum()
        if total == 0.0:
            warnings.warn("alpha collapsed to zero after clipping; reset to uniform")
            alpha = uniform_alpha(bank.k)
        else:
            alpha /= total
    return alpha


@dataclass
class AllocationDecision:
    """Outcome of the uncertainty test at a decision point."""

    allocate_new: bool
    mask_index: int  # argmax of nu; meaningful even when allocating
    nu: np.ndarray


def nns_decision(g, k, epsilon=0.125) -> AllocationDecision:
    """Allocate a new mask when softmax(-g) is close to uniform.

    nu = softmax(-g); a new mask is requested iff k * max(nu) < 1 + epsilon
    (strictly), otherwise the argmax mask is used.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (k,):
        raise DimensionError(f"gradient has length {g.size}, expected k={k}")
    nu = _softmax(-g[None, :])[0]
    allocate = bool(k * nu.max() < 1.0 + epsilon)
    return AllocationDecision(allocate, int(np.argmax(nu)), nu)
