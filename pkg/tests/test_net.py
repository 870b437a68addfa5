"""Frozen-net construction, masked forwards, and alpha gradients."""

import math

import numpy as np
import pytest

import maskcl
from maskcl import (
    ENTROPY,
    GSUMEXP,
    ConfigurationError,
    DimensionError,
    InvalidStateError,
    MaskBank,
    NetConfig,
    Supermask,
    build_fixed_net,
    combine_masks,
    forward_masked,
    forward_superposed,
    grad_alpha,
    superposed_objective,
)
from maskcl.net import forward_effective, grad_alpha_raw


def random_mask(net, seed):
    rng = np.random.default_rng(seed)
    return Supermask(
        [(rng.random(shape) < 0.5).astype(float) for shape in net.config.mask_shapes()],
        net.config.mask_placement,
    )


@pytest.fixture
def small_net():
    return build_fixed_net(NetConfig((20, 16, 12), seed=11, real_labels=5))


class TestBuildFixedNet:
    def test_deterministic_rebuild(self):
        cfg = NetConfig((30, 10, 8), seed=123)
        a = build_fixed_net(cfg)
        b = build_fixed_net(cfg)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_layer_constant_magnitude(self):
        net = build_fixed_net(NetConfig((784, 300, 100, 500), seed=0))
        # every entry is exactly +/- sqrt(2 / fan_in)
        assert net.layer_constants[0] == math.sqrt(2.0 / 784)
        for w, c in zip(net.weights, net.layer_constants):
            assert np.all(np.abs(w) == c)

    def test_sign_balance(self):
        net = build_fixed_net(NetConfig((300, 100, 10), seed=7))
        frac = float((net.weights[0] > 0).mean())
        assert 0.45 <= frac <= 0.55  # 30000 draws, far beyond binomial noise

    def test_no_zero_layer(self):
        with pytest.raises(ConfigurationError):
            NetConfig((20, 0, 5))

    def test_weights_read_only(self, small_net):
        with pytest.raises(ValueError):
            small_net.weights[0][0, 0] = 0.0


class TestForwardMasked:
    def test_all_ones_equals_unmasked(self, small_net):
        ones = Supermask([np.ones(s) for s in small_net.config.mask_shapes()])
        x = np.random.default_rng(0).random((4, 20))
        cache = forward_masked(small_net, ones, x)
        h = np.maximum(x @ small_net.weights[0], 0.0)
        logits = h @ small_net.weights[1]
        np.testing.assert_array_equal(cache.logits, logits)

    def test_all_zero_mask_gives_uniform(self, small_net):
        zeros = Supermask([np.zeros(s) for s in small_net.config.mask_shapes()])
        x = np.random.default_rng(1).random((3, 20))
        cache = forward_masked(small_net, zeros, x)
        assert np.all(cache.logits == 0.0)
        np.testing.assert_allclose(cache.probs, 1.0 / 12, atol=1e-15)

    def test_matches_explicit_product_oracle(self, small_net):
        mask = random_mask(small_net, 5)
        x = np.random.default_rng(2).random((6, 20))
        cache = forward_masked(small_net, mask, x)
        # oracle: materialize W * M and forward by hand
        h = np.maximum(x @ (small_net.weights[0] * mask.layers[0]), 0.0)
        logits = h @ (small_net.weights[1] * mask.layers[1])
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(cache.probs, p, atol=1e-12)

    def test_shape_mismatch(self, small_net):
        bad = Supermask([np.ones((20, 16)), np.ones((16, 13))])
        with pytest.raises(DimensionError):
            forward_masked(small_net, bad, np.zeros((1, 20)))

    def test_probability_rows_sum_to_one(self, small_net):
        mask = random_mask(small_net, 9)
        x = np.random.default_rng(3).random((8, 20))
        cache = forward_masked(small_net, mask, x)
        np.testing.assert_allclose(cache.probs.sum(axis=1), 1.0, atol=1e-6)


class TestForwardSuperposed:
    def test_single_mask_bank(self, small_net):
        mask = random_mask(small_net, 3)
        bank = MaskBank([mask], np.array([1.0]))
        x = np.random.default_rng(4).random((2, 20))
        a = forward_superposed(small_net, bank, x)
        b = forward_masked(small_net, mask, x)
        np.testing.assert_array_equal(a.probs, b.probs)

    @pytest.mark.parametrize("j", [0, 1, 2])
    def test_simplex_corner_reduces_to_single_mask(self, small_net, j):
        masks = [random_mask(small_net, 10 + i) for i in range(3)]
        alpha = np.zeros(3)
        alpha[j] = 1.0
        bank = MaskBank(masks, alpha)
        x = np.random.default_rng(5).random((4, 20))
        a = forward_superposed(small_net, bank, x)
        b = forward_masked(small_net, masks[j], x)
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)

    def test_uniform_superposition_matches_explicit_sum_oracle(self, small_net):
        masks = [random_mask(small_net, 20 + i) for i in range(3)]
        bank = MaskBank(masks)
        x = np.random.default_rng(6).random((4, 20))
        got = forward_superposed(small_net, bank, x)
        summed = [sum(m.layers[l] for m in masks) / 3.0 for l in range(2)]
        want = forward_effective(small_net, summed, x)
        np.testing.assert_allclose(got.probs, want.probs, atol=1e-12)

    def test_empty_bank_rejected(self, small_net):
        with pytest.raises((InvalidStateError, DimensionError)):
            forward_superposed(small_net, MaskBank([]), np.zeros((1, 20)))


def relu_kink_free(net, masks, alpha, x, h=1e-4):
    """True when no perturbed forward flips a ReLU sign, so FD is valid."""
    if net.config.nonlinearity != "relu":
        return True

    def signs(a):
        cache = forward_effective(net, combine_masks(masks, a), x)
        return [z > 0 for z in cache.pre_acts[:-1]]

    base = signs(alpha)
    for i in range(len(masks)):
        for direction in (h, -h):
            shifted = alpha.copy()
            shifted[i] += direction
            if any(
                not np.array_equal(sb, sp) for sb, sp in zip(base, signs(shifted))
            ):
                return False
    return True


def fd_gradient(net, masks, alpha, x, objective, h=1e-4):
    """Central finite differences of the raw (renormalization-free) objective.

    The gsumexp objective routes gradient only to the superfluous neurons,
    so its oracle holds the real-neuron logits fixed at the base point,
    mirroring the detached construction.
    """
    ell = net.config.real_labels
    if objective == GSUMEXP:
        base_logits = forward_effective(net, combine_masks(masks, alpha), x).logits

        def value(a):
            y = forward_effective(net, combine_masks(masks, a), x).logits.copy()
            y[:, :ell] = base_logits[:, :ell]
            m = y.max(axis=1)
            return float((m + np.log(np.exp(y - m[:, None]).sum(axis=1))).mean())

    else:

        def value(a):
            return superposed_objective(net, masks, a, x, objective)

    out = np.zeros(len(masks))
    for i in range(len(masks)):
        up = alpha.copy()
        down = alpha.copy()
        up[i] += h
        down[i] -= h
        out[i] = (value(up) - value(down)) / (2 * h)
    return out


class TestGradAlpha:
    def test_identical_masks_symmetric_gradient(self, small_net):
        mask = random_mask(small_net, 1)
        bank = MaskBank([mask, mask.copy()])
        x = np.random.default_rng(7).random((3, 20))
        g = grad_alpha(small_net, bank, x, ENTROPY)
        assert g[0] == g[1]

    @pytest.mark.parametrize("objective", [ENTROPY, GSUMEXP])
    def test_matches_finite_differences(self, objective):
        rng = np.random.default_rng(42)
        done = 0
        while done < 25:
            k = int(rng.integers(2, 6))
            net = build_fixed_net(NetConfig((9, 12, 8, 10), seed=done, real_labels=4))
            masks = [random_mask(net, 100 * done + i) for i in range(k)]
            alpha = rng.dirichlet(np.ones(k))
            x = rng.random((int(rng.integers(1, 5)), 9))
            if not relu_kink_free(net, masks, alpha, x):
                continue
            g = grad_alpha_raw(net, masks, alpha, x, objective)
            fd = fd_gradient(net, masks, alpha, x, objective)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4, f"instance {done}: relative error {rel}"
            done += 1

    def test_single_mask_one_dimensional_fd(self, small_net):
        mask = random_mask(small_net, 8)
        x = np.random.default_rng(8).random((2, 20))
        g = grad_alpha(small_net, MaskBank([mask], np.array([1.0])), x, ENTROPY)
        assert g.shape == (1,)
        fd = fd_gradient(small_net, [mask], np.array([1.0]), x, ENTROPY)
        assert abs(g[0] - fd[0]) / max(abs(fd[0]), 1e-12) < 1e-4

    def test_layer_outputs_placement_fd(self):
        cfg = NetConfig(
            (9, 14, 12, 6),
            seed=4,
            nonlinearity="swish",
            mask_placement="layer_outputs",
            real_labels=6,
        )
        net = build_fixed_net(cfg)
        rng = np.random.default_rng(3)
        masks = [random_mask(net, i) for i in range(3)]
        alpha = rng.dirichlet(np.ones(3))
        x = rng.random((6, 9))
        g = grad_alpha_raw(net, masks, alpha, x, ENTROPY)
        fd = fd_gradient(net, masks, alpha, x, ENTROPY)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
        assert rel < 1e-4
