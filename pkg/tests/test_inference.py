"""Objectives, elimination algorithms, descent, and the allocation criterion."""

import math

import numpy as np
import pytest

import maskcl
from maskcl import (
    ENTROPY,
    GSUMEXP,
    ConfigurationError,
    DomainError,
    MaskBank,
    NetConfig,
    Supermask,
    alpha_descent,
    binary_infer,
    build_fixed_net,
    entropy,
    g_objective,
    g_objective_grad,
    gamma_infer,
    nns_decision,
    one_shot,
)
from maskcl.net import forward_masked


def random_mask(net, seed):
    rng = np.random.default_rng(seed)
    return Supermask(
        [(rng.random(shape) < 0.5).astype(float) for shape in net.config.mask_shapes()],
        net.config.mask_placement,
    )


@pytest.fixture(scope="module")
def trained_suite():
    """Five separable tasks with one trained mask each."""
    tasks = maskcl.make_synthetic(5, 64, 4, seed=8)
    net = build_fixed_net(NetConfig((64, 64, 64, 40), seed=1, real_labels=4))
    masks = [
        maskcl.train_task(
            net, task, steps=400, batch_size=64, lr=5e-4,
            init=maskcl.default_score_init(net, seed=[1, t]), seed=[1, 50 + t],
        )
        for t, task in enumerate(tasks)
    ]
    return net, tasks, masks


def min_entropy_oracle(net, masks, x):
    """Exhaustive scan: forward each mask and pick the lowest mean entropy."""
    values = []
    for mask in masks:
        probs = forward_masked(net, mask, x).probs
        values.append(np.mean([entropy(row) for row in probs]))
    return int(np.argmin(values)), np.sort(values)


class TestEntropy:
    def test_uniform_over_four(self):
        assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)

    def test_one_hot_is_zero(self):
        assert entropy(np.array([0.0, 1.0, 0.0])) == 0.0

    def test_half_half(self):
        assert entropy(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_negative_entries_rejected(self):
        with pytest.raises(DomainError):
            entropy(np.array([1.1, -0.1]))

    def test_non_normalized_rejected(self):
        with pytest.raises(DomainError):
            entropy(np.array([0.4, 0.4]))


class TestGObjective:
    def test_zero_logits_value(self):
        y = np.zeros(7)
        assert g_objective(y, 3) == pytest.approx(math.log(7), abs=1e-12)

    def test_gradient_zero_on_real_neurons(self):
        y = np.random.default_rng(0).normal(size=9)
        grad = g_objective_grad(y, 4)
        assert np.all(grad[:4] == 0.0)

    def test_gradient_matches_analytic_softmax_and_ce(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            y = rng.normal(scale=3.0, size=11)
            ell = int(rng.integers(1, 10))
            grad = g_objective_grad(y, ell)
            # analytic cross-entropy gradient for any label below ell
            p = np.exp(y - y.max())
            p /= p.sum()
            label = int(rng.integers(0, ell))
            ce_grad = p.copy()
            ce_grad[label] -= 1.0
            np.testing.assert_allclose(grad[ell:], ce_grad[ell:], rtol=1e-12)
            np.testing.assert_allclose(grad[ell:], p[ell:], rtol=1e-12)

    def test_no_superfluous_neurons_rejected(self):
        with pytest.raises(ConfigurationError):
            g_objective(np.zeros(5), 5)


class TestOneShot:
    def test_single_mask_returns_zero(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank([masks[0]])
        assert one_shot(net, bank, tasks[0].test_x[:1]) == 0

    def test_duplicate_bank_tie_breaks_low(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank([masks[2], masks[2].copy()])
        assert one_shot(net, bank, tasks[2].test_x[:1]) == 0

    @pytest.mark.parametrize("objective", [ENTROPY, GSUMEXP])
    def test_agrees_with_min_entropy_oracle(self, trained_suite, objective):
        net, tasks, masks = trained_suite
        bank = MaskBank(masks)
        rng = np.random.default_rng(2)
        agree = total = 0
        for trial in range(60):
            t = trial % 5
            i = rng.integers(0, tasks[t].test_x.shape[0])
            x = tasks[t].test_x[i : i + 1]
            oracle, values = min_entropy_oracle(net, masks, x)
            if values[1] - values[0] < 0.1:
                continue  # ambiguous probe, oracle itself not trustworthy
            total += 1
            agree += one_shot(net, bank, x, objective) == oracle
        assert total >= 30
        assert agree / total >= 0.9


class TestBinaryInfer:
    def test_single_mask_zero_rounds(self, trained_suite):
        net, tasks, masks = trained_suite
        index, rounds = binary_infer(
            net, MaskBank([masks[0]]), tasks[0].test_x[:1], return_trace=True
        )
        assert (index, rounds) == (0, 0)

    def test_power_of_two_round_counts(self, trained_suite):
        net, tasks, masks = trained_suite
        rng = np.random.default_rng(3)
        for k in (1, 2, 4):
            bank = MaskBank([random_mask(net, 300 + i) for i in range(k)])
            x = tasks[0].test_x[:1]
            _, rounds = binary_infer(net, bank, x, return_trace=True)
            assert rounds == math.ceil(math.log2(k)) if k > 1 else rounds == 0

    def test_agrees_with_oracle_on_separable_tasks(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank(masks)
        rng = np.random.default_rng(4)
        agree = total = 0
        for trial in range(50):
            t = trial % 5
            i = rng.integers(0, tasks[t].test_x.shape[0])
            x = tasks[t].test_x[i : i + 1]
            oracle, values = min_entropy_oracle(net, masks, x)
            if values[1] - values[0] < 0.1:
                continue
            total += 1
            agree += binary_infer(net, bank, x) == oracle
        assert agree / total >= 0.9


class TestGammaInfer:
    def test_half_matches_binary(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank([random_mask(net, 400 + i) for i in range(8)])
        rng = np.random.default_rng(5)
        for trial in range(5):
            x = rng.random((1, 64))
            assert gamma_infer(net, bank, x, gamma_frac=0.5) == binary_infer(net, bank, x)

    def test_one_over_k_matches_one_shot(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank(masks)
        rng = np.random.default_rng(6)
        for trial in range(5):
            x = rng.random((1, 64))
            assert gamma_infer(net, bank, x, gamma_frac=1.0 / 5) == one_shot(net, bank, x)

    def test_quarter_retention_schedule(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank([random_mask(net, 500 + i) for i in range(16)])
        x = tasks[1].test_x[:1]
        _, survivors = gamma_infer(net, bank, x, gamma_frac=0.25, return_trace=True)
        # ceil(0.25 * n) retention: 16 -> 4 -> 1, at most 4 rounds
        assert survivors == [4, 1]
        assert len(survivors) <= 4

    def test_gamma_out_of_range(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank(masks)
        with pytest.raises(ConfigurationError):
            gamma_infer(net, bank, tasks[0].test_x[:1], gamma_frac=0.6)
        with pytest.raises(ConfigurationError):
            gamma_infer(net, bank, tasks[0].test_x[:1], gamma_frac=0.05)


class TestAlphaDescent:
    def test_zero_steps_uniform(self, trained_suite):
        net, tasks, masks = trained_suite
        alpha = alpha_descent(net, MaskBank(masks), tasks[0].test_x[:1], steps=0)
        np.testing.assert_allclose(alpha, 0.2, atol=1e-15)

    def test_single_mask_stays_one(self, trained_suite):
        net, tasks, masks = trained_suite
        alpha = alpha_descent(net, MaskBank([masks[0]]), tasks[0].test_x[:1], steps=5)
        np.testing.assert_allclose(alpha, [1.0], atol=1e-15)

    def test_simplex_preserved_each_run(self, trained_suite):
        net, tasks, masks = trained_suite
        rng = np.random.default_rng(7)
        for trial in range(5):
            x = tasks[trial % 5].test_x[trial : trial + 1]
            alpha = alpha_descent(net, MaskBank(masks), x, eta=50.0, steps=8)
            assert alpha.min() >= 0.0
            assert abs(alpha.sum() - 1.0) <= 1e-9

    def test_argmax_matches_oracle(self, trained_suite):
        net, tasks, masks = trained_suite
        bank = MaskBank(masks)
        rng = np.random.default_rng(8)
        agree = total = 0
        for trial in range(30):
            t = trial % 5
            i = rng.integers(0, tasks[t].test_x.shape[0])
            x = tasks[t].test_x[i : i + 1]
            oracle, values = min_entropy_oracle(net, masks, x)
            if values[1] - values[0] < 0.1:
                continue
            total += 1
            alpha = alpha_descent(net, bank, x, eta=1e3, steps=20)
            agree += int(np.argmax(alpha)) == oracle
        assert agree / total >= 0.9


class TestNnsDecision:
    def test_identical_gradient_allocates(self):
        decision = nns_decision(np.full(6, 0.37), 6, epsilon=0.125)
        np.testing.assert_allclose(decision.nu, 1.0 / 6, atol=1e-12)
        assert decision.allocate_new

    def test_confident_belief_uses_mask(self):
        nu = np.array([0.97, 0.01, 0.01, 0.01])
        g = -np.log(nu)  # softmax(-g) reproduces nu
        decision = nns_decision(g, 4, epsilon=0.125)
        np.testing.assert_allclose(decision.nu, nu, atol=1e-12)
        # 4 * 0.97 = 3.88 >= 1.125
        assert not decision.allocate_new
        assert decision.mask_index == 0

    def test_boundary_is_strict(self):
        # craft nu with k * max(nu) == 1 + epsilon exactly
        k, eps = 2, 0.125
        top = (1 + eps) / k
        nu = np.array([top, 1 - top])
        decision = nns_decision(-np.log(nu), k, epsilon=eps)
        assert k * decision.nu.max() == pytest.approx(1 + eps, abs=1e-12)
        assert not decision.allocate_new

    def test_nu_on_simplex(self):
        g = np.random.default_rng(0).normal(size=5)
        decision = nns_decision(g, 5)
        assert decision.nu.min() >= 0
        assert abs(decision.nu.sum() - 1.0) <= 1e-9
