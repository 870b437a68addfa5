"""Scenario runners and the evaluation protocol.

Three runners cover the identity regimes: gg (identity given at train and
test), gnu (given at train only, inferred per test batch), and nns (never
given; masks are allocated on detected novelty). Evaluation applies the
zero-on-wrong-task rule: a batch whose task was mis-inferred scores zero.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .data import stream_batches
from .errors import ConfigurationError
from .inference import (
    alpha_descent,
    binary_infer,
    gamma_infer,
    nns_decision,
    one_shot,
)
from .masks import MaskBank, Supermask, uniform_alpha
from .net import (
    ENTROPY,
    GSUMEXP,
    FixedNet,
    NetConfig,
    build_fixed_net,
    forward_masked,
    grad_alpha_raw,
)
from .serialization import storage_report
from .training import (
    THRESHOLD0,
    RmspropState,
    ScoreTensor,
    binarize,
    default_score_init,
    rmsprop_step,
    score_gradient,
    train_task,
    transfer_init,
)

GG = "gg"
GNU = "gnu"
NNS = "nns"
HOPFIELD = "hopfield"
ABATCHE = "abatche"

ONE_SHOT = "one_shot"
BINARY = "binary"
GAMMA = "gamma"
ALPHA_DESCENT = "alpha_descent"

SINGLE_IMAGE = "single_image"
FULL_BATCH = "full_batch"

CSV_HEADER = ["task", "accuracy", "id_accuracy", "masks", "bytes", "seconds"]


@dataclass
class ScenarioConfig:
    """Everything a runner needs beyond the task list."""

    scenario: str = GNU
    hidden_dims: tuple = (300, 100)
    output_size: int = 100
    nonlinearity: str = "relu"
    objective: str = ENTROPY
    infer_alg: str = ONE_SHOT
    granularity: str = SINGLE_IMAGE
    steps_per_task: int = 1000
    batch_size: int = 128
    lr: float = 1e-4
    rho: float = 0.99
    eps_opt: float = 1e-8
    mask_rule: str = THRESHOLD0
    keep_frac: float = None
    transfer: bool = False
    shared_labels: bool = False
    gamma_frac: float = 0.5
    alpha_eta: float = 1e3
    alpha_steps: int = 20
    epsilon: float = 0.125  # 2**-3, the novelty threshold
    cadence: int = 100
    mask_budget: int = 2500
    seed: int = 0
    # associative-recovery settings
    hop_steps: int = 30
    hop_gamma: float = 1.5e-3
    hop_lr: float = 500.0
    hop_momentum: float = 0.9
    hop_weight_decay: float = 1e-4
    hop_batch: int = 64
    hop_rule: str = "storkey"

    def __post_init__(self):
        if self.scenario not in (GG, GNU, NNS, HOPFIELD, ABATCHE):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.infer_alg not in (ONE_SHOT, BINARY, GAMMA, ALPHA_DESCENT):
            raise ConfigurationError(f"unknown inference algorithm {self.infer_alg!r}")
        if self.objective not in (ENTROPY, GSUMEXP, "max_conf"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.scenario in (GG, GNU, NNS) and self.objective == "max_conf":
            raise ConfigurationError(
                "max_conf only scores the replicated-batch baseline"
            )
        if self.granularity not in (SINGLE_IMAGE, FULL_BATCH):
            raise ConfigurationError(f"unknown granularity {self.granularity!r}")
        if self.scenario == NNS and self.infer_alg != ONE_SHOT:
            raise ConfigurationError(
                "the nns scenario defines its novelty criterion on the "
                "one_shot gradient; other inference algorithms do not apply"
            )
        if self.steps_per_task < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch size >= 1")
        if self.mask_budget < 1:
            raise ConfigurationError("mask budget must be at least 1")


@dataclass
class MetricsRecord:
    """Per-run metrics; the CSV schema is task,accuracy,id_accuracy,masks,bytes,seconds."""

    per_task_accuracy: list
    per_task_id_accuracy: list
    masks_allocated: int
    bytes_stored: int
    seconds: float = 0.0
    budget_exhausted: bool = False

    @property
    def mean_accuracy(self):
        return float(np.mean(self.per_task_accuracy)) if self.per_task_accuracy else 0.0

    @property
    def id_accuracy(self):
        return (
            float(np.mean(self.per_task_id_accuracy))
            if self.per_task_id_accuracy
            else 0.0
        )

    def to_csv(self, include_timing=False) -> str:
        """RFC-4180 rows, one per task plus a mean row.

        Timing is zeroed unless requested, keeping the bytes of the file a
        pure function of the run inputs.
        """
        seconds = self.seconds if include_timing else 0.0
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(CSV_HEADER)
        for t, (acc, ida) in enumerate(
            zip(self.per_task_accuracy, self.per_task_id_accuracy)
        ):
            writer.writerow(
                [
                    t,
                    f"{acc:.6f}",
                    f"{ida:.6f}",
                    self.masks_allocated,
                    self.bytes_stored,
                    f"{seconds:.3f}",
                ]
            )
        writer.writerow(
            [
                "mean",
                f"{self.mean_accuracy:.6f}",
                f"{self.id_accuracy:.6f}",
                self.masks_allocated,
                self.bytes_stored,
                f"{seconds:.3f}",
            ]
        )
        return out.getvalue()


def build_net_for_tasks(config: ScenarioConfig, tasks) -> FixedNet:
    input_dim = tasks[0].train_x.shape[1]
    ell = max(task.num_classes for task in tasks)
    net_config = NetConfig(
        (input_dim, *config.hidden_dims, config.output_size),
        seed=config.seed,
        nonlinearity=config.nonlinearity,
        real_labels=ell,
    )
    return build_fixed_net(net_config)


def train_mask_sequence(net: FixedNet, tasks, config: ScenarioConfig):
    """One mask per task in order, optionally warm-started from the mean."""
    masks = []
    for t, task in enumerate(tasks):
        if config.transfer and masks:
            init = transfer_init(
                masks, net, seed=[config.seed, t], rule=config.mask_rule,
                keep_frac=config.keep_frac,
            )
        else:
            init = default_score_init(
                net, seed=[config.seed, t], rule=config.mask_rule,
                keep_frac=config.keep_frac,
            )
        masks.append(
            train_task(
                net,
                task,
                config.steps_per_task,
                batch_size=config.batch_size,
                lr=config.lr,
                rho=config.rho,
                eps_opt=config.eps_opt,
                init=init,
                seed=[config.seed, 1000 + t],
            )
        )
    return masks


def mask_accuracy(net: FixedNet, mask: Supermask, task, batch_size=128) -> float:
    """Test accuracy with one mask, predicting over the task's classes."""
    total = task.test_x.shape[0]
    correct = 0
    for start in range(0, total, batch_size):
        x = task.test_x[start : start + batch_size]
        y = task.test_y[start : start + batch_size]
        cache = forward_masked(net, mask, x)
        pred = np.argmax(cache.logits[:, : task.num_classes], axis=1)
        correct += int((pred == y).sum())
    return correct / total


class MaskBankModel:
    """Adapter exposing (infer, classify) over a trained bank, for evaluate()."""

    def __init__(self, net, masks, config: ScenarioConfig, class_counts=None):
        self.net = net
        self.masks = list(masks)
        self.config = config
        self.class_counts = class_counts

    def infer(self, x) -> int:
        bank = MaskBank(self.masks, uniform_alpha(len(self.masks)))
        cfg = self.config
        if cfg.infer_alg == ONE_SHOT:
            return one_shot(self.net, bank, x, cfg.objective)
        if cfg.infer_alg == BINARY:
            return binary_infer(self.net, bank, x, cfg.objective)
        if cfg.infer_alg == GAMMA:
            return gamma_infer(self.net, bank, x, cfg.objective, cfg.gamma_frac)
        alpha = alpha_descent(
            self.net, bank, x, cfg.objective, cfg.alpha_eta, cfg.alpha_steps
        )
        return int(np.argmax(alpha))

    def classify(self, x, task_index):
        ell = (
            self.class_counts[task_index]
            if self.class_counts is not None
            else self.net.config.real_labels
        )
        cache = forward_masked(self.net, self.masks[task_index], x)
        return np.argmax(cache.logits[:, :ell], axis=1)


def evaluate(model, tasks, granularity=SINGLE_IMAGE, batch_size=128, shared_labels=False):
    """Zero-on-wrong-task evaluation, task identity inferred once per batch.

    Returns (per-task accuracy, per-task inference accuracy). With shared
    labels the chosen mask's predictions are scored directly and no batch
    is zeroed.
    """
    per_task_acc, per_task_id = [], []
    for t, task in enumerate(tasks):
        total = task.test_x.shape[0]
        correct = 0
        id_hits = 0
        batches = 0
        for start in range(0, total, batch_size):
            x = task.test_x[start : start + batch_size]
            y = task.test_y[start : start + batch_size]
            probe = x[:1] if granularity == SINGLE_IMAGE else x
            chosen = model.infer(probe)
            batches += 1
            if chosen == t:
                id_hits += 1
            if shared_labels:
                correct += int((model.classify(x, chosen) == y).sum())
            elif chosen == t:
                correct += int((model.classify(x, t) == y).sum())
        per_task_acc.append(correct / total)
        per_task_id.append(id_hits / batches)
    return per_task_acc, per_task_id


def run_gg(config: ScenarioConfig, tasks, artifacts=None) -> MetricsRecord:
    """Train one mask per task and evaluate each task with its own mask."""
    start = time.monotonic()
    net = build_net_for_tasks(config, tasks)
    masks = train_mask_sequence(net, tasks, config)
    if artifacts is not None:
        artifacts.update(net=net, masks=masks)
    accuracies = [
        mask_accuracy(net, mask, task, config.batch_size)
        for mask, task in zip(masks, tasks)
    ]
    report = storage_report(masks)
    return MetricsRecord(
        accuracies,
        [1.0] * len(tasks),
        len(masks),
        report.total_bytes,
        time.monotonic() - start,
    )


def run_gnu(config: ScenarioConfig, tasks, artifacts=None) -> MetricsRecord:
    """Train as in gg, then evaluate with per-batch task inference."""
    start = time.monotonic()
    net = build_net_for_tasks(config, tasks)
    masks = train_mask_sequence(net, tasks, config)
    if artifacts is not None:
        artifacts.update(net=net, masks=masks)
    model = MaskBankModel(net, masks, config, [t.num_classes for t in tasks])
    acc, ids = evaluate(
        model, tasks, config.granularity, config.batch_size, config.shared_labels
    )
    report = storage_report(masks)
    return MetricsRecord(
        acc, ids, len(masks), report.total_bytes, time.monotonic() - start
    )


def _fresh_scores(net, config, counter):
    return default_score_init(
        net,
        seed=[config.seed, 7000, counter],
        rule=config.mask_rule,
        keep_frac=config.keep_frac,
    )


@dataclass
class _TrainableMask:
    scores: ScoreTensor
    state: RmspropState
    born_at_task: int  # stream position when allocated, for id bookkeeping


def run_nns(config: ScenarioConfig, tasks, decision_hook=None, artifacts=None) -> MetricsRecord:
    """Boundary-free stream: allocate masks on detected novelty and keep training.

    Every `cadence` batches the negated objective gradient over the current
    bank is softmaxed into a belief vector; near-uniform beliefs trigger a
    new mask, otherwise training continues on the most plausible one. The
    budget refuses allocations past it and flags the record. A decision
    hook, when given, replaces the built-in criterion (used by boundary-
    oracle tests).

    With a single learned mask the belief vector is uniform by construction
    and carries no signal, so the criterion is applied against a fresh
    candidate mask instead; novel data then still triggers growth while
    a steady stream keeps the one mask.
    """
    start = time.monotonic()
    net = build_net_for_tasks(config, tasks)
    entries: list[_TrainableMask] = []
    active = -1
    alloc_counter = 0
    budget_exhausted = False
    batches_per_task = config.steps_per_task
    batch_iter = stream_batches(tasks, batches_per_task, config.batch_size, config.seed)

    def allocate(counter, position):
        entry = _TrainableMask(
            _fresh_scores(net, config, counter),
            None,
            position // batches_per_task,
        )
        entry.state = RmspropState.for_scores(
            entry.scores, rho=config.rho, eps=config.eps_opt, lr=config.lr
        )
        entries.append(entry)
        return len(entries) - 1

    for position, (x, y) in enumerate(batch_iter):
        if position % config.cadence == 0:
            if not entries:
                active = allocate(alloc_counter, position)
                alloc_counter += 1
            else:
                bank_masks = [binarize(e.scores) for e in entries]
                candidate_scores = None
                if decision_hook is not None:
                    decision = decision_hook(position, len(entries))
                else:
                    if len(entries) == 1:
                        candidate_scores = _fresh_scores(net, config, alloc_counter)
                        probe = bank_masks + [binarize(candidate_scores)]
                        g = grad_alpha_raw(
                            net, probe, uniform_alpha(2), x, config.objective
                        )
                        decision = nns_decision(g, 2, config.epsilon)
                        if not decision.allocate_new:
                            decision.mask_index = 0
                    else:
                        g = grad_alpha_raw(
                            net,
                            bank_masks,
                            uniform_alpha(len(entries)),
                            x,
                            config.objective,
                        )
                        decision = nns_decision(g, len(entries), config.epsilon)
                if decision.allocate_new:
                    if len(entries) >= config.mask_budget:
                        budget_exhausted = True
                        active = min(decision.mask_index, len(entries) - 1)
                    else:
                        active = allocate(alloc_counter, position)
                        if candidate_scores is not None:
                            entries[active].scores = candidate_scores
                            entries[active].state = RmspropState.for_scores(
                                candidate_scores,
                                rho=config.rho,
                                eps=config.eps_opt,
                                lr=config.lr,
                            )
                        alloc_counter += 1
                else:
                    active = decision.mask_index
        entry = entries[active]
        grads = score_gradient(net, entry.scores, (x, y))
        rmsprop_step(entry.state, entry.scores, grads)

    masks = [binarize(e.scores) for e in entries]
    if artifacts is not None:
        artifacts.update(net=net, masks=masks)
    provenance = [e.born_at_task for e in entries]
    acc, ids = _evaluate_nns(net, masks, provenance, tasks, config)
    report = storage_report(masks)
    return MetricsRecord(
        acc,
        ids,
        len(masks),
        report.total_bytes,
        time.monotonic() - start,
        budget_exhausted=budget_exhausted,
    )


def run_abatche(config: ScenarioConfig, tasks, provenance="random", artifacts=None) -> MetricsRecord:
    """Rank-one fast-weight baseline with replicated-batch task inference.

    Trains one fast-weight pair per task over a shared trunk (trained on
    the first task when provenance is first_task, otherwise random and
    frozen), then evaluates under the zero-on-wrong-task rule using the
    block-replicated forward to pick the task per batch.
    """
    from .batche import FIRST_TASK, abatche_infer, batche_forward, batche_train_task, build_trunk

    start = time.monotonic()
    input_dim = tasks[0].train_x.shape[1]
    ell = max(task.num_classes for task in tasks)
    dims = (input_dim, *config.hidden_dims, max(config.output_size, ell))
    trunk = build_trunk(dims, seed=config.seed, provenance=provenance)
    bank = []
    for t, task in enumerate(tasks):
        bank.append(
            batche_train_task(
                trunk,
                task,
                config.steps_per_task,
                lr=config.lr,
                batch_size=config.batch_size,
                seed=[config.seed, t],
                train_trunk=(t == 0 and provenance == FIRST_TASK),
            )
        )
    objective = config.objective
    per_task_acc, per_task_id = [], []
    for t, task in enumerate(tasks):
        total = task.test_x.shape[0]
        correct = 0
        id_hits = 0
        batches = 0
        for b_start in range(0, total, config.batch_size):
            x = task.test_x[b_start : b_start + config.batch_size]
            y = task.test_y[b_start : b_start + config.batch_size]
            chosen = abatche_infer(x, trunk, bank, objective)
            batches += 1
            if chosen == t:
                id_hits += 1
                probs = batche_forward(x, trunk, bank[t])
                pred = np.argmax(probs[:, : task.num_classes], axis=1)
                correct += int((pred == y).sum())
        per_task_acc.append(correct / total)
        per_task_id.append(id_hits / batches)
    # fast weights are dense vectors; count their float64 bytes plus the seed
    vec_bytes = sum(v.nbytes for fw in bank for v in fw.r + fw.s)
    return MetricsRecord(
        per_task_acc,
        per_task_id,
        len(bank),
        8 + vec_bytes,
        time.monotonic() - start,
    )


def _batch_ranges(total, size):
    """Consecutive (start, end) slices; a trailing single row joins the last
    batch because per-batch normalization needs at least two rows."""
    ranges = [(a, min(a + size, total)) for a in range(0, total, size)]
    if len(ranges) > 1 and ranges[-1][1] - ranges[-1][0] == 1:
        a, _ = ranges.pop()
        prev_a, _ = ranges.pop()
        ranges.append((prev_a, total))
    return ranges


def run_hopfield(config: ScenarioConfig, tasks, artifacts=None) -> MetricsRecord:
    """Layer-masked continual learning with constant-size mask storage.

    Each task gets a global output slot (task t's classes map to
    t * ell .. t * ell + ell - 1), a layer-output mask is trained and
    written into the associative store, and at test time the mask is
    recovered from unlabeled batches instead of being looked up. A task's
    inference counts as correct when the recovered mask is Hamming-closest
    to the one stored for it.
    """
    from .data import TaskDataset
    from .hopfield import (
        HopfieldStore,
        mask_to_spins,
        nearest_pattern,
        recover_mask,
        store_pattern,
    )

    start = time.monotonic()
    input_dim = tasks[0].train_x.shape[1]
    ell = tasks[0].num_classes
    outputs = ell * len(tasks)
    net_config = NetConfig(
        (input_dim, *config.hidden_dims, outputs),
        seed=config.seed,
        nonlinearity="swish",
        mask_placement="layer_outputs",
        real_labels=outputs,
    )
    net = build_fixed_net(net_config)
    store = HopfieldStore.zeros(sum(config.hidden_dims))
    patterns = []
    for t, task in enumerate(tasks):
        shifted = TaskDataset(
            task.train_x,
            task.train_y + t * ell,
            task.test_x,
            task.test_y + t * ell,
            outputs,
            task.descriptor + f"+slot{t}",
        )
        mask = train_task(
            net,
            shifted,
            config.steps_per_task,
            batch_size=config.batch_size,
            lr=config.lr,
            rho=config.rho,
            eps_opt=config.eps_opt,
            init=default_score_init(net, seed=[config.seed, t]),
            seed=[config.seed, 1000 + t],
        )
        z = mask_to_spins(mask)
        store_pattern(store, z, config.hop_rule)
        patterns.append(z)

    if artifacts is not None:
        artifacts.update(net=net, store=store)
    per_task_acc, per_task_id = [], []
    for t, task in enumerate(tasks):
        ranges = _batch_ranges(task.test_x.shape[0], config.hop_batch)
        batches = [task.test_x[a:b] for a, b in ranges]
        result = recover_mask(
            store,
            net,
            batches,
            steps=config.hop_steps,
            gamma=config.hop_gamma,
            lr=config.hop_lr,
            momentum=config.hop_momentum,
            weight_decay=config.hop_weight_decay,
        )
        chosen = nearest_pattern(patterns, result.mask)
        per_task_id.append(1.0 if (chosen == t and not result.diverged) else 0.0)
        total = task.test_x.shape[0]
        correct = 0
        for a, b in ranges:
            x = task.test_x[a:b]
            y = task.test_y[a:b] + t * ell
            cache = forward_masked(net, result.mask, x)
            pred = np.argmax(cache.logits, axis=1)
            correct += int((pred == y).sum())
        per_task_acc.append(correct / total)

    report = storage_report([])  # masks live in the store, not as files
    return MetricsRecord(
        per_task_acc,
        per_task_id,
        len(tasks),
        report.total_bytes + store.psi.nbytes + store.mu.nbytes,
        time.monotonic() - start,
    )


def _evaluate_nns(net, masks, provenance, tasks, config):
    """Shared-label scoring: the chosen mask's predictions count directly."""
    model = MaskBankModel(net, masks, config, None)
    per_task_acc, per_task_id = [], []
    for t, task in enumerate(tasks):
        total = task.test_x.shape[0]
        correct = 0
        id_hits = 0
        batches = 0
        for start in range(0, total, config.batch_size):
            x = task.test_x[start : start + config.batch_size]
            y = task.test_y[start : start + config.batch_size]
            probe = x[:1] if config.granularity == SINGLE_IMAGE else x
            chosen = model.infer(probe)
            batches += 1
            if provenance[chosen] == t:
                id_hits += 1
            cache = forward_masked(net, masks[chosen], x)
            pred = np.argmax(cache.logits[:, : task.num_classes], axis=1)
            correct += int((pred == y).sum())
        per_task_acc.append(correct / total)
        per_task_id.append(id_hits / batches)
    return per_task_acc, per_task_id
