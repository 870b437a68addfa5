"""Scikit-learn estimator facade over the frozen-net mask learner.

SupermaskClassifier keeps a frozen random network and learns one binary
mask per fitted task. predict() with no task argument infers the task for
the batch first, so the classifier keeps working as tasks accumulate.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigurationError, InvalidStateError
from .inference import alpha_descent, binary_infer, gamma_infer, one_shot
from .masks import MaskBank, uniform_alpha
from .net import ENTROPY, GSUMEXP, NetConfig, build_fixed_net, forward_masked
from .training import THRESHOLD0, TOPK, default_score_init, train_task, transfer_init


class SupermaskClassifier(BaseEstimator, ClassifierMixin):
    """Continual classifier: one trained subnetwork mask per task.

    Parameters follow the scikit-learn convention (stored verbatim, fitted
    state carries a trailing underscore). fit() starts a fresh model with a
    single task; fit_task() appends another task without touching earlier
    masks, which is what makes previously learned tasks immune to new
    training.
    """

    def __init__(
        self,
        hidden_dims=(300, 100),
        output_size=100,
        nonlinearity="relu",
        objective=GSUMEXP,
        infer_alg="one_shot",
        gamma_frac=0.5,
        alpha_eta=1e3,
        alpha_steps=20,
        steps=300,
        batch_size=128,
        learning_rate=1e-4,
        rho=0.99,
        eps_opt=1e-8,
        mask_rule=THRESHOLD0,
        keep_frac=None,
        transfer=False,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.output_size = output_size
        self.nonlinearity = nonlinearity
        self.objective = objective
        self.infer_alg = infer_alg
        self.gamma_frac = gamma_frac
        self.alpha_eta = alpha_eta
        self.alpha_steps = alpha_steps
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps_opt = eps_opt
        self.mask_rule = mask_rule
        self.keep_frac = keep_frac
        self.transfer = transfer
        self.random_state = random_state

    def fit(self, X, y):
        """Reset the model and learn the first task."""
        for attr in ("net_", "masks_", "task_classes_", "classes_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.fit_task(X, y)

    def fit_task(self, X, y):
        """Append one task: learn its mask over the shared frozen net."""
        from types import SimpleNamespace

        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) > self.output_size:
            raise ConfigurationError(
                f"{len(classes)} classes exceed output_size={self.output_size}"
            )
        if not hasattr(self, "masks_"):
            self.n_features_in_ = X.shape[1]
            self.masks_ = []
            self.task_classes_ = []
        ell = max(len(c) for c in self.task_classes_ + [classes])
        config = NetConfig(
            (self.n_features_in_, *self.hidden_dims, self.output_size),
            seed=self.random_state,
            nonlinearity=self.nonlinearity,
            real_labels=ell,
        )
        if not hasattr(self, "net_") or self.net_.config != config:
            # same seed and dims reproduce the weights bit-identically, so
            # growing real_labels never disturbs already-trained masks
            self.net_ = build_fixed_net(config)
        encoded = np.searchsorted(classes, y)
        view = SimpleNamespace(train_x=X, train_y=encoded)
        t = len(self.masks_)
        if self.transfer and self.masks_:
            init = transfer_init(
                self.masks_, self.net_, seed=[self.random_state, t],
                rule=self.mask_rule, keep_frac=self.keep_frac,
            )
        else:
            init = default_score_init(
                self.net_, seed=[self.random_state, t],
                rule=self.mask_rule, keep_frac=self.keep_frac,
            )
        mask = train_task(
            self.net_,
            view,
            self.steps,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            rho=self.rho,
            eps_opt=self.eps_opt,
            init=init,
            seed=[self.random_state, 1000 + t],
        )
        self.masks_.append(mask)
        self.task_classes_.append(classes)
        self.classes_ = np.unique(np.concatenate(self.task_classes_))
        return self

    @property
    def n_tasks_(self):
        check_is_fitted(self, "masks_")
        return len(self.masks_)

    def infer_task(self, X) -> int:
        """Task index minimizing the configured objective for this batch."""
        check_is_fitted(self, "masks_")
        X = check_array(np.asarray(X, dtype=np.float64))
        bank = MaskBank(self.masks_, uniform_alpha(len(self.masks_)))
        if self.infer_alg == "one_shot":
            return one_shot(self.net_, bank, X, self.objective)
        if self.infer_alg == "binary":
            return binary_infer(self.net_, bank, X, self.objective)
        if self.infer_alg == "gamma":
            return gamma_infer(self.net_, bank, X, self.objective, self.gamma_frac)
        if self.infer_alg == "alpha_descent":
            alpha = alpha_descent(
                self.net_, bank, X, self.objective, self.alpha_eta, self.alpha_steps
            )
            return int(np.argmax(alpha))
        raise ConfigurationError(f"unknown infer_alg {self.infer_alg!r}")

    def _resolve_task(self, X, task):
        if task is None:
            if len(self.masks_) == 1:
                return 0
            return self.infer_task(X)
        if not 0 <= task < len(self.masks_):
            raise InvalidStateError(f"task {task} not fitted yet")
        return task

    def predict_proba(self, X, task=None):
        """Class probabilities under the given (or inferred) task's mask."""
        check_is_fitted(self, "masks_")
        X = check_array(np.asarray(X, dtype=np.float64))
        t = self._resolve_task(X, task)
        ell = len(self.task_classes_[t])
        cache = forward_masked(self.net_, self.masks_[t], X)
        logits = cache.logits[:, :ell]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X, task=None):
        """Labels for one batch, inferring the task first when not given."""
        check_is_fitted(self, "masks_")
        X = check_array(np.asarray(X, dtype=np.float64))
        t = self._resolve_task(X, task)
        ell = len(self.task_classes_[t])
        cache = forward_masked(self.net_, self.masks_[t], X)
        encoded = np.argmax(cache.logits[:, :ell], axis=1)
        return self.task_classes_[t][encoded]
