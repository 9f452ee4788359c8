"""Scikit-learn style estimators wrapping the training engine.

NetClassifier trains one network (any preset or explicit ModelSpec) with SGD
and per-epoch validation checkpointing; per-item `sample_weight` plugs the
importance weights into the batch-normalized weighted loss.
ReweightedClassifier is the two-stage procedure: fit a source network, turn
its true-class probabilities into downweights, fit the target with them.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone

from . import autograd as ag
from ._malloc import keep_large_allocations
from .autograd import Tape, Tensor
from .data import make_batches
from .models import build_model, forward, glorot_init
from .optim import SgdState, lr_at_epoch, sgd_step
from .seeding import derive_seed
from .validation import check_images, check_labels, check_sample_weight
from .weighting import importance_weights, weighted_batch_loss

CHECKPOINT_METRICS = ("val_accuracy", "val_loss")


class NetClassifier(BaseEstimator, ClassifierMixin):
    """CNN classifier trained with SGD and a step learning-rate schedule.

    After fit, `params_` holds the best-validation checkpoint (final epoch
    when no validation set is supplied), `history_` one row per epoch with
    train_loss/val_metric/lr, and `best_epoch_` the retained epoch.
    """

    def __init__(self, arch="vgg-mini", epochs=20, learning_rate=0.01, momentum=0.9,
                 weight_decay=5e-4, batch_size=256, lr_milestones=(0.5, 0.75),
                 lr_decay=10.0, checkpoint_metric="val_accuracy", init_seed=0,
                 batch_seed=0):
        self.arch = arch
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.lr_milestones = lr_milestones
        self.lr_decay = lr_decay
        self.checkpoint_metric = checkpoint_metric
        self.init_seed = init_seed
        self.batch_seed = batch_seed

    def fit(self, X, y, sample_weight=None, validation=None):
        keep_large_allocations()
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_metric not in CHECKPOINT_METRICS:
            raise ValueError(f"checkpoint_metric must be one of {CHECKPOINT_METRICS}")
        X = check_images(X)
        y_enc, self.classes_ = check_labels(y)
        n = len(X)
        weights = check_sample_weight(sample_weight, n)
        val = None
        if validation is not None:
            X_val = check_images(validation[0])
            y_val, _ = check_labels(validation[1], self.classes_)
            val = (X_val, y_val)

        spec = build_model(self.arch, num_classes=len(self.classes_), input_shape=X.shape[1:])
        params = glorot_init(spec, self.init_seed)
        state = SgdState(self.learning_rate, self.momentum, self.weight_decay,
                         tuple(self.lr_milestones), self.lr_decay)

        history = []
        best = None  # (metric, epoch, snapshot)
        for epoch in range(self.epochs):
            batch_losses = []
            for bi, idx in enumerate(make_batches(n, self.batch_size,
                                                  derive_seed(self.batch_seed, epoch))):
                xb = Tensor(X[idx])
                with Tape() as tape:
                    logits = forward(spec, params, xb)
                    losses, _ = ag.softmax_cross_entropy(logits, y_enc[idx])
                    loss = weighted_batch_loss(losses, weights[idx])
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
                for p in params.values():
                    p.zero_grad()
                tape.backward(loss)
                sgd_step(params, state, epoch, self.epochs)
                batch_losses.append(loss_value)

            row = {"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                   "lr": lr_at_epoch(state, epoch, self.epochs), "val_metric": float("nan")}
            if val is not None:
                metric = self._metric(spec, params, *val)
                if not math.isfinite(metric):
                    raise FloatingPointError(f"non-finite validation metric at epoch {epoch}")
                row["val_metric"] = metric
                if best is None or self._improves(metric, best[0]):
                    best = (metric, epoch, {k: p.data.copy() for k, p in params.items()})
            history.append(row)

        if best is None:  # no validation set: keep the final parameters
            best = (float("nan"), self.epochs - 1, {k: p.data.copy() for k, p in params.items()})
        self.spec_ = spec
        self.params_ = best[2]
        self.best_epoch_ = best[1]
        self.best_metric_ = best[0]
        self.history_ = history
        return self

    def _improves(self, metric: float, incumbent: float) -> bool:
        # strict comparison keeps the earlier epoch on ties
        if self.checkpoint_metric == "val_accuracy":
            return metric > incumbent
        return metric < incumbent

    def _metric(self, spec, params, X_val, y_val) -> float:
        probs, losses = _batched_eval(spec, params, X_val, y_val, self.batch_size)
        if self.checkpoint_metric == "val_accuracy":
            return float((probs.argmax(axis=1) == y_val).mean())
        return float(np.mean(losses))

    def _eval_params(self):
        return {k: Tensor(v) for k, v in self.params_.items()}

    def predict_proba(self, X) -> np.ndarray:
        X = check_images(X)
        probs, _ = _batched_eval(self.spec_, self._eval_params(), X, None, self.batch_size)
        return probs.astype(np.float64)

    def predict(self, X) -> np.ndarray:
        # ties in the probabilities resolve toward the lower class index
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def _batched_eval(spec, params, X, y, batch_size):
    """Forward the dataset in order without recording; probs and losses."""
    probs_parts, loss_parts = [], []
    for start in range(0, len(X), batch_size):
        xb = Tensor(X[start:start + batch_size])
        logits = forward(spec, params, xb)
        probs_parts.append(ag.softmax_probs(logits.data))
        if y is not None:
            losses, _ = ag.softmax_cross_entropy(logits, y[start:start + batch_size])
            loss_parts.append(losses.data)
    losses = np.concatenate(loss_parts) if loss_parts else np.zeros(0)
    return np.concatenate(probs_parts), losses


class ReweightedClassifier(BaseEstimator, ClassifierMixin):
    """Two-stage training: downweight items the source network masters.

    The source (typically the low-capacity network) is fitted first; each
    training item then gets weight 1 - p(true class), and the target is
    fitted with those weights.  Source and target must not share
    initialization seeds; fit refuses identical ones.
    """

    def __init__(self, source=None, target=None):
        self.source = source
        self.target = target

    def fit(self, X, y, validation=None):
        source = self.source if self.source is not None else NetClassifier(
            arch="lcn", epochs=40, learning_rate=0.01, momentum=0.0, weight_decay=0.0)
        target = self.target if self.target is not None else NetClassifier()
        if isinstance(source, NetClassifier) and isinstance(target, NetClassifier) \
                and source.init_seed == target.init_seed:
            raise ValueError("source and target must use different init seeds")
        self.source_ = clone(source).fit(X, y, validation=validation)
        probs = self.source_.predict_proba(X)
        y_enc, _ = check_labels(y, self.source_.classes_)
        self.importance_weights_ = importance_weights(probs, y_enc)
        self.target_ = clone(target).fit(X, y, sample_weight=self.importance_weights_,
                                         validation=validation)
        self.classes_ = self.target_.classes_
        return self

    def predict_proba(self, X):
        return self.target_.predict_proba(X)

    def predict(self, X):
        return self.target_.predict(X)
