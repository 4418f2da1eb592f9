"""Scikit-learn wrapper: fit a channel-sparse MLP classifier on tabular data.

The estimator follows the usual conventions (constructor stores
hyper-parameters verbatim, ``fit`` validates with the sklearn helpers and sets
trailing-underscore attributes, ``get_params``/``set_params`` come from
``BaseEstimator``), so it composes with pipelines, grid search and
``cross_val_score``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import DatasetHandle
from .models import make_mlp
from .network import forward_logits
from .training import TrainConfig, Trainer


class SparseChannelClassifier(BaseEstimator, ClassifierMixin):
    """MLP classifier trained with channel-level sparse passes only.

    During ``fit`` the hidden-unit keep-probabilities are learned jointly with
    the weights under the budget ``sum(s) <= remain_ratio * n_hidden``; the
    fitted model is one sampled subnetwork (the best of ``eval_samples``
    candidates by training loss).

    Parameters mirror :class:`sparsetrain.training.TrainConfig`, plus
    ``hidden`` (hidden-layer widths) and ``norm`` (per-unit affine scaling).
    """

    def __init__(self, hidden=(32,), norm=True, remain_ratio=0.5, alpha=0.5,
                 weight_lr=0.1, structure_lr=12e-3, epochs=30, batch_size=32,
                 seed=0, resample_interval=1, eval_samples=5, eps=1e-4):
        self.hidden = hidden
        self.norm = norm
        self.remain_ratio = remain_ratio
        self.alpha = alpha
        self.weight_lr = weight_lr
        self.structure_lr = structure_lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.resample_interval = resample_interval
        self.eval_samples = eval_samples
        self.eps = eps

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        self.n_features_in_ = X.shape[1]
        encoded = np.searchsorted(self.classes_, y)
        idx = np.arange(X.shape[0])
        handle = DatasetHandle(
            features=X, labels=encoded, train_idx=idx, eval_idx=idx,
            classes=len(self.classes_), provenance="memory",
        )
        spec = make_mlp((X.shape[1],), len(self.classes_),
                        hidden=tuple(int(h) for h in self.hidden), norm=self.norm)
        config = TrainConfig(
            remain_ratio=self.remain_ratio, alpha=self.alpha,
            weight_lr=self.weight_lr, structure_lr=self.structure_lr,
            epochs=int(self.epochs), batch_size=int(self.batch_size),
            seed=int(self.seed), resample_interval=int(self.resample_interval),
            eval_samples=int(self.eval_samples), eps=self.eps,
        )
        trainer = Trainer(config, spec, handle).run()
        report = trainer.finalize()
        self.spec_ = spec
        self.params_ = trainer.params
        self.structure_ = trainer.structure
        self.mask_ = report.mask
        self.report_ = report
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return forward_logits(self.spec_, self.params_, self.mask_, X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
