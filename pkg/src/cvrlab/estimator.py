"""Scikit-learn style front door for training an outlier reasoner.

`OutlierReasoner` wraps dataset plumbing, the training loop, and batched
inference behind the familiar fit/predict surface, so the package can sit in
a pipeline or a grid search without callers touching the internals.  X is a
(N, 4, H, W, 3) panel array, y the outlier slot index per panel.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .model import PanelModel
from .seeds import Stream, derive
from .taskgen.dataset import PanelDataset
from .training import TrainConfig, predict_logits, train
from .validation import check_fraction, check_outliers, check_panels


def _as_dataset(images: np.ndarray, outliers: np.ndarray, tag: str) -> PanelDataset:
    n = images.shape[0]
    return PanelDataset(images=images, outliers=outliers,
                        rules=[tag] * n,
                        ids=[f"{tag}{i:06d}" for i in range(n)],
                        seeds=[0] * n,
                        resolution=int(images.shape[2]))


class OutlierReasoner(ClassifierMixin, BaseEstimator):
    """Learns to pick the odd image out of four.

    Parameters mirror the training configuration; `validation_fraction` is
    carved off the fitting data (seeded by `random_state`) to drive early
    stopping and to report `validation_accuracy_`.
    """

    def __init__(self, epochs=100, early_stop_patience=20, batch_size=64,
                 lr=1e-4, weight_decay=1e-4, contrast_weight=0.1, num_blocks=3,
                 contrast_mode="weak-strong", head="reasoning", context_mode="both",
                 eval_permutation="average-all", widths=(16, 32, 64, 64),
                 proj_dim=128, validation_fraction=0.2, random_state=0,
                 stop_at_accuracy=None):
        self.epochs = epochs
        self.early_stop_patience = early_stop_patience
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.contrast_weight = contrast_weight
        self.num_blocks = num_blocks
        self.contrast_mode = contrast_mode
        self.head = head
        self.context_mode = context_mode
        self.eval_permutation = eval_permutation
        self.widths = widths
        self.proj_dim = proj_dim
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.stop_at_accuracy = stop_at_accuracy

    def _config(self, resolution: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs,
                           early_stop_patience=self.early_stop_patience,
                           batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay,
                           contrast_weight=self.contrast_weight,
                           num_blocks=self.num_blocks, seed=self.random_state,
                           resolution=resolution, widths=tuple(self.widths),
                           proj_dim=self.proj_dim, context_mode=self.context_mode,
                           eval_permutation=self.eval_permutation,
                           contrast_mode=self.contrast_mode, head=self.head,
                           stop_at_accuracy=self.stop_at_accuracy)

    def fit(self, X, y, log=None):
        images = check_panels(X)
        outliers = check_outliers(y, images.shape[0])
        frac = check_fraction(self.validation_fraction, "validation_fraction")
        n = images.shape[0]
        n_val = max(1, int(round(frac * n)))
        if n_val >= n:
            raise ValueError(f"validation_fraction={frac} leaves no training "
                             f"panels out of {n}")
        order = Stream(derive(self.random_state, "split")).permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]

        cfg = self._config(int(images.shape[2]))
        train_ds = _as_dataset(images[train_idx], outliers[train_idx], "fit")
        val_ds = _as_dataset(images[val_idx], outliers[val_idx], "val")
        model, history, best_state = train(cfg, train_ds, val_ds, log=log)
        model.load_state(best_state)

        self.model_ = model
        self.history_ = history
        self.config_ = cfg
        self.resolution_ = cfg.resolution
        self.validation_accuracy_ = history.best_accuracy
        self.classes_ = np.arange(4)
        return self

    def _require_fitted(self) -> PanelModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("this OutlierReasoner instance is not fitted yet; "
                                 "call fit before predicting")
        return self.model_

    def decision_function(self, X) -> np.ndarray:
        """Per-slot outlier logits, shape (N, 4)."""
        model = self._require_fitted()
        images = check_panels(X, resolution=self.resolution_)
        ds = _as_dataset(images, np.zeros(images.shape[0], dtype=np.int64), "x")
        return predict_logits(model, ds, self.batch_size)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        """Per-slot sigmoid scores renormalized to sum to one per panel."""
        logits = self.decision_function(X).astype(np.float64)
        scores = 1.0 / (1.0 + np.exp(-logits))
        return scores / scores.sum(axis=1, keepdims=True)
