"""Predict-and-verify reasoning over panel feature groups.

For every slot t the stack runs a chain that treats image t as the target:
a predictor estimates the target's feature map from the other three, the
residual between the real and predicted map replaces the target slot, and an
interaction net turns that group into additive refinements.  Chains share
weights within a depth level and deeper levels own separate weights.  After
K levels, the target slot of each chain is pooled and scored by a shared
two-layer head; an image whose features the context cannot explain keeps a
large prediction error and should end up with the top logit.

Slot symmetry is deliberate everywhere (context averages inside the
interaction net, permutation-averaged prediction at evaluation), so
permuting a panel's images permutes the logits with it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.modules import Conv2d, Linear, Module
from .autodiff.tensor import ShapeError, Tensor
from .seeds import Stream

CONTEXT_MODES = ("three", "two", "both")
EVAL_PERMUTATIONS = ("canonical", "average-all")

_PAIRS = ((0, 1), (0, 2), (1, 2))
_ORDERINGS3 = tuple(itertools.permutations(range(3)))


@dataclass(frozen=True)
class ReasoningConfig:
    num_blocks: int = 3
    context_mode: str = "both"
    eval_permutation: str = "average-all"
    contrast_weight: float = 0.1

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be at least 1, got {self.num_blocks}")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        if self.eval_permutation not in EVAL_PERMUTATIONS:
            raise ValueError(f"eval_permutation must be one of {EVAL_PERMUTATIONS}, "
                             f"got {self.eval_permutation!r}")
        if self.contrast_weight < 0.0:
            raise ValueError(f"contrast_weight must be nonnegative, got {self.contrast_weight}")


def _scale(t: Tensor, factor: float) -> Tensor:
    return ops.mul(t, Tensor(np.asarray(factor, dtype=t.data.dtype)))


def _average(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ops.add(total, t)
    return _scale(total, 1.0 / len(tensors)) if len(tensors) > 1 else total


class FeaturePredictor(Module):
    """Estimates one feature map from `context_count` channel-stacked maps."""

    def __init__(self, channels: int, context_count: int, stream: Stream):
        super().__init__()
        self.channels = channels
        self.context_count = context_count
        self.mix = self.add_module("mix", Conv2d(channels * context_count, channels, 1, stream))
        self.conv_a = self.add_module("conv_a", Conv2d(channels, channels, 3, stream, padding=1))
        self.conv_b = self.add_module("conv_b", Conv2d(channels, channels, 3, stream, padding=1))

    def __call__(self, stacked: Tensor) -> Tensor:
        expected = self.channels * self.context_count
        if stacked.data.ndim != 4 or stacked.shape[1] != expected:
            raise ShapeError(f"predictor wants {self.context_count} stacked context maps "
                             f"({expected} channels), got shape {stacked.shape}")
        return self.conv_b(ops.relu(self.conv_a(self.mix(stacked))))


class InteractionNet(Module):
    """Turns a feature group plus one error map into per-slot refinements.

    A 3x3 mixing conv summarizes [context average, error map] with spatial
    support; each slot is then refined by two pointwise convs shared across
    slots, reading [slot, summary].  The final conv starts at zero, so a
    fresh net is the residual identity.
    """

    def __init__(self, channels: int, stream: Stream):
        super().__init__()
        self.mix = self.add_module("mix", Conv2d(2 * channels, channels, 3, stream, padding=1))
        self.conv_a = self.add_module("conv_a", Conv2d(2 * channels, channels, 1, stream))
        self.conv_b = self.add_module("conv_b", Conv2d(channels, channels, 1, stream,
                                                       zero_init=True))

    def refine(self, group: list[Tensor], target: int, error: Tensor) -> list[Tensor]:
        contexts = [group[s] for s in range(4) if s != target]
        summary = ops.relu(self.mix(ops.concat([_average(contexts), error], axis=1)))
        branch = [error if s == target else group[s] for s in range(4)]
        rows = ops.concat([ops.concat([branch[s], summary], axis=1) for s in range(4)], axis=0)
        per_slot = self.conv_b(ops.relu(self.conv_a(rows)))
        n = group[0].shape[0]
        deltas = ops.split(per_slot, [n, n, n, n], axis=0)
        return [ops.add(group[s], deltas[s]) for s in range(4)]


class ReasoningLevel(Module):
    """One depth level: target predictors plus the interaction net."""

    def __init__(self, channels: int, cfg: ReasoningConfig, stream: Stream):
        super().__init__()
        self.cfg = cfg
        if cfg.context_mode in ("three", "both"):
            self.predict3 = self.add_module("predict3", FeaturePredictor(channels, 3, stream))
        if cfg.context_mode in ("two", "both"):
            self.predict2 = self.add_module("predict2", FeaturePredictor(channels, 2, stream))
        self.interact = self.add_module("interact", InteractionNet(channels, stream))

    def _from_three(self, contexts, train, stream):
        if train:
            orders = [tuple(stream.permutation(3))]
        elif self.cfg.eval_permutation == "canonical":
            orders = [(0, 1, 2)]
        else:
            orders = _ORDERINGS3
        rows = ops.concat([ops.concat([contexts[p] for p in order], axis=1) for order in orders],
                          axis=0)
        n = contexts[0].shape[0]
        preds = ops.split(self.predict3(rows), [n] * len(orders), axis=0)
        return _average(preds)

    def _from_two(self, contexts, train, stream):
        n = contexts[0].shape[0]
        if train and self.cfg.context_mode == "two":
            pairs = [_PAIRS[stream.randint(3)]]
        else:
            pairs = list(_PAIRS)
        orderings = []
        for pair in pairs:
            if train:
                orderings.append(pair if stream.randint(2) == 0 else pair[::-1])
            elif self.cfg.eval_permutation == "canonical":
                orderings.append(pair)
            else:
                orderings.extend([pair, pair[::-1]])
        rows = ops.concat([ops.concat([contexts[a], contexts[b]], axis=1) for a, b in orderings],
                          axis=0)
        preds = ops.split(self.predict2(rows), [n] * len(orderings), axis=0)
        return _average(preds)

    def predict_target(self, contexts: list[Tensor], train: bool = False,
                       stream: Stream | None = None) -> Tensor:
        """Predicted feature map for the slot whose three contexts are given."""
        if len(contexts) != 3:
            raise ShapeError(f"a target has exactly 3 context maps, got {len(contexts)}")
        if train and stream is None:
            raise ValueError("training-time prediction needs a stream for the context shuffle")
        mode = self.cfg.context_mode
        if mode == "three":
            return self._from_three(contexts, train, stream)
        if mode == "two":
            return self._from_two(contexts, train, stream)
        merged = ops.add(self._from_three(contexts, train, stream),
                         self._from_two(contexts, train, stream))
        return _scale(merged, 0.5)


def prediction_error(target: Tensor, predicted: Tensor) -> Tensor:
    """Elementwise residual between a real and a predicted feature map."""
    if target.shape != predicted.shape:
        raise ShapeError(f"error needs matching shapes, got {target.shape} vs {predicted.shape}")
    return ops.sub(target, predicted)


class ReasoningStack(Module):
    """K stacked levels plus the shared scoring head."""

    def __init__(self, channels: int, cfg: ReasoningConfig, stream: Stream):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        self.levels = []
        for j in range(cfg.num_blocks):
            self.levels.append(self.add_module(f"level{j}", ReasoningLevel(channels, cfg, stream)))
        self.head_fc1 = self.add_module("head_fc1", Linear(channels, channels, stream))
        # zero-initialized head: an untrained model scores every slot 0.0
        self.head_fc2 = self.add_module("head_fc2", Linear(channels, 1, stream, zero_init=True))

    def __call__(self, slots: list[Tensor], train: bool = False,
                 stream: Stream | None = None, collect_errors: bool = False):
        if len(slots) != 4:
            raise ShapeError(f"a panel has 4 feature slots, got {len(slots)}")
        shape = slots[0].shape
        if any(s.shape != shape for s in slots) or len(shape) != 4 or shape[1] != self.channels:
            raise ShapeError(f"slots must share shape (N, {self.channels}, h, w)")

        chains = [list(slots) for _ in range(4)]
        first_errors = None
        for level in self.levels:
            errors = []
            for t in range(4):
                contexts = [chains[t][s] for s in range(4) if s != t]
                predicted = level.predict_target(contexts, train=train, stream=stream)
                errors.append(prediction_error(chains[t][t], predicted))
            if first_errors is None:
                first_errors = errors
            chains = [level.interact.refine(chains[t], t, errors[t]) for t in range(4)]

        columns = []
        for t in range(4):
            pooled = ops.mean(chains[t][t], axis=(2, 3))
            columns.append(self.head_fc2(ops.relu(self.head_fc1(pooled))))
        logits = ops.concat(columns, axis=1)
        if collect_errors:
            norms = np.stack([np.sqrt((e.data.astype(np.float64) ** 2).sum(axis=(1, 2, 3)))
                              for e in first_errors], axis=1)
            return logits, norms
        return logits


class PooledScoreHead(Module):
    """Reasoning-free scorer over concatenated pooled features (ablation)."""

    def __init__(self, channels: int, stream: Stream):
        super().__init__()
        self.fc1 = self.add_module("fc1", Linear(4 * channels, 4 * channels, stream))
        self.fc2 = self.add_module("fc2", Linear(4 * channels, 4, stream, zero_init=True))

    def __call__(self, slots: list[Tensor]) -> Tensor:
        pooled = ops.concat([ops.mean(s, axis=(2, 3)) for s in slots], axis=1)
        return self.fc2(ops.relu(self.fc1(pooled)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class PanelScores:
    """Logits for each panel's four slots plus derived read-outs."""

    logits: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        # argmax returns the first maximum, so ties go to the lowest slot
        return np.argmax(self.logits, axis=-1)

    @property
    def probabilities(self) -> np.ndarray:
        return _sigmoid(self.logits)


def bce_targets(outliers: np.ndarray, soft: bool = False, dtype=np.float32) -> np.ndarray:
    """Per-slot targets: one-hot on the outlier, optionally squashed.

    `soft=True` passes the 0/1 labels through a sigmoid (targets 0.731/0.5),
    a literal reading of the scoring equation kept available for
    experiments; the default hard labels are what training uses.
    """
    outliers = np.asarray(outliers)
    targets = np.zeros((outliers.shape[0], 4), dtype=np.float64)
    targets[np.arange(outliers.shape[0]), outliers] = 1.0
    if soft:
        targets = _sigmoid(targets)
    return targets.astype(dtype)


def bce_loss(logits: Tensor, outliers: np.ndarray, soft: bool = False) -> Tensor:
    targets = bce_targets(outliers, soft=soft, dtype=logits.data.dtype)
    return ops.binary_cross_entropy_with_logits(logits, targets)


def total_loss(task_loss: Tensor, contrast: Tensor | None, weight: float) -> Tensor:
    """Combined objective; a zero weight keeps the contrastive graph detached."""
    if weight < 0.0:
        raise ValueError(f"contrast weight must be nonnegative, got {weight}")
    if contrast is None or weight == 0.0:
        return task_loss
    return ops.add(task_loss, _scale(contrast, weight))
