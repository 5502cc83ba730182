"""Image encoder, projection head, and the within-panel contrastive loss.

The loss pulls each normal image's weak and strong views together and pushes
both views away from the outlier's corresponding view.  With cosine
similarities a_i (weak vs strong, same slot), bw_i (weak vs weak outlier)
and bs_i (strong vs strong outlier), the panel loss is

    -(1/3) * sum_i log[ exp(a_i) / (exp(bw_i) + exp(bs_i)) ]

and a batch averages the panel losses.  Outlier identity is a training-time
input; nothing here runs at evaluation time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.modules import Conv2d, GroupNorm, Linear, Module
from .autodiff.tensor import NumericsError, ShapeError, Tensor
from .seeds import Stream


@dataclass(frozen=True)
class EncoderConfig:
    resolution: int = 64
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64, 64)
    norm_groups: int = 8
    proj_dim: int = 128

    def __post_init__(self):
        if self.resolution % (2 ** len(self.widths)) != 0:
            raise ValueError(f"resolution {self.resolution} does not survive "
                             f"{len(self.widths)} stride-2 stages")
        if self.out_size < 2:
            raise ValueError(f"encoder output would be {self.out_size}x{self.out_size}; "
                             "need at least 2x2")
        for w in self.widths:
            if w % self.norm_groups != 0:
                raise ValueError(f"stage width {w} is not divisible by {self.norm_groups} groups")

    @property
    def out_size(self) -> int:
        return self.resolution // (2 ** len(self.widths))

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


class _Stage(Module):
    """Two 3x3 conv/norm/relu blocks; the first downsamples with stride 2."""

    def __init__(self, c_in: int, c_out: int, groups: int, stream: Stream):
        super().__init__()
        self.conv_a = self.add_module("conv_a", Conv2d(c_in, c_out, 3, stream, stride=2, padding=1))
        self.norm_a = self.add_module("norm_a", GroupNorm(c_out, groups))
        self.conv_b = self.add_module("conv_b", Conv2d(c_out, c_out, 3, stream, padding=1))
        self.norm_b = self.add_module("norm_b", GroupNorm(c_out, groups))

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(self.norm_a(self.conv_a(x)))
        return ops.relu(self.norm_b(self.conv_b(h)))


class Encoder(Module):
    """Shared-weight CNN mapping (M, 3, H, W) in [0,1] to (M, C, h, w)."""

    def __init__(self, cfg: EncoderConfig, stream: Stream):
        super().__init__()
        self.cfg = cfg
        self.stages = []
        c_prev = cfg.in_channels
        for i, width in enumerate(cfg.widths):
            stage = self.add_module(f"stage{i}", _Stage(c_prev, width, cfg.norm_groups, stream))
            self.stages.append(stage)
            c_prev = width

    def __call__(self, x: Tensor) -> Tensor:
        expected = (self.cfg.in_channels, self.cfg.resolution, self.cfg.resolution)
        if x.data.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"encoder configured for (M, {expected[0]}, {expected[1]}, "
                             f"{expected[2]}) inputs, got {x.shape}")
        h = x
        for stage in self.stages:
            h = stage(h)
        return h


class ProjectionHead(Module):
    """Global average pool, then a two-layer MLP to the embedding space."""

    def __init__(self, cfg: EncoderConfig, stream: Stream):
        super().__init__()
        self.fc1 = self.add_module("fc1", Linear(cfg.out_channels, cfg.proj_dim, stream))
        self.fc2 = self.add_module("fc2", Linear(cfg.proj_dim, cfg.proj_dim, stream))

    def __call__(self, features: Tensor) -> Tensor:
        pooled = ops.mean(features, axis=(2, 3))
        return self.fc2(ops.relu(self.fc1(pooled)))


class DegenerateCounter:
    """Counts near-zero embeddings met by the cosine (diagnostic only)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> None:
        self.count = 0


@dataclass
class EmbeddingSet:
    """One panel's projected views; normals in ascending slot order."""

    weak_normals: Tensor     # (3, d)
    weak_outlier: Tensor     # (d,)
    strong_normals: Tensor   # (3, d)
    strong_outlier: Tensor   # (d,)


def _const(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _tile_rows(vec: Tensor, rows: int, dtype) -> Tensor:
    """(d,) -> (rows, d) through a broadcasting multiply (keeps gradients)."""
    ones = Tensor(np.ones((rows, 1), dtype=dtype))
    return ops.mul(ones, ops.reshape(vec, (1, vec.shape[-1])))


def acl_loss(embeddings: EmbeddingSet, temperature: float = 1.0, counter=None,
             panel_id=None) -> Tensor:
    """Contrastive loss of a single panel (see module docstring)."""
    es = embeddings
    for name in ("weak_normals", "weak_outlier", "strong_normals", "strong_outlier"):
        data = getattr(es, name).data
        if not np.isfinite(data).all():
            tag = "" if panel_id is None else f"panel {panel_id}: "
            raise NumericsError(f"{tag}non-finite values in {name}")
    if es.weak_normals.shape[0] != 3 or es.strong_normals.shape[0] != 3:
        raise ShapeError("a panel has exactly three normal embeddings per view")

    dtype = es.weak_normals.data.dtype
    uw = _tile_rows(es.weak_outlier, 3, dtype)
    us = _tile_rows(es.strong_outlier, 3, dtype)
    alpha = ops.cosine_similarity(es.weak_normals, es.strong_normals, counter=counter)
    beta_w = ops.cosine_similarity(es.weak_normals, uw, counter=counter)
    beta_s = ops.cosine_similarity(es.strong_normals, us, counter=counter)
    if temperature != 1.0:
        inv = _const(1.0 / temperature, alpha)
        alpha, beta_w, beta_s = (ops.mul(t, inv) for t in (alpha, beta_w, beta_s))
    pushed = ops.log(ops.add(ops.exp(beta_w), ops.exp(beta_s)))
    return ops.mul(ops.mean(ops.sub(alpha, pushed)), _const(-1.0, alpha))


def contrast_loss(weak: Tensor, strong: Tensor, outlier_mask: np.ndarray,
                  temperature: float = 1.0, counter=None) -> Tensor:
    """Batched loss over (N, 4, d) weak/strong embeddings.

    `outlier_mask` is a constant (N, 4) one-hot picking each panel's outlier
    slot.  All four slots flow through the cosine terms and the outlier
    slot's own term is masked out of the sum, which keeps the computation a
    fixed batched graph.
    """
    if weak.shape != strong.shape or weak.data.ndim != 3 or weak.shape[1] != 4:
        raise ShapeError(f"expected matching (N, 4, d) embeddings, got {weak.shape} "
                         f"and {strong.shape}")
    mask = np.asarray(outlier_mask, dtype=weak.data.dtype)
    if mask.shape != weak.shape[:2] or not np.allclose(mask.sum(axis=1), 1.0):
        raise ShapeError("outlier_mask must be one-hot of shape (N, 4)")

    n = weak.shape[0]
    m3 = Tensor(mask[:, :, None])
    ones = Tensor(np.ones(weak.shape, dtype=weak.data.dtype))
    uw = ops.mul(ones, ops.tsum(ops.mul(weak, m3), axis=1, keepdims=True))
    us = ops.mul(ones, ops.tsum(ops.mul(strong, m3), axis=1, keepdims=True))

    alpha = ops.cosine_similarity(weak, strong, counter=counter)
    beta_w = ops.cosine_similarity(weak, uw, counter=counter)
    beta_s = ops.cosine_similarity(strong, us, counter=counter)
    if temperature != 1.0:
        inv = _const(1.0 / temperature, alpha)
        alpha, beta_w, beta_s = (ops.mul(t, inv) for t in (alpha, beta_w, beta_s))
    term = ops.sub(alpha, ops.log(ops.add(ops.exp(beta_w), ops.exp(beta_s))))
    normal_mask = Tensor(np.asarray(1.0 - mask, dtype=weak.data.dtype))
    total = ops.tsum(ops.mul(term, normal_mask))
    return ops.mul(total, _const(-1.0 / (3.0 * n), total))


def export_embeddings(path, panel_ids, weak: np.ndarray, strong: np.ndarray) -> None:
    """Write (panel id, slot, view, d floats) rows for external projection tools."""
    d = weak.shape[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["panel_id", "slot", "view"] + [f"e{j}" for j in range(d)])
        for view, block in (("w", weak), ("s", strong)):
            for i, pid in enumerate(panel_ids):
                for slot in range(4):
                    writer.writerow([pid, slot, view] + [f"{v:.6g}" for v in block[i, slot]])
