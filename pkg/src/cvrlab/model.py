"""The full panel model: one encoder, a projection head, and a scorer.

Images enter as uint8 panels (N, 4, H, W, 3).  The four slots are stacked
slot-major into one encoder batch, so every image shares the same weights,
then split back into per-slot feature maps.  The projection head turns maps
into embeddings for the contrastive objective; the scorer (the reasoning
stack, or the pooled baseline used by ablations) turns them into logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.modules import Module
from .autodiff.tensor import ShapeError, Tensor
from .perception import Encoder, EncoderConfig, ProjectionHead
from .reasoning import PooledScoreHead, ReasoningConfig, ReasoningStack
from .seeds import Stream

HEADS = ("reasoning", "pooled")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    reasoning: ReasoningConfig = field(default_factory=ReasoningConfig)
    head: str = "reasoning"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")

    def to_dict(self) -> dict:
        return {
            "encoder": {"resolution": self.encoder.resolution,
                        "in_channels": self.encoder.in_channels,
                        "widths": list(self.encoder.widths),
                        "norm_groups": self.encoder.norm_groups,
                        "proj_dim": self.encoder.proj_dim},
            "reasoning": {"num_blocks": self.reasoning.num_blocks,
                          "context_mode": self.reasoning.context_mode,
                          "eval_permutation": self.reasoning.eval_permutation,
                          "contrast_weight": self.reasoning.contrast_weight},
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        enc = dict(payload["encoder"])
        enc["widths"] = tuple(enc["widths"])
        return cls(encoder=EncoderConfig(**enc),
                   reasoning=ReasoningConfig(**payload["reasoning"]),
                   head=payload["head"])


def panel_batch_to_slots(images: np.ndarray) -> np.ndarray:
    """uint8 panels (N, 4, H, W, 3) -> float32 slot-major batch (4N, 3, H, W)."""
    if images.ndim != 5 or images.shape[1] != 4 or images.shape[4] != 3:
        raise ShapeError(f"expected panels shaped (N, 4, H, W, 3), got {images.shape}")
    if images.dtype != np.uint8:
        raise ShapeError(f"expected uint8 panel images, got {images.dtype}")
    n = images.shape[0]
    stacked = np.transpose(images, (1, 0, 4, 2, 3)).reshape(
        4 * n, 3, images.shape[2], images.shape[3])
    return np.ascontiguousarray(stacked).astype(np.float32) / np.float32(255.0)


class PanelModel(Module):
    def __init__(self, cfg: ModelConfig, stream: Stream):
        super().__init__()
        self.cfg = cfg
        self.encoder = self.add_module("encoder", Encoder(cfg.encoder, stream))
        self.projection = self.add_module("projection", ProjectionHead(cfg.encoder, stream))
        channels = cfg.encoder.out_channels
        if cfg.head == "reasoning":
            self.scorer = self.add_module("scorer",
                                          ReasoningStack(channels, cfg.reasoning, stream))
        else:
            self.scorer = self.add_module("scorer", PooledScoreHead(channels, stream))

    def slot_features(self, images: np.ndarray) -> list[Tensor]:
        """Per-slot feature maps, each (N, C, h, w), slots in panel order."""
        batch = Tensor(panel_batch_to_slots(images))
        n = images.shape[0]
        return ops.split(self.encoder(batch), [n, n, n, n], axis=0)

    def slot_embeddings(self, slots: list[Tensor]) -> Tensor:
        """Projection embeddings arranged (N, 4, proj_dim)."""
        n = slots[0].shape[0]
        dim = self.cfg.encoder.proj_dim
        cols = [ops.reshape(self.projection(s), (n, 1, dim)) for s in slots]
        return ops.concat(cols, axis=1)

    def logits(self, slots: list[Tensor], train: bool = False,
               stream: Stream | None = None, collect_errors: bool = False):
        if self.cfg.head == "reasoning":
            return self.scorer(slots, train=train, stream=stream,
                               collect_errors=collect_errors)
        out = self.scorer(slots)
        if collect_errors:
            return out, None
        return out
