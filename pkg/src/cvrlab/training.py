"""Training, evaluation, and the ablation grid runner.

Each batch step follows the same fixed order: build the augmented views,
encode them, compute the contrastive loss on projection embeddings, run the
reasoning stack on the first view's feature maps, compute the scoring loss,
combine, and take one Adam step.  Every random choice (batch order, view
parameters, context shuffles, weight init) is derived from the config seed,
so a run is reproducible bit for bit under a fixed thread configuration.

Evaluation always sees raw, unaugmented panels.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, mask_blocks, strong_images, weak_images
from .autodiff.adam import Adam
from .autodiff.tensor import NumericsError
from .model import ModelConfig, PanelModel
from .perception import EncoderConfig, contrast_loss
from .reasoning import ReasoningConfig, bce_loss, total_loss
from .seeds import Stream, derive
from .taskgen import PanelDataset

CONTRAST_MODES = ("weak-strong", "weak-only", "strong-only", "none")

HISTORY_HEADER = ("epoch", "L", "L_BCE", "L_C", "val_acc", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    early_stop_patience: int = 20
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    contrast_weight: float = 0.1
    num_blocks: int = 3
    seed: int = 0
    resolution: int = 64
    widths: tuple = (16, 32, 64, 64)
    proj_dim: int = 128
    context_mode: str = "both"
    eval_permutation: str = "average-all"
    contrast_mode: str = "weak-strong"
    head: str = "reasoning"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    bce_soft: bool = False
    # convenience stop for smoke runs; None trains to epochs/patience
    stop_at_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        for name in ("early_stop_patience", "batch_size", "num_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or self.weight_decay < 0 or self.contrast_weight < 0:
            raise ValueError("lr must be positive; weight_decay and contrast_weight nonnegative")
        if self.contrast_mode not in CONTRAST_MODES:
            raise ValueError(f"contrast_mode must be one of {CONTRAST_MODES}, "
                             f"got {self.contrast_mode!r}")
        if self.stop_at_accuracy is not None and not 0.0 < self.stop_at_accuracy <= 1.0:
            raise ValueError(f"stop_at_accuracy must lie in (0, 1], got {self.stop_at_accuracy}")

    def model_config(self) -> ModelConfig:
        encoder = EncoderConfig(resolution=self.resolution, widths=tuple(self.widths),
                                proj_dim=self.proj_dim)
        reasoning = ReasoningConfig(num_blocks=self.num_blocks,
                                    context_mode=self.context_mode,
                                    eval_permutation=self.eval_permutation,
                                    contrast_weight=self.contrast_weight)
        return ModelConfig(encoder=encoder, reasoning=reasoning, head=self.head)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        augment = d.pop("augment", None)
        if augment is not None and not isinstance(augment, AugmentConfig):
            augment = AugmentConfig(**augment)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(augment=augment or AugmentConfig(), **d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    bce: float
    contrast: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainHistory:
    records: list
    best_epoch: int
    best_accuracy: float | None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_HEADER)
            for r in self.records:
                writer.writerow([r.epoch, f"{r.loss:.8g}", f"{r.bce:.8g}",
                                 f"{r.contrast:.8g}", f"{r.val_accuracy:.8g}",
                                 f"{r.seconds:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        records = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != HISTORY_HEADER:
                raise ValueError(f"unexpected history header {header}")
            for row in reader:
                records.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]),
                                           float(row[3]), float(row[4]), float(row[5])))
        best_epoch, best_acc = 0, None
        for r in records:
            if best_acc is None or r.val_accuracy > best_acc:
                best_epoch, best_acc = r.epoch, r.val_accuracy
        return cls(records, best_epoch, best_acc)


def _check_dataset(ds: PanelDataset, cfg: TrainConfig, name: str) -> None:
    if len(ds) == 0:
        raise ValueError(f"{name} dataset is empty")
    if ds.resolution != cfg.resolution:
        raise ValueError(f"{name} dataset resolution {ds.resolution} does not match "
                         f"the configured {cfg.resolution}")


def _train_views(images: np.ndarray, ds_indices: np.ndarray, epoch: int,
                 cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray | None]:
    """Augmented view pair for one batch; the second view is None without
    a contrastive branch."""
    first = np.empty_like(images)
    second = None if cfg.contrast_mode == "none" else np.empty_like(images)
    for row, ds_index in enumerate(ds_indices):
        seed = derive(cfg.seed, "aug", epoch, int(ds_index))
        panel = images[row]
        if cfg.contrast_mode == "weak-strong":
            first[row] = weak_images(panel, seed, cfg.augment)
            second[row] = strong_images(panel, seed, cfg.augment)
        elif cfg.contrast_mode == "weak-only":
            first[row] = weak_images(panel, seed, cfg.augment)
            second[row] = weak_images(panel, derive(seed, "second"), cfg.augment)
        elif cfg.contrast_mode == "strong-only":
            first[row] = panel
            second[row] = mask_blocks(panel, seed, cfg.augment)
        else:
            first[row] = weak_images(panel, seed, cfg.augment)
    return first, second


def _one_hot(outliers: np.ndarray) -> np.ndarray:
    mask = np.zeros((outliers.shape[0], 4), dtype=np.float32)
    mask[np.arange(outliers.shape[0]), outliers] = 1.0
    return mask


def predict_logits(model: PanelModel, ds: PanelDataset, batch_size: int = 64) -> np.ndarray:
    out = np.empty((len(ds), 4), dtype=np.float32)
    for start in range(0, len(ds), batch_size):
        stop = min(start + batch_size, len(ds))
        slots = model.slot_features(ds.images[start:stop])
        out[start:stop] = model.logits(slots).data
    return out


def error_norms(model: PanelModel, ds: PanelDataset, batch_size: int = 64) -> np.ndarray | None:
    """Depth-1 prediction-error norms per slot, (N, 4); None for the pooled head."""
    if model.cfg.head != "reasoning":
        return None
    out = np.empty((len(ds), 4), dtype=np.float64)
    for start in range(0, len(ds), batch_size):
        stop = min(start + batch_size, len(ds))
        slots = model.slot_features(ds.images[start:stop])
        _, norms = model.logits(slots, collect_errors=True)
        out[start:stop] = norms
    return out


def accuracy(model: PanelModel, ds: PanelDataset, batch_size: int = 64) -> float:
    preds = np.argmax(predict_logits(model, ds, batch_size), axis=1)
    return float(np.mean(preds == ds.outliers))


def evaluate(model: PanelModel, ds: PanelDataset, batch_size: int = 64) -> dict:
    """Accuracy overall and per rule, plus prediction-error norm summaries."""
    logits = predict_logits(model, ds, batch_size)
    preds = np.argmax(logits, axis=1)
    correct = preds == ds.outliers
    per_rule: dict[str, dict] = {}
    for rule in sorted(set(ds.rules)):
        idx = np.array([i for i, r in enumerate(ds.rules) if r == rule])
        per_rule[rule] = {"n": int(idx.size),
                          "accuracy": float(np.mean(correct[idx]))}
    metrics = {"n_panels": int(len(ds)),
               "accuracy": float(np.mean(correct)),
               "per_rule": per_rule}
    norms = error_norms(model, ds, batch_size)
    if norms is None:
        metrics["outlier_error_norm"] = None
        metrics["normal_error_norm"] = None
    else:
        rows = np.arange(len(ds))
        outlier_col = norms[rows, ds.outliers]
        normal_mean = (norms.sum(axis=1) - outlier_col) / 3.0
        metrics["outlier_error_norm"] = float(outlier_col.mean())
        metrics["normal_error_norm"] = float(normal_mean.mean())
    return metrics


def train(cfg: TrainConfig, train_ds: PanelDataset, val_ds: PanelDataset,
          log=None) -> tuple[PanelModel, TrainHistory, dict]:
    """Returns the final model, the history, and the best-epoch state dict.

    With epochs=0 the best state is the initialization.  Early stopping
    keeps the earliest epoch among ties and never trains more than
    `early_stop_patience` epochs past the best validation accuracy.
    """
    _check_dataset(train_ds, cfg, "train")
    _check_dataset(val_ds, cfg, "val")
    model = PanelModel(cfg.model_config(), Stream(derive(cfg.seed, "init")))
    opt = Adam(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    records: list[EpochRecord] = []
    best_state = model.state_dict()
    best_epoch, best_acc = 0, None

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = Stream(derive(cfg.seed, "order", epoch)).permutation(len(train_ds))
        sums = np.zeros(3, dtype=np.float64)
        steps = 0
        for step, start in enumerate(range(0, len(train_ds), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            outliers = train_ds.outliers[idx]
            first, second = _train_views(train_ds.images[idx], idx, epoch, cfg)

            slots = model.slot_features(first)
            context_stream = Stream(derive(cfg.seed, "ctx", epoch, step))
            logits = model.logits(slots, train=True, stream=context_stream)
            task = bce_loss(logits, outliers, soft=cfg.bce_soft)
            contrast = None
            if cfg.contrast_mode != "none":
                strong_slots = model.slot_features(second)
                contrast = contrast_loss(model.slot_embeddings(slots),
                                         model.slot_embeddings(strong_slots),
                                         _one_hot(outliers))
            loss = total_loss(task, contrast, cfg.contrast_weight)
            values = (float(loss.data), float(task.data),
                      0.0 if contrast is None else float(contrast.data))
            if not all(np.isfinite(v) for v in values):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch} batch {step}: "
                    f"total={values[0]} bce={values[1]} contrast={values[2]}")
            model.zero_grad()
            loss.backward()
            opt.step()
            sums += values
            steps += 1

        val_acc = accuracy(model, val_ds, cfg.batch_size)
        record = EpochRecord(epoch, sums[0] / steps, sums[1] / steps, sums[2] / steps,
                             val_acc, time.perf_counter() - started)
        records.append(record)
        if best_acc is None or val_acc > best_acc:
            best_epoch, best_acc = epoch, val_acc
            best_state = model.state_dict()
        if log:
            log(f"epoch {epoch}: L={record.loss:.4f} bce={record.bce:.4f} "
                f"contrast={record.contrast:.4f} val_acc={val_acc:.4f} "
                f"({record.seconds:.1f}s)")
        if cfg.stop_at_accuracy is not None and val_acc >= cfg.stop_at_accuracy:
            break
        if epoch - best_epoch >= cfg.early_stop_patience:
            break

    return model, TrainHistory(records, best_epoch, best_acc), best_state


ABLATION_GRIDS = {
    "components": (("full", {}),
                   ("no-contrast", {"contrast_mode": "none"}),
                   ("pooled-head", {"head": "pooled"})),
    "augment": (("both", {}),
                ("weak-only", {"contrast_mode": "weak-only"}),
                ("strong-only", {"contrast_mode": "strong-only"})),
    "k": tuple((f"k={v}", {"num_blocks": v}) for v in (1, 2, 3, 4)),
    "lambda": tuple((f"lambda={v:.2f}", {"contrast_weight": v})
                    for v in (0.02, 0.05, 0.10, 0.20)),
}

REPORT_HEADER = ("cell", "seed", "num_blocks", "contrast_weight", "contrast_mode",
                 "head", "epochs_run", "best_epoch", "val_accuracy", "test_accuracy")


def ablate(cfg: TrainConfig, grid: str, train_ds: PanelDataset, val_ds: PanelDataset,
           test_ds: PanelDataset, seeds=(0, 1, 2), log=None) -> list[dict]:
    """One training run per (cell, seed); rows carry val and test accuracy."""
    if grid not in ABLATION_GRIDS:
        raise ValueError(f"unknown ablation grid {grid!r}; "
                         f"choose from {sorted(ABLATION_GRIDS)}")
    rows = []
    for cell, overrides in ABLATION_GRIDS[grid]:
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, **overrides)
            if log:
                log(f"[{grid}] cell {cell} seed {seed}")
            model, history, best_state = train(run_cfg, train_ds, val_ds, log=log)
            model.load_state(best_state)
            val_acc = history.best_accuracy
            if val_acc is None:
                val_acc = accuracy(model, val_ds, run_cfg.batch_size)
            metrics = evaluate(model, test_ds, run_cfg.batch_size)
            rows.append({"cell": cell, "seed": seed,
                         "num_blocks": run_cfg.num_blocks,
                         "contrast_weight": run_cfg.contrast_weight,
                         "contrast_mode": run_cfg.contrast_mode,
                         "head": run_cfg.head,
                         "epochs_run": len(history.records),
                         "best_epoch": history.best_epoch,
                         "val_accuracy": val_acc,
                         "test_accuracy": metrics["accuracy"]})
    return rows


def write_report(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
