"""Dataset assembly and the on-disk interchange format.

A dataset directory holds `manifest.jsonl` (one record per panel: id, rule,
outlier index, seed), the images under `img/<id>_<slot>.ppm`, and a
`dataset.json` sidecar with the dataset-wide fields (resolution, generator
version, master seed).  Panels regenerate bit-exactly from their manifest
record, which is what the determinism tests lean on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..seeds import derive
from .generator import SEED_ATTEMPTS, GenerationError, Panel, sample_panel
from .ppm import read_ppm, write_ppm
from .rules import PlacementError, get_rule

GENERATOR_VERSION = "cvrlab-gen-1"


class DataError(RuntimeError):
    pass


@dataclass
class PanelDataset:
    images: np.ndarray            # (N, 4, res, res, 3) uint8
    outliers: np.ndarray          # (N,) int64
    rules: list[str]
    ids: list[str]
    seeds: list[int]
    resolution: int
    master_seed: int | None = None
    scenes: list | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, indices) -> "PanelDataset":
        idx = list(int(i) for i in indices)
        return PanelDataset(
            images=self.images[idx],
            outliers=self.outliers[idx],
            rules=[self.rules[i] for i in idx],
            ids=[self.ids[i] for i in idx],
            seeds=[self.seeds[i] for i in idx],
            resolution=self.resolution,
            master_seed=self.master_seed,
            scenes=None if self.scenes is None else [self.scenes[i] for i in idx],
        )


def _panel_with_retries(rule_name: str, master_seed: int, panel_index: int, resolution: int) -> Panel:
    for attempt in range(SEED_ATTEMPTS):
        seed = derive(master_seed, "panel", panel_index, attempt)
        try:
            return sample_panel(rule_name, seed, resolution)
        except PlacementError:
            continue
    raise GenerationError(
        f"panel {panel_index} ({rule_name}): placement failed for {SEED_ATTEMPTS} seeds in a row")


def generate_split(rules: list[str], per_rule: int, master_seed: int, resolution: int = 64,
                   start_index: int = 0, keep_scenes: bool = False) -> PanelDataset:
    """Generate `per_rule` panels for every named rule, interleaved.

    Panel ids are global: `start_index` lets successive splits continue the
    numbering so ids stay unique across a dataset's directories.
    """
    names = [get_rule(r).name for r in rules]
    if not names or per_rule <= 0:
        raise ValueError("need at least one rule and a positive panel count")
    total = per_rule * len(names)
    panels = []
    for i in range(total):
        panels.append(_panel_with_retries(names[i % len(names)], master_seed, start_index + i, resolution))
    return PanelDataset(
        images=np.stack([p.images for p in panels]),
        outliers=np.array([p.outlier_index for p in panels], dtype=np.int64),
        rules=[p.rule for p in panels],
        ids=[f"p{start_index + i:06d}" for i in range(total)],
        seeds=[p.seed for p in panels],
        resolution=resolution,
        master_seed=master_seed,
        scenes=[p.scenes for p in panels] if keep_scenes else None,
    )


def write_dataset(ds: PanelDataset, out_dir) -> None:
    img_dir = os.path.join(out_dir, "img")
    os.makedirs(img_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="ascii") as fh:
        for i in range(len(ds)):
            record = {"id": ds.ids[i], "rule": ds.rules[i],
                      "outlier": int(ds.outliers[i]), "seed": int(ds.seeds[i])}
            fh.write(json.dumps(record, separators=(", ", ": ")) + "\n")
    for i in range(len(ds)):
        for slot in range(4):
            write_ppm(os.path.join(img_dir, f"{ds.ids[i]}_{slot}.ppm"), ds.images[i, slot])
    sidecar = {"resolution": ds.resolution, "generator_version": GENERATOR_VERSION,
               "master_seed": ds.master_seed, "panels": len(ds)}
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="ascii") as fh:
        fh.write(json.dumps(sidecar, indent=2) + "\n")


def load_dataset(in_dir) -> PanelDataset:
    manifest_path = os.path.join(in_dir, "manifest.jsonl")
    if not os.path.exists(manifest_path):
        raise DataError(f"{in_dir}: no manifest.jsonl")
    records = []
    with open(manifest_path, encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{manifest_path}:{line_no}: bad JSON") from exc
            for key in ("id", "rule", "outlier", "seed"):
                if key not in rec:
                    raise DataError(f"{manifest_path}:{line_no}: missing field {key!r}")
            if not 0 <= int(rec["outlier"]) <= 3:
                raise DataError(f"{manifest_path}:{line_no}: outlier index {rec['outlier']} out of range")
            records.append(rec)
    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{manifest_path}: duplicate panel ids")
    if not records:
        raise DataError(f"{manifest_path}: empty manifest")

    sidecar_path = os.path.join(in_dir, "dataset.json")
    master_seed = None
    if os.path.exists(sidecar_path):
        with open(sidecar_path, encoding="ascii") as fh:
            master_seed = json.load(fh).get("master_seed")

    images = []
    for rec in records:
        slots = []
        for slot in range(4):
            path = os.path.join(in_dir, "img", f"{rec['id']}_{slot}.ppm")
            if not os.path.exists(path):
                raise DataError(f"{manifest_path}: {rec['id']!r} references missing image {path}")
            slots.append(read_ppm(path))
        images.append(np.stack(slots))
    stacked = np.stack(images)
    if stacked.shape[2] != stacked.shape[3]:
        raise DataError(f"{in_dir}: images are not square")
    return PanelDataset(
        images=stacked,
        outliers=np.array([int(r["outlier"]) for r in records], dtype=np.int64),
        rules=[r["rule"] for r in records],
        ids=ids,
        seeds=[int(r["seed"]) for r in records],
        resolution=int(stacked.shape[2]),
        master_seed=master_seed,
    )
