"""Procedural four-image outlier panels with compositional rules."""

from .dataset import (DataError, GENERATOR_VERSION, PanelDataset, generate_split,
                      load_dataset, write_dataset)
from .generator import GenerationError, Panel, sample_panel
from .ppm import PPMError, read_ppm, write_ppm
from .raster import RasterError, rasterize
from .rules import (PlacementError, RuleSpec, get_rule, read_attribute, rule_catalog,
                    rule_names)
from .scene import SHAPE_KINDS, SceneObject

__all__ = [
    "DataError", "GENERATOR_VERSION", "GenerationError", "Panel", "PanelDataset",
    "PlacementError", "PPMError", "RasterError", "RuleSpec", "SHAPE_KINDS",
    "SceneObject", "generate_split", "get_rule", "load_dataset", "read_attribute",
    "read_ppm", "rasterize", "rule_catalog", "rule_names", "sample_panel",
    "write_dataset", "write_ppm",
]
