"""Procedural generator for confusable multi-object affordance scenes."""

from .dataset import DatasetView, SynthConfig, build_dataset
from .queries import QueryBank, default_bank, tokenize
from .scene import Scene, compose_scene, ground_truth_mask
from .templates import (
    AFFORDANCE_TYPES,
    CONFUSING_PAIRS,
    DISTRACTOR_CATEGORIES,
    TEMPLATES,
    ConfusingPairSpec,
    GeneratedObject,
    ObjectTemplate,
    RegionTooSmall,
    derive_seed,
    generate_object,
)

__all__ = [
    "AFFORDANCE_TYPES",
    "CONFUSING_PAIRS",
    "DISTRACTOR_CATEGORIES",
    "TEMPLATES",
    "ConfusingPairSpec",
    "DatasetView",
    "GeneratedObject",
    "ObjectTemplate",
    "QueryBank",
    "RegionTooSmall",
    "Scene",
    "SynthConfig",
    "build_dataset",
    "compose_scene",
    "default_bank",
    "derive_seed",
    "generate_object",
    "ground_truth_mask",
    "tokenize",
]
