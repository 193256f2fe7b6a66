"""Network, configuration, and per-scene geometric precomputation."""

from .config import ModelConfig
from .network import ForwardOutputs, Model, TextEmbedding
from .scene_geometry import (
    ENCODER_INPUT_DIM,
    GeometryCache,
    SceneGeometry,
    build_scene_geometry,
    encoder_inputs,
)

__all__ = [
    "ENCODER_INPUT_DIM",
    "ForwardOutputs",
    "GeometryCache",
    "Model",
    "ModelConfig",
    "SceneGeometry",
    "TextEmbedding",
    "build_scene_geometry",
    "encoder_inputs",
]
