"""Multi-object, intent-conditioned 3D affordance grounding at desk scale.

Subsystems: `autodiff` (float64 reverse-mode engine), `geometry`
(deterministic point-cloud kernels), `synth` (procedural confusable-scene
benchmark generator), `model` (instance-bounded cross-injection network),
`losses`, `metrics`, `train`, and the `compass3d` CLI.
"""

__version__ = "0.1.0"
