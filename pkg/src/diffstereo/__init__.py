"""Differentiable active-stereo structured-illumination toolkit.

Simulates the laser -> phase plate -> far field -> scene -> stereo sensor
light transport, reconstructs disparity with a trinocular cost-volume matcher,
and optimizes the plate surface and matcher parameters end to end.
"""

__version__ = "0.1.0"

from .diffengine import DiffValue, Tape, backward, check_gradients, record
from .matcher import MatcherParams, block_match_baseline, reconstruct
from .optimize import (
    EnvironmentPreset,
    JointConfig,
    OptimState,
    design_doe_for_target,
    joint_optimize,
    pattern_metrics,
    preset,
)
from .scenesim import (
    CameraRig,
    CaptureConfig,
    SceneSample,
    capture,
    generate_toy_scene,
    ingest_dataset,
    synthesize_stereo,
    warp_pattern,
)
from .wavefield import (
    ComplexField,
    DOEProfile,
    IlluminationPattern,
    WaveConfig,
    apply_doe,
    field_intensity,
    propagate_far_field,
    quantize_heights,
    resample_to_camera,
)

__all__ = [
    "__version__",
    "DiffValue", "Tape", "backward", "check_gradients", "record",
    "MatcherParams", "block_match_baseline", "reconstruct",
    "EnvironmentPreset", "JointConfig", "OptimState", "design_doe_for_target",
    "joint_optimize", "pattern_metrics", "preset",
    "CameraRig", "CaptureConfig", "SceneSample", "capture", "generate_toy_scene",
    "ingest_dataset", "synthesize_stereo", "warp_pattern",
    "ComplexField", "DOEProfile", "IlluminationPattern", "WaveConfig",
    "apply_doe", "field_intensity", "propagate_far_field", "quantize_heights",
    "resample_to_camera",
]
