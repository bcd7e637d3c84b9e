"""Trinocular disparity estimation with differentiable building blocks.

Feature extraction -> wide (left/right) and narrow (left/projector) cost
volumes -> baseline-ratio fusion -> softmax disparity regression. Everything
routes through the diffengine primitives, so the same code serves plain
inference and gradient-based optimization of both the illumination pattern and
the feature parameters.

Disparity bookkeeping: wide candidates d in [0, d_max); the matching narrow
candidate is d / (b_wide / b_narrow), looked up with linear interpolation
between narrow slices (the projector sits closer, so its disparities are
smaller by the baseline ratio).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from . import kernels
from .errors import ConfigError, NumericError, ShapeError

FEATURE_MODES = ("identity", "patch", "learned-linear")


@dataclass
class MatcherParams:
    """Feature mode plus the knobs shared by all modes.

    For ``learned-linear``, ``cam_layers`` / ``illum_layers`` hold (kernel,
    bias) pairs; the camera encoder is shared between the two views, the
    projector image gets its own. Entries may be plain arrays (inference) or
    tape leaves (joint optimization).
    """

    feature_mode: str = "patch"
    patch_window: int = 5
    agg_window: int = 5
    temperature: float = 1.0
    cam_layers: list = field(default_factory=list)
    illum_layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}; pick from {FEATURE_MODES}")
        if self.patch_window % 2 == 0 or self.agg_window % 2 == 0:
            raise ConfigError("windows must be odd")
        if self.temperature <= 0:
            raise ConfigError("softmax temperature must be positive")
        if self.feature_mode == "learned-linear" and not (self.cam_layers and self.illum_layers):
            raise ConfigError("learned-linear mode needs cam_layers and illum_layers")

    @classmethod
    def learned_linear(
        cls, channels: int = 4, ksize: int = 3, num_layers: int = 1,
        seed: int = 0, init_noise: float = 0.05, **kw,
    ) -> "MatcherParams":
        """Near-identity init: centered delta kernels plus small seeded noise."""
        rng = np.random.default_rng(seed)

        def make_stack():
            layers = []
            c_in = 1
            for _ in range(num_layers):
                k = rng.standard_normal((channels, c_in, ksize, ksize)) * init_noise
                k[:, :, ksize // 2, ksize // 2] += 1.0 / max(c_in, 1)
                layers.append((k, np.zeros(channels)))
                c_in = channels
            return layers

        return cls(feature_mode="learned-linear", cam_layers=make_stack(),
                   illum_layers=make_stack(), **kw)

    def parameter_arrays(self) -> list:
        """Flat leaf list (cam kernels/biases, then illum) for the optimizer."""
        out = []
        for layers in (self.cam_layers, self.illum_layers):
            for k, b in layers:
                out.extend([k, b])
        return out

    def with_parameter_arrays(self, arrays) -> "MatcherParams":
        arrays = list(arrays)
        expected = 2 * (len(self.cam_layers) + len(self.illum_layers))
        if len(arrays) != expected:
            raise ShapeError(f"expected {expected} parameter arrays, got {len(arrays)}")
        it = iter(arrays)
        cam = [(next(it), next(it)) for _ in self.cam_layers]
        illum = [(next(it), next(it)) for _ in self.illum_layers]
        return MatcherParams(
            self.feature_mode, self.patch_window, self.agg_window, self.temperature,
            cam, illum,
        )


def extract_features(image, params: MatcherParams, source: str):
    """[C, H, W] feature map for one input image ([H, W])."""
    if source not in ("left", "right", "illumination"):
        raise ConfigError(f"unknown source {source!r}")
    if params.feature_mode == "identity":
        h, w = np.shape(de.value_of(image))
        return de.reshape(image, (1, h, w))
    if params.feature_mode == "patch":
        return de.patch_features(image, params.patch_window)
    layers = params.illum_layers if source == "illumination" else params.cam_layers
    h, w = np.shape(de.value_of(image))
    y = de.reshape(image, (1, h, w))
    for k, b in layers:
        y = de.conv2d(y, k, b)
    return y


def build_cost_volume(f_ref, f_other, d_max: int, params: MatcherParams):
    """Windowed-L1 feature cost over integer disparity candidates."""
    w = np.shape(de.value_of(f_ref))[-1]
    if d_max >= w:
        raise ShapeError(f"d_max={d_max} must be smaller than the image width {w}")
    return de.cost_volume(f_ref, f_other, d_max, params.agg_window)


def fuse_volumes(c_wide, c_narrow, ratio: float):
    """fused[d] = wide[d] + narrow[d / ratio]; ratio = b_wide / b_narrow."""
    if ratio <= 0:
        raise ConfigError("baseline ratio must be positive")
    return de.fuse_cost_volumes(c_wide, c_narrow, ratio)


def regress_disparity(volume, temperature: float):
    """Softmax-weighted disparity expectation (fully differentiable)."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    v = de.value_of(volume)
    if not np.all(np.isfinite(v)):
        raise NumericError("cost volume contains non-finite entries")
    return de.soft_argmin(volume, temperature)


def narrow_range(d_max: int, ratio: float) -> int:
    """Narrow slices needed so every d/ratio lookup can interpolate."""
    return int(math.ceil((d_max - 1) / ratio)) + 1


def reconstruct(x_l, x_r, x_illum, params: MatcherParams, rig, d_max: int,
                trinocular: bool = True):
    """Left-view disparity from the trinocular inputs (DiffValue in, DiffValue out).

    In binocular mode the projector image is ignored and only the wide volume
    drives the regression.
    """
    f_l = extract_features(x_l, params, "left")
    f_r = extract_features(x_r, params, "right")
    volume = build_cost_volume(f_l, f_r, d_max, params)
    if trinocular:
        if x_illum is None:
            raise ConfigError("trinocular mode needs the illumination image")
        ratio = rig.baseline_ratio
        f_i = extract_features(x_illum, params, "illumination")
        c_narrow = build_cost_volume(f_l, f_i, narrow_range(d_max, ratio), params)
        volume = fuse_volumes(volume, c_narrow, ratio)
    return regress_disparity(volume, params.temperature)


def block_match_baseline(x_l: np.ndarray, x_r: np.ndarray, window: int, d_max: int) -> np.ndarray:
    """Classic SAD block matching; argmin ties break toward the smallest d."""
    if window % 2 == 0:
        raise ConfigError("block-matching window must be odd")
    x_l = np.asarray(x_l, dtype=float)[None]
    x_r = np.asarray(x_r, dtype=float)[None]
    cost = kernels.cost_volume(x_l, x_r, d_max, window)
    return np.argmin(cost, axis=0).astype(float)  # np.argmin returns the first minimum
