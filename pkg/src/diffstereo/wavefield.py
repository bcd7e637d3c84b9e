"""Wave-optics model of the illumination module.

A collimated laser field passes a phase plate (height map), propagates to the
far field, and lands in the scene as an intensity pattern that is finally
resampled onto the camera pixel grid. All heavy numerics live in
:mod:`diffstereo.kernels`; this module owns the domain types plus validation.

Geometry of the resampling step: the projected pattern has a depth-dependent
native pitch ``v = wavelength * z / (pitch_u * N)`` while a camera pixel spans
``pixel_p * z / focal_f`` at depth ``z``. Their ratio

    s = pixel_p * pitch_u * N / (focal_f * wavelength)

is depth independent, so one resampled pattern serves every scene depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, ShapeError


@dataclass
class ComplexField:
    """Sampled complex wave: amplitude/phase as (re, im) grids plus grid metadata."""

    re: np.ndarray
    im: np.ndarray
    pitch_u: float
    wavelength_lambda: float

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=float)
        self.im = np.asarray(self.im, dtype=float)
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {self.re.shape} vs im {self.im.shape}")
        if self.re.ndim != 2 or self.re.shape[0] != self.re.shape[1] or self.re.shape[0] < 2:
            raise ShapeError(f"field must be square N x N with N >= 2, got {self.re.shape}")
        if self.pitch_u <= 0 or self.wavelength_lambda <= 0:
            raise ConfigError("pitch_u and wavelength_lambda must be positive")

    @property
    def n(self) -> int:
        return self.re.shape[0]

    @property
    def complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    @property
    def phase(self) -> np.ndarray:
        return np.arctan2(self.im, self.re)

    def power(self) -> float:
        return float(np.sum(self.re**2 + self.im**2))

    @classmethod
    def from_complex(cls, u: np.ndarray, pitch_u: float, wavelength_lambda: float) -> "ComplexField":
        u = np.asarray(u)
        return cls(u.real.copy(), u.imag.copy(), pitch_u, wavelength_lambda)

    @classmethod
    def plane_wave(
        cls,
        n: int,
        pitch_u: float,
        wavelength_lambda: float,
        amplitude: float = 1.0,
        circular_aperture: bool = False,
    ) -> "ComplexField":
        """Collimated uniform input wavefront; optional circular apodization."""
        re = np.full((n, n), float(amplitude))
        if circular_aperture:
            c = n // 2
            yy, xx = np.mgrid[0:n, 0:n]
            re[(yy - c) ** 2 + (xx - c) ** 2 > (n / 2.0) ** 2] = 0.0
        return cls(re, np.zeros((n, n)), pitch_u, wavelength_lambda)


@dataclass
class DOEProfile:
    """Fabricable phase plate: wrapped height map plus material metadata.

    Heights live on the circle [0, max_height) where
    ``max_height = wavelength / (eta - 1)`` produces exactly one phase turn;
    the constructor wraps whatever it is given.
    """

    height_h: np.ndarray
    refractive_index_eta: float
    wavelength_lambda: float
    pitch_u: float
    num_quant_levels: int = 16

    def __post_init__(self):
        if self.refractive_index_eta <= 1.0:
            raise ConfigError(f"refractive index must exceed 1, got {self.refractive_index_eta}")
        if self.num_quant_levels < 2:
            raise ConfigError("num_quant_levels must be at least 2")
        if self.wavelength_lambda <= 0 or self.pitch_u <= 0:
            raise ConfigError("wavelength and pitch must be positive")
        self.height_h = np.asarray(self.height_h, dtype=float) % self.max_height
        if self.height_h.ndim != 2 or self.height_h.shape[0] != self.height_h.shape[1]:
            raise ShapeError(f"height map must be square, got {self.height_h.shape}")

    @property
    def n(self) -> int:
        return self.height_h.shape[0]

    @property
    def max_height(self) -> float:
        return self.wavelength_lambda / (self.refractive_index_eta - 1.0)

    @property
    def phase_coeff(self) -> float:
        """Radians of delay per meter of height: 2 pi (eta - 1) / wavelength."""
        return 2.0 * math.pi * (self.refractive_index_eta - 1.0) / self.wavelength_lambda

    def phase_delay(self) -> np.ndarray:
        return self.phase_coeff * self.height_h

    @classmethod
    def random(cls, n, eta, wavelength, pitch_u, levels=16, seed=0) -> "DOEProfile":
        rng = np.random.default_rng(seed)
        max_h = wavelength / (eta - 1.0)
        return cls(rng.uniform(0.0, max_h, (n, n)), eta, wavelength, pitch_u, levels)


@dataclass
class IlluminationPattern:
    """Projected intensity pattern with its native-pitch bookkeeping."""

    intensity: np.ndarray
    pitch_u: float
    wavelength_lambda: float
    camera_resampled: bool = False

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        if np.any(self.intensity < -1e-12):
            raise NumericError("intensity pattern must be non-negative")
        self.intensity = np.maximum(self.intensity, 0.0)

    @property
    def n(self) -> int:
        return self.intensity.shape[0]

    def native_pitch(self, z: float) -> float:
        """Physical pitch of one pattern sample at propagation distance z."""
        return self.wavelength_lambda * z / (self.pitch_u * self.n)


def apply_doe(field: ComplexField, doe: DOEProfile) -> ComplexField:
    """Add the plate's phase delay to the field; amplitude is untouched."""
    if field.re.shape != doe.height_h.shape:
        raise ShapeError(f"field {field.re.shape} vs DOE {doe.height_h.shape}")
    u = kernels.apply_phase(field.complex, doe.phase_delay())
    return ComplexField.from_complex(u, field.pitch_u, field.wavelength_lambda)


def propagate_far_field(field: ComplexField) -> ComplexField:
    """Far-field propagation as a centered unitary 2-D Fourier transform."""
    u = field.complex
    if not np.all(np.isfinite(u)):
        raise NumericError("field contains non-finite samples")
    return ComplexField.from_complex(
        kernels.dft2_unitary(u), field.pitch_u, field.wavelength_lambda
    )


def field_intensity(field: ComplexField) -> IlluminationPattern:
    """Squared magnitude of the propagated wave."""
    return IlluminationPattern(
        field.re**2 + field.im**2, field.pitch_u, field.wavelength_lambda
    )


def camera_scale_factor(pattern_pitch_u: float, n: int, wavelength: float, rig) -> float:
    """Depth-independent pattern-to-camera-pixel rescale factor."""
    return rig.pixel_p * pattern_pitch_u * n / (rig.focal_f * wavelength)


def resample_to_camera(pattern: IlluminationPattern, rig) -> IlluminationPattern:
    """Bicubic-rescale the pattern onto the camera pixel grid (once)."""
    if pattern.camera_resampled:
        raise ConfigError("pattern was already resampled to the camera grid")
    s = camera_scale_factor(pattern.pitch_u, pattern.n, pattern.wavelength_lambda, rig)
    if not np.isfinite(s) or s <= 0:
        raise ConfigError(f"invalid resampling scale factor {s}")
    out = np.maximum(kernels.resample_bicubic(pattern.intensity, s), 0.0)
    resampled = IlluminationPattern(out, pattern.pitch_u, pattern.wavelength_lambda, True)
    return resampled


def quantize_heights(doe: DOEProfile) -> DOEProfile:
    """Snap heights to the plate's uniform fabrication levels (wrap-aware)."""
    hq = kernels.quantize_wrap(doe.height_h, doe.num_quant_levels, doe.max_height)
    return DOEProfile(
        hq, doe.refractive_index_eta, doe.wavelength_lambda, doe.pitch_u, doe.num_quant_levels
    )


def add_zeroth_order(pattern: IlluminationPattern, kappa: float) -> IlluminationPattern:
    """Fabrication-imperfection hook: mix an undiffracted center spot back in."""
    if kappa == 0.0:
        return pattern
    if not (0.0 <= kappa < 1.0):
        raise ConfigError("zeroth-order fraction must lie in [0, 1)")
    p = pattern.intensity
    spot = np.zeros_like(p)
    c = pattern.n // 2
    spot[c, c] = p.sum()
    return IlluminationPattern(
        (1.0 - kappa) * p + kappa * spot,
        pattern.pitch_u,
        pattern.wavelength_lambda,
        pattern.camera_resampled,
    )


def simulate_pattern(doe: DOEProfile, rig, circular_aperture: bool = False,
                     kappa_zeroth: float = 0.0) -> IlluminationPattern:
    """Laser -> DOE -> far field -> intensity -> camera grid, in one call."""
    src = ComplexField.plane_wave(
        doe.n, doe.pitch_u, doe.wavelength_lambda, circular_aperture=circular_aperture
    )
    far = propagate_far_field(apply_doe(src, doe))
    pattern = add_zeroth_order(field_intensity(far), kappa_zeroth)
    return resample_to_camera(pattern, rig)


@dataclass
class WaveConfig:
    """Wavefield knobs bundled for the optimizers and the CLI."""

    n: int
    pitch_u: float
    wavelength: float
    eta: float
    quant_levels: int = 16
    circular_aperture: bool = False
    kappa_zeroth: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("grid size must be at least 2")
        if self.eta <= 1.0:
            raise ConfigError("refractive index must exceed 1")
        if min(self.pitch_u, self.wavelength) <= 0:
            raise ConfigError("pitch and wavelength must be positive")

    @property
    def max_height(self) -> float:
        return self.wavelength / (self.eta - 1.0)

    @classmethod
    def toy(cls, n: int, rig, eta: float = 1.5, wavelength: float = 850e-9) -> "WaveConfig":
        """Pick pitch_u so the camera rescale factor is exactly 1 for this rig."""
        pitch = rig.focal_f * wavelength / (rig.pixel_p * n)
        return cls(n=n, pitch_u=pitch, wavelength=wavelength, eta=eta)
