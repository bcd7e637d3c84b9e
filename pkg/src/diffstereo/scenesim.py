"""Geometric-optics synthesis of the stereo captures.

The illumination pattern lives at the projector viewpoint. A scene point at
depth ``z`` has wide-baseline disparity ``D = focal_f * baseline_wide /
(pixel_p * z)`` between the cameras; relative to the projector the same point
shifts by ``+D * (b_narrow / b_wide)`` in the left view and by
``-D * (1 - b_narrow / b_wide)`` in the right view (rightward positive). With
the projector midway these are exactly +-D/2.

Sensor model per view: ``J = clamp(gamma * (alpha + beta * P_view) * refl +
noise)`` with the noise drawn once per capture from a seeded generator.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio, kernels
from .errors import ConfigError, ShapeError
from .wavefield import IlluminationPattern

log = logging.getLogger(__name__)

DEPTH_RANGE = (0.4, 3.0)  # validity range of the far-field model, meters


@dataclass
class CameraRig:
    """Stereo pair plus projector geometry. Defaults: 6 mm lens, 5.3 um pixels,
    55 mm stereo baseline, projector midway."""

    focal_f: float = 6e-3
    pixel_p: float = 5.3e-6
    baseline_wide: float = 55e-3
    baseline_narrow: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.baseline_narrow is None:
            self.baseline_narrow = self.baseline_wide / 2.0
        for name in ("focal_f", "pixel_p", "baseline_wide", "baseline_narrow"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"rig parameter {name} must be positive")

    @property
    def baseline_ratio(self) -> float:
        """b_wide / b_narrow, the factor between the two disparity scales."""
        return self.baseline_wide / self.baseline_narrow

    def disparity_at(self, z: float) -> float:
        """Wide-baseline disparity (pixels) of a point at depth z (meters)."""
        return self.focal_f * self.baseline_wide / (self.pixel_p * z)

    def depth_at(self, disparity) -> np.ndarray:
        return self.focal_f * self.baseline_wide / (self.pixel_p * np.asarray(disparity))

    def signed_narrow_disparity(self, disp, view: str) -> np.ndarray:
        """Projector-relative shift used to warp the pattern into a view."""
        disp = np.asarray(disp, dtype=float)
        r = self.baseline_narrow / self.baseline_wide
        if view == "left":
            return disp * r
        if view == "right":
            return -disp * (1.0 - r)
        raise ConfigError(f"view must be 'left' or 'right', got {view!r}")

    @classmethod
    def toy(cls, disparity_scale: float = 0.1) -> "CameraRig":
        """Default rig with the wide baseline scaled down for small toy grids."""
        return cls(baseline_wide=55e-3 * disparity_scale)


@dataclass
class CaptureConfig:
    """Imaging environment: exposure gamma, ambient alpha, laser power beta,
    Gaussian read noise, sensor range, RNG seed."""

    gamma: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    noise_sigma: float = 0.0
    clip_lo: float = 0.0
    clip_hi: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.alpha < 0 or self.beta < 0 or self.noise_sigma < 0:
            raise ConfigError("alpha, beta and noise_sigma must be non-negative")
        if not self.clip_lo < self.clip_hi:
            raise ConfigError("clip_lo must be below clip_hi")
        for v in (self.gamma, self.alpha, self.beta, self.noise_sigma):
            if not np.isfinite(v):
                raise ConfigError("capture parameters must be finite")


@dataclass
class SceneSample:
    """Per-view ground truth: disparity, reflectance, projector-visibility mask."""

    disp_L: np.ndarray
    disp_R: np.ndarray
    refl_L: np.ndarray
    refl_R: np.ndarray
    occ_L: np.ndarray
    occ_R: np.ndarray

    def __post_init__(self):
        grids = [self.disp_L, self.disp_R, self.refl_L, self.refl_R, self.occ_L, self.occ_R]
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise ShapeError(f"scene grids disagree on shape: {shapes}")
        h, w = self.disp_L.shape
        for d in (self.disp_L, self.disp_R):
            if not np.all(np.isfinite(d)) or d.min() < 0 or d.max() >= w:
                raise ShapeError("disparities must be finite, >= 0 and < grid width")

    @property
    def shape(self):
        return self.disp_L.shape

    def lr_valid_mask(self, thresh: float = 1.0) -> np.ndarray:
        """Left pixels whose disparity survives the left-right cross-check."""
        warped = kernels.warp_horizontal(self.disp_R, self.disp_L)
        xs = np.arange(self.shape[1])[None, :] - self.disp_L
        inside = (xs >= 0) & (xs <= self.shape[1] - 1)
        return inside & (np.abs(self.disp_L - warped) <= thresh)

    def matchable_mask(self, rig, thresh: float = 1.0) -> np.ndarray:
        """Left pixels with full matching support: left-right consistent,
        projector lit, and inside the projector's pattern footprint (both
        cameras sample the projected pattern at the same projector column, so
        one bounds check covers the pair)."""
        xp = np.arange(self.shape[1])[None, :] - rig.signed_narrow_disparity(self.disp_L, "left")
        covered = (xp >= 0) & (xp <= self.shape[1] - 1)
        return self.lr_valid_mask(thresh) & covered & (self.occ_L > 0)


def warp_pattern(pattern: IlluminationPattern, disp: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """Projector pattern seen from a camera: occ * P(x - d_signed), linear interp."""
    if not pattern.camera_resampled:
        raise ConfigError("pattern must be resampled to the camera grid before warping")
    p = pattern.intensity
    if p.shape != np.shape(disp) or p.shape != np.shape(occ):
        raise ShapeError(f"pattern {p.shape}, disp {np.shape(disp)}, occ {np.shape(occ)}")
    return np.asarray(occ, dtype=float) * kernels.warp_horizontal(p, np.asarray(disp, dtype=float))


def capture(p_view: np.ndarray, refl: np.ndarray, cfg: CaptureConfig, rng=None) -> np.ndarray:
    """Sensor image of one view; deterministic for a given seed."""
    if np.shape(p_view) != np.shape(refl):
        raise ShapeError(f"pattern {np.shape(p_view)} vs reflectance {np.shape(refl)}")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    noise = cfg.noise_sigma * rng.standard_normal(np.shape(p_view)) if cfg.noise_sigma else 0.0
    return kernels.radiometry_clamp(
        np.asarray(p_view, float), np.asarray(refl, float), np.asarray(noise, float),
        cfg.gamma, cfg.alpha, cfg.beta, cfg.clip_lo, cfg.clip_hi,
    )


def synthesize_stereo(
    pattern: IlluminationPattern, scene: SceneSample, rig: CameraRig, cfg: CaptureConfig
):
    """Render (J_L, J_R, x_illum); x_illum is the clean resampled pattern."""
    if pattern.intensity.shape != scene.shape:
        raise ShapeError(
            f"pattern {pattern.intensity.shape} vs scene {scene.shape}; "
            "resize the scene to the illumination resolution first"
        )
    rng = np.random.default_rng(cfg.rng_seed)
    p_l = warp_pattern(pattern, rig.signed_narrow_disparity(scene.disp_L, "left"), scene.occ_L)
    p_r = warp_pattern(pattern, rig.signed_narrow_disparity(scene.disp_R, "right"), scene.occ_R)
    j_l = capture(p_l, scene.refl_L, cfg, rng)  # left noise drawn first, then right
    j_r = capture(p_r, scene.refl_R, cfg, rng)
    return j_l, j_r, pattern.intensity.copy()


# ---------------------------------------------------------------------------
# toy scene generator
# ---------------------------------------------------------------------------

@dataclass
class Rect:
    """Axis-aligned rectangle in projector-view pixels; optional x-slant via z_right."""

    x0: float
    y0: float
    x1: float
    y1: float
    z: float
    refl: float
    z_right: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.z_right is None:
            self.z_right = self.z
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ConfigError(f"degenerate rectangle {self}")
        if not (0.0 <= self.refl <= 1.0):
            raise ConfigError(f"reflectance must lie in [0, 1], got {self.refl}")


@dataclass
class SceneDescriptor:
    rects: list
    height: int
    width: int


def parse_scene_descriptor(text: str, default_size: int = 64) -> SceneDescriptor:
    """Plain-text toy scene: optional ``size W H`` line, then one rectangle per
    line as ``x0 y0 x1 y1 z reflectance`` (optional 7th field: depth at the
    right edge, for slanted patches)."""
    rects = []
    h = w = default_size
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "size":
            if len(parts) != 3:
                raise ConfigError(f"line {lineno}: size directive needs W H")
            w, h = int(parts[1]), int(parts[2])
            continue
        if len(parts) not in (6, 7):
            raise ConfigError(f"line {lineno}: expected 6 or 7 numbers, got {len(parts)}")
        vals = [float(v) for v in parts]
        rects.append(Rect(*vals))
    return SceneDescriptor(rects, h, w)


def _paint_view(desc: SceneDescriptor, rig: CameraRig, view: str):
    """Painter's-algorithm render of one camera view from projector-space rects."""
    h, w = desc.height, desc.width
    zbuf = np.full((h, w), np.inf)
    disp = np.zeros((h, w))
    refl = np.zeros((h, w))
    r = rig.baseline_narrow / rig.baseline_wide
    shift_factor = r if view == "left" else -(1.0 - r)

    for rect in sorted(desc.rects, key=lambda q: -max(q.z, q.z_right)):
        y0 = max(int(round(rect.y0)), 0)
        y1 = min(int(round(rect.y1)), h)
        if y1 <= y0:
            continue
        # rects clipped by the frame continue beyond it (e.g. a backdrop wall),
        # so extend those edges far enough that every camera view stays covered
        margin = math.ceil(rig.disparity_at(min(rect.z, rect.z_right))) + 2
        x_lo = rect.x0 - margin if rect.x0 <= 0 else rect.x0
        x_hi = rect.x1 + margin if rect.x1 >= w else rect.x1
        # sample source columns at half-pixel steps so expanding maps stay hole-free
        n_steps = max(int(2 * (x_hi - x_lo)), 2)
        for xs in np.linspace(x_lo, x_hi, n_steps, endpoint=False):
            t = np.clip((xs - rect.x0) / (rect.x1 - rect.x0), 0.0, 1.0)
            z = rect.z + (rect.z_right - rect.z) * t
            d = rig.disparity_at(z)
            xt = int(math.floor(xs + shift_factor * d + 0.5))  # half-up: views stay edge-consistent
            if xt < 0 or xt >= w:
                continue
            col = slice(y0, y1)
            closer = z < zbuf[col, xt]
            zbuf[col, xt] = np.where(closer, z, zbuf[col, xt])
            disp[col, xt] = np.where(closer, d, disp[col, xt])
            refl[col, xt] = np.where(closer, rect.refl, refl[col, xt])
    return disp, refl


def projector_occlusion(disp: np.ndarray, signed_narrow: np.ndarray) -> np.ndarray:
    """Visibility of each camera pixel from the projector (z-buffer trace).

    A pixel is shadowed when another pixel of the same row lands on the same
    projector column with a strictly larger (nearer) narrow disparity.
    """
    h, w = disp.shape
    occ = np.ones((h, w))
    mag = np.abs(signed_narrow)
    xi = np.floor(np.arange(w)[None, :] - signed_narrow + 0.5).astype(int)
    for y in range(h):
        best = np.full(w, -np.inf)
        cols = xi[y]
        ok = (cols >= 0) & (cols < w)
        np.maximum.at(best, cols[ok], mag[y][ok])
        occluded = ok & (best[np.clip(cols, 0, w - 1)] > mag[y] + 0.5)
        occ[y, occluded] = 0.0
    return occ


def stereo_occlusion(disp_ref: np.ndarray, view: str, rig: CameraRig) -> np.ndarray:
    """Mask of reference-view pixels visible to the *other camera* (brute-force
    projection trace); 1 = co-visible. Pixels whose correspondence projects
    outside the other frame, or is covered by a nearer surface, get 0."""
    h, w = disp_ref.shape
    sign = 1.0 if view == "left" else -1.0
    vis = np.ones((h, w))
    xt = np.floor(np.arange(w)[None, :] - sign * disp_ref + 0.5).astype(int)
    for y in range(h):
        best = np.full(w, -np.inf)
        cols = xt[y]
        ok = (cols >= 0) & (cols < w)
        np.maximum.at(best, cols[ok], disp_ref[y][ok])
        hidden = ~ok | (ok & (best[np.clip(cols, 0, w - 1)] > disp_ref[y] + 0.5))
        vis[y, hidden] = 0.0
    return vis


def generate_toy_scene(desc: SceneDescriptor, rig: CameraRig) -> SceneSample:
    """Render both camera views of a layered-rectangle scene, with projector
    occlusion masks; geometry is left-right consistent on co-visible pixels."""
    if not desc.rects:
        raise ConfigError("scene descriptor lists no rectangles")
    for rect in desc.rects:
        for z in (rect.z, rect.z_right):
            if not (DEPTH_RANGE[0] <= z <= DEPTH_RANGE[1]):
                warnings.warn(
                    f"depth {z} m outside the far-field validity range "
                    f"{DEPTH_RANGE}; results are extrapolated",
                    stacklevel=2,
                )
    disp_l, refl_l = _paint_view(desc, rig, "left")
    disp_r, refl_r = _paint_view(desc, rig, "right")
    occ_l = projector_occlusion(disp_l, rig.signed_narrow_disparity(disp_l, "left"))
    occ_r = projector_occlusion(disp_r, rig.signed_narrow_disparity(disp_r, "right"))
    return SceneSample(disp_l, disp_r, refl_l, refl_r, occ_l, occ_r)


def toy_scene_suite(rig: CameraRig, size: int, count: int = 5, seed: int = 7) -> list:
    """Seeded batch of toy scenes: a backdrop plane plus 1-2 floating patches."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        rects = [Rect(0, 0, size, size, rng.uniform(1.6, 2.8), rng.uniform(0.6, 0.95))]
        for _ in range(int(rng.integers(1, 3))):
            wpatch = rng.uniform(0.3, 0.5) * size
            hpatch = rng.uniform(0.3, 0.5) * size
            x0 = rng.uniform(0.1, 0.85) * size - wpatch / 2
            y0 = rng.uniform(0.1, 0.85) * size - hpatch / 2
            rects.append(
                Rect(
                    max(x0, 0), max(y0, 0),
                    min(x0 + wpatch, size), min(y0 + hpatch, size),
                    rng.uniform(0.5, 1.4), rng.uniform(0.5, 1.0),
                )
            )
        scenes.append(generate_toy_scene(SceneDescriptor(rects, size, size), rig))
    return scenes


# ---------------------------------------------------------------------------
# dataset ingest
# ---------------------------------------------------------------------------

@dataclass
class IngestOptions:
    out_size: int = 64
    nir_gain: float = 1.0  # NIR proxy: clip(gain * luma + bias, 0, 1)
    nir_bias: float = 0.0
    cross_check_px: float = 1.0


def _cross_check_occlusion(disp_a: np.ndarray, disp_b: np.ndarray, thresh: float) -> np.ndarray:
    """1 where disp_a round-trips through disp_b within thresh pixels."""
    warped = kernels.warp_horizontal(disp_b, disp_a)
    xs = np.arange(disp_a.shape[1])[None, :] - disp_a
    inside = (xs >= 0) & (xs <= disp_a.shape[1] - 1)
    return (inside & (np.abs(disp_a - warped) <= thresh)).astype(float)


def shrink_occluded_runs(occ: np.ndarray, view: str) -> np.ndarray:
    """Halve each horizontal occluded run, keeping the half next to the occluder
    (right half in the left view, left half in the right view)."""
    out = occ.copy()
    h, w = occ.shape
    for y in range(h):
        x = 0
        row = occ[y]
        while x < w:
            if row[x] == 0:
                x1 = x
                while x1 < w and row[x1] == 0:
                    x1 += 1
                run = x1 - x
                keep = (run + 1) // 2
                if view == "left":
                    out[y, x : x1 - keep] = 1.0  # clear the far (left) portion
                else:
                    out[y, x + keep : x1] = 1.0
                x = x1
            else:
                x += 1
    return out


def _resize_scene(scene: SceneSample, size: int) -> SceneSample:
    h, w = scene.shape
    if (h, w) == (size, size):
        return scene
    sx = size / w

    def dmap(d):
        return np.clip(kernels.bilinear_resize(d, size, size) * sx, 0.0, size - 1e-6)

    def imap(a):
        return kernels.bilinear_resize(a, size, size)

    def mmap(m):
        return (kernels.bilinear_resize(m, size, size) >= 0.5).astype(float)

    return SceneSample(
        dmap(scene.disp_L), dmap(scene.disp_R),
        np.clip(imap(scene.refl_L), 0, 1), np.clip(imap(scene.refl_R), 0, 1),
        mmap(scene.occ_L), mmap(scene.occ_R),
    )


def ingest_dataset(path, options: IngestOptions = IngestOptions()):
    """Yield (name, SceneSample) from a directory of PFM disparities and images.

    Expected files per sample: ``<stem>_disp_left.pfm``, ``<stem>_disp_right.pfm``,
    ``<stem>_img_left.png``, ``<stem>_img_right.png`` (any Pillow-readable image
    format works for the two image files). Samples with missing companions are
    skipped with a logged diagnostic; malformed PFM payloads raise.
    """
    root = Path(path)
    log.info(
        "ingesting %s with NIR proxy clip(%g * luma + %g, 0, 1), cross-check %g px",
        root, options.nir_gain, options.nir_bias, options.cross_check_px,
    )
    for disp_l_path in sorted(root.glob("*_disp_left.pfm")):
        stem = disp_l_path.name[: -len("_disp_left.pfm")]
        companions = {
            "disp_right": root / f"{stem}_disp_right.pfm",
            "img_left": None,
            "img_right": None,
        }
        for side in ("left", "right"):
            hits = sorted(root.glob(f"{stem}_img_{side}.*"))
            companions[f"img_{side}"] = hits[0] if hits else None
        missing = [k for k, v in companions.items() if v is None or not Path(v).exists()]
        if missing:
            log.warning("skipping %s: missing %s", stem, ", ".join(missing))
            continue

        disp_l = read_pfm_disparity(disp_l_path)
        disp_r = read_pfm_disparity(companions["disp_right"])
        refl_l = _nir_proxy(fileio.read_image_gray(companions["img_left"]), options)
        refl_r = _nir_proxy(fileio.read_image_gray(companions["img_right"]), options)
        if disp_l.shape != disp_r.shape or disp_l.shape != refl_l.shape:
            log.warning("skipping %s: grids disagree on shape", stem)
            continue

        occ_l = _cross_check_occlusion(disp_l, disp_r, options.cross_check_px)
        occ_r = _cross_check_occlusion(disp_r, disp_l, options.cross_check_px)
        occ_l = shrink_occluded_runs(occ_l, "left")
        occ_r = shrink_occluded_runs(occ_r, "right")

        scene = SceneSample(disp_l, disp_r, refl_l, refl_r, occ_l, occ_r)
        yield stem, _resize_scene(scene, options.out_size)


def read_pfm_disparity(path) -> np.ndarray:
    d = fileio.read_pfm(path)
    d = np.where(np.isfinite(d), d, 0.0)  # common convention: inf marks invalid
    return np.clip(d, 0.0, d.shape[1] - 1e-6)


def _nir_proxy(gray: np.ndarray, options: IngestOptions) -> np.ndarray:
    return np.clip(options.nir_gain * gray + options.nir_bias, 0.0, 1.0)
