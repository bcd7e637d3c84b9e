"""Run configuration: flat key=value sections, strictly validated.

Grammar is INI (configparser): ``[section]`` headers, one ``key = value`` per
line, ``#`` comments. Unknown sections or keys abort before any computation.
Values use SI units (meters) throughout.

``pitch_u = auto`` picks the source pitch so the camera rescale factor is
exactly 1 for the configured rig and grid, which is the sensible desk-scale
choice; any explicit float overrides it. The DOE refractive index ``eta``
has no built-in default and must be stated by the config.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass
from io import StringIO

from .errors import ConfigError
from .matcher import MatcherParams
from .optimize import EnvironmentPreset, JointConfig, preset
from .scenesim import DEPTH_RANGE, CameraRig
from .wavefield import WaveConfig

OUTPUT_DIR_ENV = "DIFFSTEREO_OUTDIR"

_SCHEMA = {
    "rig": {"focal_f", "pixel_p", "baseline_wide", "baseline_narrow"},
    "wavefield": {
        "n", "pitch_u", "wavelength", "eta", "quant_levels",
        "circular_aperture", "kappa_zeroth",
    },
    "environment": {"preset", "alpha", "beta", "noise_sigma"},
    "matcher": {
        "mode", "d_max", "patch_window", "agg_window", "temperature",
        "trinocular", "channels", "ksize", "num_layers", "feature_seed",
        "feature_init_noise",
    },
    "optimizer": {"learning_rate", "batch_size", "iterations"},
    "run": {"seed", "output_dir"},
}


@dataclass
class RunConfig:
    rig: CameraRig
    wave: WaveConfig
    environment: EnvironmentPreset
    matcher_mode: str = "patch"
    d_max: int | None = None
    patch_window: int = 5
    agg_window: int = 5
    temperature: float = 1.0
    trinocular: bool = True
    channels: int = 4
    ksize: int = 3
    num_layers: int = 1
    feature_seed: int = 0
    feature_init_noise: float = 0.05
    learning_rate: float = 0.02
    batch_size: int = 2
    iterations: int = 200
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.d_max is None:
            derived = math.ceil(self.rig.disparity_at(DEPTH_RANGE[0])) + 2
            self.d_max = min(derived, self.wave.n - 1)
        if not 0 < self.d_max < self.wave.n:
            raise ConfigError(f"d_max must be in (0, {self.wave.n}), got {self.d_max}")
        if self.output_dir is None:
            self.output_dir = os.environ.get(OUTPUT_DIR_ENV, "out")

    def matcher_params(self) -> MatcherParams:
        common = dict(
            patch_window=self.patch_window,
            agg_window=self.agg_window,
            temperature=self.temperature,
        )
        if self.matcher_mode == "learned-linear":
            return MatcherParams.learned_linear(
                channels=self.channels, ksize=self.ksize, num_layers=self.num_layers,
                seed=self.feature_seed, init_noise=self.feature_init_noise, **common,
            )
        return MatcherParams(feature_mode=self.matcher_mode, **common)

    def joint_config(self, dump_dir=None) -> JointConfig:
        return JointConfig(
            wave=self.wave,
            matcher=self.matcher_params(),
            d_max=self.d_max,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed,
            dump_dir=dump_dir,
        )


def _parse_scalar_or_range(raw: str):
    if ":" in raw:
        lo, hi = raw.split(":", 1)
        return (float(lo), float(hi))
    return float(raw)


def _parse_sigma(raw: str):
    if "," in raw:
        return tuple(float(v) for v in raw.split(","))
    return float(raw)


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def loads(text: str) -> RunConfig:
    """Parse and validate a config document; raise ConfigError on anything odd."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_file(StringIO(text))
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    def getfloat(section, key, default=None):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None

    def getint(section, key, default=None):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None

    rig = CameraRig(
        focal_f=getfloat("rig", "focal_f", 6e-3),
        pixel_p=getfloat("rig", "pixel_p", 5.3e-6),
        baseline_wide=getfloat("rig", "baseline_wide", 55e-3),
        baseline_narrow=getfloat("rig", "baseline_narrow", None),
    )

    eta = getfloat("wavefield", "eta")
    if eta is None:
        raise ConfigError("[wavefield] eta is required (no default refractive index)")
    n = getint("wavefield", "n", 64)
    wavelength = getfloat("wavefield", "wavelength", 850e-9)
    pitch_raw = get("wavefield", "pitch_u", "auto")
    if pitch_raw.strip().lower() == "auto":
        pitch_u = rig.focal_f * wavelength / (rig.pixel_p * n)
    else:
        pitch_u = float(pitch_raw)
    wave = WaveConfig(
        n=n, pitch_u=pitch_u, wavelength=wavelength, eta=eta,
        quant_levels=getint("wavefield", "quant_levels", 16),
        circular_aperture=_parse_bool(get("wavefield", "circular_aperture", "false"),
                                      "circular_aperture"),
        kappa_zeroth=getfloat("wavefield", "kappa_zeroth", 0.0),
    )

    preset_name = get("environment", "preset", "indoor")
    sigma = _parse_sigma(get("environment", "noise_sigma", "0.02"))
    if preset_name == "custom":
        env = EnvironmentPreset(
            name="custom",
            alpha=_parse_scalar_or_range(get("environment", "alpha", "0.0")),
            beta=_parse_scalar_or_range(get("environment", "beta", "1.0")),
            noise_sigma=sigma,
        )
    else:
        if parser.has_option("environment", "alpha") or parser.has_option("environment", "beta"):
            raise ConfigError("alpha/beta may only be set with preset = custom")
        env = preset(preset_name, noise_sigma=sigma)

    mode = get("matcher", "mode", "patch")
    cfg = RunConfig(
        rig=rig,
        wave=wave,
        environment=env,
        matcher_mode=mode,
        d_max=getint("matcher", "d_max", None),
        patch_window=getint("matcher", "patch_window", 5),
        agg_window=getint("matcher", "agg_window", 5),
        temperature=getfloat("matcher", "temperature", 1.0),
        trinocular=_parse_bool(get("matcher", "trinocular", "true"), "trinocular"),
        channels=getint("matcher", "channels", 4),
        ksize=getint("matcher", "ksize", 3),
        num_layers=getint("matcher", "num_layers", 1),
        feature_seed=getint("matcher", "feature_seed", 0),
        feature_init_noise=getfloat("matcher", "feature_init_noise", 0.05),
        learning_rate=getfloat("optimizer", "learning_rate", 0.02),
        batch_size=getint("optimizer", "batch_size", 2),
        iterations=getint("optimizer", "iterations", 200),
        seed=getint("run", "seed", 0),
        output_dir=get("run", "output_dir", None),
    )
    cfg.matcher_params()  # validate mode/windows eagerly
    return cfg


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return loads(f.read())


def reference_config(n: int = 32, seed: int = 0) -> RunConfig:
    """The committed desk-scale reference configuration used by the bundled
    experiments: toy-scaled baseline, rescale factor 1, eta fixed at 1.5."""
    rig = CameraRig(baseline_wide=55e-4)
    wave = WaveConfig.toy(n, rig, eta=1.5)
    return RunConfig(
        rig=rig,
        wave=wave,
        environment=preset("indoor"),
        matcher_mode="learned-linear",
        d_max=max(8, int(math.ceil(rig.disparity_at(0.5))) + 3),
        temperature=0.5,
        feature_init_noise=0.2,
        learning_rate=0.005,
        seed=seed,
    )
