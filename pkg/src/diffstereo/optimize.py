"""Optimization drivers: joint illumination/matcher training, target-pattern
DOE design (gradient and alternating-projection), and pattern statistics.

The joint loop minimizes the masked mean-absolute disparity error of the
reconstruction with respect to the DOE surface and the matcher's linear
feature parameters. DOE heights are parameterized as unconstrained *turns* of
the wrap period (one turn = one full phase cycle = max_height), which keeps
gradients smooth across the wrap boundary; physical heights are recovered as
``(turns mod 1) * max_height``.

Determinism contract: one seeded generator drives scene sampling, environment
sampling and noise draws in a fixed order, and its full state rides along in
checkpoints, so save -> load -> continue reproduces an uninterrupted run bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import diffengine as de
from . import fileio, kernels
from .errors import ConfigError, NumericError, ShapeError
from .matcher import MatcherParams, reconstruct
from .scenesim import CameraRig
from .wavefield import DOEProfile, IlluminationPattern, WaveConfig, camera_scale_factor


# ---------------------------------------------------------------------------
# environment presets
# ---------------------------------------------------------------------------

@dataclass
class EnvironmentPreset:
    """Ambient/laser/noise sampling spec. Scalars are fixed per run; 2-tuples
    on alpha/beta are uniform ranges; a tuple on noise_sigma is a choice set."""

    name: str
    alpha: object = 0.0
    beta: object = 1.0
    noise_sigma: object = 0.02

    def __post_init__(self):
        for spec, label in ((self.alpha, "alpha"), (self.beta, "beta")):
            if isinstance(spec, tuple):
                if len(spec) != 2 or spec[0] > spec[1]:
                    raise ConfigError(f"{label} range must be (lo, hi), got {spec}")
        if isinstance(self.noise_sigma, tuple) and not self.noise_sigma:
            raise ConfigError("noise_sigma choice set is empty")

    @staticmethod
    def _draw(spec, rng, uniform: bool):
        if isinstance(spec, tuple):
            if uniform:
                return float(rng.uniform(spec[0], spec[1]))
            return float(spec[rng.integers(len(spec))])
        return float(spec)

    def sample(self, rng) -> tuple[float, float, float]:
        alpha = self._draw(self.alpha, rng, uniform=True)
        beta = self._draw(self.beta, rng, uniform=True)
        sigma = self._draw(self.noise_sigma, rng, uniform=False)
        return alpha, beta, sigma


def preset(name: str, noise_sigma=0.02) -> EnvironmentPreset:
    """Named imaging environments: indoor (a=0.0, b=1.5), outdoor (a=0.5,
    b=0.2), generic (a in [0, 0.5], b in [0.2, 1.5])."""
    table = {
        "indoor": dict(alpha=0.0, beta=1.5),
        "outdoor": dict(alpha=0.5, beta=0.2),
        "generic": dict(alpha=(0.0, 0.5), beta=(0.2, 1.5)),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; pick from {sorted(table)} or build a custom one")
    return EnvironmentPreset(name=name, noise_sigma=noise_sigma, **table[name])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive-moment update with bias correction; one slot per leaf."""

    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, values, grads):
        self.t += 1
        out = []
        for i, (x, g) in enumerate(zip(values, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mh = self.m[i] / (1 - self.beta1**self.t)
            vh = self.v[i] / (1 - self.beta2**self.t)
            out.append(x - self.lr * mh / (np.sqrt(vh) + self.eps))
        return out


# ---------------------------------------------------------------------------
# joint optimization
# ---------------------------------------------------------------------------

@dataclass
class JointConfig:
    """Hyperparameters of one joint run (all committed in the config file)."""

    wave: WaveConfig
    matcher: MatcherParams
    d_max: int
    learning_rate: float = 0.02
    batch_size: int = 2
    iterations: int = 200
    seed: int = 0
    loss_mask_px: float = 1.0
    dump_dir: str | None = None

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")


@dataclass
class OptimState:
    """Everything needed to continue a run: leaves, moments, history, RNG."""

    heights_turns: np.ndarray
    params: MatcherParams
    adam: Adam
    iteration: int
    history: list = field(default_factory=list)
    seed: int = 0
    rng_state: dict | None = None

    def doe(self, wave: WaveConfig) -> DOEProfile:
        heights = (self.heights_turns % 1.0) * wave.max_height
        return DOEProfile(heights, wave.eta, wave.wavelength, wave.pitch_u, wave.quant_levels)

    def losses(self) -> np.ndarray:
        return np.array([rec["loss"] for rec in self.history])


def _init_state(hyper: JointConfig, rng) -> OptimState:
    heights = rng.uniform(0.0, 1.0, (hyper.wave.n, hyper.wave.n))
    params = hyper.matcher
    leaves = [heights] + params.parameter_arrays()
    adam = Adam([np.shape(a) for a in leaves], hyper.learning_rate)
    return OptimState(heights, params, adam, 0, [], hyper.seed, None)


def _scene_constants(dataset, rig: CameraRig, hyper: JointConfig):
    consts = []
    for scene in dataset:
        if scene.shape != (hyper.wave.n, hyper.wave.n):
            raise ShapeError(
                f"scene {scene.shape} does not match the illumination grid "
                f"({hyper.wave.n} x {hyper.wave.n})"
            )
        valid = scene.lr_valid_mask(hyper.loss_mask_px).astype(float)
        if valid.sum() == 0:
            raise ConfigError("a scene has no left-right-consistent pixels to supervise")
        consts.append(
            dict(
                d_l=rig.signed_narrow_disparity(scene.disp_L, "left"),
                d_r=rig.signed_narrow_disparity(scene.disp_R, "right"),
                scene=scene,
                valid=valid,
            )
        )
    return consts


def _taped_loss(theta, param_leaves, consts, picks, env, noises, rig, hyper: JointConfig, scale_s):
    """Differentiable forward pass for one batch; returns the scalar DiffValue."""
    alpha, beta, sigma = env
    params = hyper.matcher
    if param_leaves:
        params = params.with_parameter_arrays(param_leaves)
    phi = de.scale(theta, 2.0 * math.pi)
    far = de.dft2(de.phase_to_field(phi, amplitude=1.0))
    pattern = de.magnitude_sq(far)
    pattern_cam = de.resample_bicubic(pattern, scale_s)

    terms = []
    for j, idx in enumerate(picks):
        c = consts[idx]
        scene = c["scene"]
        n_l, n_r = noises[j]
        p_l = de.mul(de.warp_horizontal(pattern_cam, c["d_l"]), scene.occ_L)
        p_r = de.mul(de.warp_horizontal(pattern_cam, c["d_r"]), scene.occ_R)
        j_l = de.radiometry_clamp(p_l, scene.refl_L, n_l, 1.0, alpha, beta)
        j_r = de.radiometry_clamp(p_r, scene.refl_R, n_r, 1.0, alpha, beta)
        disp = reconstruct(j_l, j_r, pattern_cam, params, rig, hyper.d_max)
        terms.append(de.masked_mae(disp, scene.disp_L, c["valid"]))
    return de.scale(reduce(de.add, terms), 1.0 / len(terms))


def joint_optimize(dataset, rig: CameraRig, env: EnvironmentPreset, hyper: JointConfig,
                   state: OptimState | None = None) -> OptimState:
    """Run (or continue) the joint DOE + matcher optimization.

    Per iteration: draw scenes and environment parameters, simulate the
    captures, reconstruct, take the masked MAE against ground truth, and apply
    one Adam step to all leaves. Runs until ``hyper.iterations`` total
    iterations are on the history.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    consts = _scene_constants(dataset, rig, hyper)
    scale_s = camera_scale_factor(hyper.wave.pitch_u, hyper.wave.n, hyper.wave.wavelength, rig)

    rng = np.random.default_rng(hyper.seed)
    if state is None:
        state = _init_state(hyper, rng)
    else:
        restore = np.random.default_rng()
        restore.bit_generator.state = state.rng_state
        rng = restore

    n = hyper.wave.n
    while state.iteration < hyper.iterations:
        picks = rng.integers(0, len(dataset), size=hyper.batch_size)
        alpha, beta, sigma = env.sample(rng)
        noises = [
            (sigma * rng.standard_normal((n, n)), sigma * rng.standard_normal((n, n)))
            for _ in picks
        ]

        with de.Tape() as tape:
            theta = tape.leaf(state.heights_turns)
            param_leaves = [tape.leaf(a) for a in state.params.parameter_arrays()]
            try:
                loss = _taped_loss(
                    theta, param_leaves, consts, picks, (alpha, beta, sigma),
                    noises, rig, hyper, scale_s,
                )
                loss_val = float(de.value_of(loss))
            except NumericError as exc:
                _dump_failure(state, hyper, picks, (alpha, beta, sigma))
                raise NumericError(
                    f"forward pass failed at iteration {state.iteration}: {exc}"
                ) from exc
            if not np.isfinite(loss_val):
                _dump_failure(state, hyper, picks, (alpha, beta, sigma))
                raise NumericError(
                    f"loss became non-finite at iteration {state.iteration}"
                )
            grads = de.backward(loss, [theta] + param_leaves)

        values = [state.heights_turns] + state.params.parameter_arrays()
        updated = state.adam.step(values, grads)
        state.heights_turns = updated[0]
        if param_leaves:
            state.params = state.params.with_parameter_arrays(updated[1:])
        state.history.append(
            dict(iteration=state.iteration, loss=loss_val, alpha=alpha, beta=beta,
                 noise_sigma=sigma)
        )
        state.iteration += 1

    state.rng_state = rng.bit_generator.state
    return state


def _dump_failure(state, hyper, picks, env):
    if hyper.dump_dir is None:
        return
    out = fileio.ensure_dir(hyper.dump_dir)
    save_checkpoint(out / "failure_checkpoint.bin", state, hyper)
    with open(out / "failure_batch.txt", "w", encoding="utf-8") as f:
        f.write(f"iteration={state.iteration}\nscenes={list(map(int, picks))}\n")
        f.write(f"alpha={env[0]} beta={env[1]} noise_sigma={env[2]}\n")


def final_pattern(state: OptimState, hyper: JointConfig, rig: CameraRig) -> IlluminationPattern:
    """Camera-resampled clean pattern produced by the current DOE."""
    from .wavefield import simulate_pattern

    return simulate_pattern(state.doe(hyper.wave), rig)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: OptimState, hyper: JointConfig, rig: CameraRig | None = None) -> None:
    p = state.params
    scalars = dict(
        seed=state.seed,
        iteration=state.iteration,
        rng_state=state.rng_state,
        adam_t=state.adam.t,
        lr=state.adam.lr,
        feature_mode=p.feature_mode,
        patch_window=p.patch_window,
        agg_window=p.agg_window,
        temperature=p.temperature,
        num_cam_layers=len(p.cam_layers),
        num_illum_layers=len(p.illum_layers),
        wave=dict(
            n=hyper.wave.n, pitch_u=hyper.wave.pitch_u, wavelength=hyper.wave.wavelength,
            eta=hyper.wave.eta, quant_levels=hyper.wave.quant_levels,
        ),
        rig=None if rig is None else dict(
            focal_f=rig.focal_f, pixel_p=rig.pixel_p,
            baseline_wide=rig.baseline_wide, baseline_narrow=rig.baseline_narrow,
        ),
    )
    arrays = {"heights_turns": state.heights_turns}
    for prefix, layers in (("cam", p.cam_layers), ("illum", p.illum_layers)):
        for i, (k, b) in enumerate(layers):
            arrays[f"{prefix}{i}_k"] = np.asarray(k)
            arrays[f"{prefix}{i}_b"] = np.asarray(b)
    for i, (m, v) in enumerate(zip(state.adam.m, state.adam.v)):
        arrays[f"adam_m{i}"] = m
        arrays[f"adam_v{i}"] = v
    hist = state.history
    arrays["hist_iteration"] = np.array([r["iteration"] for r in hist], dtype=np.int64)
    for key in ("loss", "alpha", "beta", "noise_sigma"):
        arrays[f"hist_{key}"] = np.array([r[key] for r in hist])
    fileio.write_checkpoint(path, scalars, arrays)


def load_checkpoint(path) -> OptimState:
    scalars, arrays = fileio.read_checkpoint(path)
    cam = [
        (arrays[f"cam{i}_k"], arrays[f"cam{i}_b"]) for i in range(scalars["num_cam_layers"])
    ]
    illum = [
        (arrays[f"illum{i}_k"], arrays[f"illum{i}_b"])
        for i in range(scalars["num_illum_layers"])
    ]
    params = MatcherParams(
        scalars["feature_mode"], scalars["patch_window"], scalars["agg_window"],
        scalars["temperature"], cam, illum,
    )
    leaves = [arrays["heights_turns"]] + params.parameter_arrays()
    adam = Adam([np.shape(a) for a in leaves], scalars["lr"])
    adam.t = scalars["adam_t"]
    for i in range(len(leaves)):
        adam.m[i] = arrays[f"adam_m{i}"]
        adam.v[i] = arrays[f"adam_v{i}"]
    history = [
        dict(
            iteration=int(arrays["hist_iteration"][i]),
            loss=float(arrays["hist_loss"][i]),
            alpha=float(arrays["hist_alpha"][i]),
            beta=float(arrays["hist_beta"][i]),
            noise_sigma=float(arrays["hist_noise_sigma"][i]),
        )
        for i in range(len(arrays["hist_iteration"]))
    ]
    rng_state = scalars["rng_state"]
    if rng_state is not None:
        # JSON round-trip keeps ints exact; nested dict shape matches PCG64
        rng_state = {
            "bit_generator": rng_state["bit_generator"],
            "state": {k: int(v) for k, v in rng_state["state"].items()},
            "has_uint32": int(rng_state["has_uint32"]),
            "uinteger": int(rng_state["uinteger"]),
        }
    return OptimState(
        arrays["heights_turns"], params, adam, int(scalars["iteration"]),
        history, int(scalars["seed"]), rng_state,
    )


def checkpoint_geometry(path) -> tuple[WaveConfig, CameraRig | None]:
    """Recover the wave / rig setup a checkpoint was produced with."""
    scalars, _ = fileio.read_checkpoint(path)
    wave_d = scalars.get("wave")
    if wave_d is None:
        raise ConfigError(f"{path} predates geometry metadata; re-run optimize")
    wave = WaveConfig(**wave_d)
    rig_d = scalars.get("rig")
    rig = CameraRig(**rig_d) if rig_d else None
    return wave, rig


def pattern_from_checkpoint(path, rig: CameraRig | None = None) -> IlluminationPattern:
    """Camera-resampled pattern of a checkpoint's DOE (rig from the file if omitted)."""
    from .wavefield import simulate_pattern

    wave, stored_rig = checkpoint_geometry(path)
    rig = rig or stored_rig
    if rig is None:
        raise ConfigError(f"{path} stores no rig; pass one explicitly")
    state = load_checkpoint(path)
    return simulate_pattern(state.doe(wave), rig)


# ---------------------------------------------------------------------------
# target-pattern DOE design
# ---------------------------------------------------------------------------

@dataclass
class DesignResult:
    doe: DOEProfile
    pattern: np.ndarray  # achieved far-field intensity, unit total energy
    history: list  # per-iteration dicts: error (amplitude L2), far_energy
    method: str


def _normalize_target(target) -> np.ndarray:
    t = target.intensity if isinstance(target, IlluminationPattern) else np.asarray(target, float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ShapeError(f"target must be a square grid, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise NumericError("target pattern contains non-finite values")
    if np.any(t < 0):
        raise ConfigError("target intensities must be non-negative")
    total = t.sum()
    if total <= 0:
        raise ConfigError("target pattern is all zero")
    return t / total


def _amplitude_error(far: np.ndarray, amp_target: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.abs(far) - amp_target) ** 2)))


def design_doe_for_target(target, method: str, iters: int, wave: WaveConfig,
                          seed: int = 0, learning_rate: float = 0.05,
                          quantize: bool = False) -> DesignResult:
    """Find a phase plate whose far-field intensity matches ``target``.

    ``iterative_fft`` alternates between the planes, enforcing the target
    magnitude in the far field and unit amplitude at the plate;
    ``gradient`` minimizes the squared intensity error through the
    differentiable pipeline with Adam.
    """
    t = _normalize_target(target)
    n = t.shape[0]
    if n != wave.n:
        raise ShapeError(f"target grid {n} does not match wave config n={wave.n}")
    amp_target = np.sqrt(t)
    a0 = 1.0 / n  # uniform plate amplitude carrying unit total energy
    rng = np.random.default_rng(seed)

    if method == "iterative_fft":
        phase = rng.uniform(0.0, 2.0 * math.pi, (n, n))
        history = []
        for _ in range(iters):
            far = kernels.dft2_unitary(a0 * np.exp(1j * phase))
            history.append(
                dict(error=_amplitude_error(far, amp_target),
                     far_energy=float(np.sum(np.abs(far) ** 2)))
            )
            far = amp_target * np.exp(1j * np.angle(far))
            phase = np.angle(kernels.idft2_unitary(far))
        final = kernels.magnitude_sq(kernels.dft2_unitary(a0 * np.exp(1j * phase)))
        turns = (phase / (2.0 * math.pi)) % 1.0
    elif method == "gradient":
        turns = rng.uniform(0.0, 1.0, (n, n))
        adam = Adam([turns.shape], learning_rate)
        history = []
        for _ in range(iters):
            with de.Tape() as tape:
                theta = tape.leaf(turns)
                far = de.dft2(de.phase_to_field(de.scale(theta, 2.0 * math.pi), amplitude=a0))
                intensity = de.magnitude_sq(far)
                loss = de.asum(de.square(de.sub(intensity, t)))
                history.append(
                    dict(error=_amplitude_error(de.value_of(far), amp_target),
                         far_energy=float(np.sum(de.value_of(intensity))))
                )
                (grad,) = de.backward(loss, [theta])
            (turns,) = adam.step([turns], [grad])
        final = kernels.magnitude_sq(
            kernels.dft2_unitary(a0 * np.exp(2j * math.pi * turns))
        )
        turns = turns % 1.0
    else:
        raise ConfigError(f"unknown design method {method!r}; use 'gradient' or 'iterative_fft'")

    doe = DOEProfile(turns * wave.max_height, wave.eta, wave.wavelength, wave.pitch_u,
                     wave.quant_levels)
    if quantize:
        from .wavefield import quantize_heights

        doe = quantize_heights(doe)
    return DesignResult(doe, final, history, method)


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean NCC in [-1, 1]; 1 means a perfect linear match."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


# ---------------------------------------------------------------------------
# pattern statistics
# ---------------------------------------------------------------------------

@dataclass
class PatternMetrics:
    dot_count: int
    peak_to_mean: float
    gini: float
    energy_top1: float

    def as_dict(self) -> dict:
        return dict(dot_count=self.dot_count, peak_to_mean=self.peak_to_mean,
                    gini=self.gini, energy_top1=self.energy_top1)


def pattern_metrics(pattern) -> PatternMetrics:
    """Sparsity/peakedness statistics of an illumination pattern.

    Dots are strict local maxima (8-neighborhood, above 10% of the global
    peak); a flat pattern therefore has zero dots, Gini 0 and peak-to-mean 1.
    """
    p = pattern.intensity if isinstance(pattern, IlluminationPattern) else np.asarray(pattern, float)
    if np.any(p < 0):
        raise ConfigError("pattern must be non-negative")
    total = p.sum()
    if total <= 0:
        return PatternMetrics(0, 1.0, 0.0, 0.0)

    pad_max = np.pad(p, 1, constant_values=-np.inf)
    pad_min = np.pad(p, 1, constant_values=np.inf)
    win_max = sliding_window_view(pad_max, (3, 3)).max(axis=(-2, -1))
    win_min = sliding_window_view(pad_min, (3, 3)).min(axis=(-2, -1))
    peaks = (p >= win_max) & (p > win_min) & (p > 0.1 * p.max())
    dot_count = int(peaks.sum())

    mean = total / p.size
    flat = np.sort(p.ravel())
    idx = np.arange(1, flat.size + 1)
    gini = float(((2 * idx - flat.size - 1) * flat).sum() / (flat.size * total))
    top = max(1, math.ceil(0.01 * flat.size))
    energy_top1 = float(flat[-top:].sum() / total)
    return PatternMetrics(dot_count, float(p.max() / mean), gini, energy_top1)
