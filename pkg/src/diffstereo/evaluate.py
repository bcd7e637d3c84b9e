"""Disparity/depth evaluation reports.

Bad-pixel rates use strict inequality (|err| > tau). Depth is derived per
pixel as z = f * b / (p * d); disparities at or below 0.5 px are excluded from
the depth statistics instead of producing unbounded depths. Aggregates are
valid-pixel-weighted means accumulated with exact summation, so scene order
cannot change the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

BAD_PIXEL_THRESHOLDS = (1.0, 2.0, 4.0)
MIN_DISPARITY_FOR_DEPTH = 0.5


@dataclass
class SceneEval:
    name: str
    n_valid: int
    valid_fraction: float
    mae_px: float
    bad: dict
    depth_mae_m: float
    n_depth_valid: int
    degenerate: bool = False


@dataclass
class EvalReport:
    scenes: list = field(default_factory=list)
    thresholds: tuple = BAD_PIXEL_THRESHOLDS
    pattern: object = None  # optional PatternMetrics of the illumination used

    @property
    def degenerate(self) -> bool:
        return all(s.degenerate for s in self.scenes) if self.scenes else True

    def _weighted(self, attr: str, weight_attr: str) -> float:
        pairs = [
            (getattr(s, attr), getattr(s, weight_attr))
            for s in self.scenes
            if not s.degenerate and getattr(s, weight_attr) > 0
        ]
        total = math.fsum(w for _, w in pairs)
        if total == 0:
            return float("nan")
        return math.fsum(v * w for v, w in pairs) / total

    @property
    def mae_px(self) -> float:
        return self._weighted("mae_px", "n_valid")

    @property
    def depth_mae_m(self) -> float:
        return self._weighted("depth_mae_m", "n_depth_valid")

    @property
    def valid_fraction(self) -> float:
        fracs = [(s.valid_fraction, 1.0) for s in self.scenes if not s.degenerate]
        if not fracs:
            return float("nan")
        return math.fsum(v for v, _ in fracs) / len(fracs)

    def bad_rate(self, tau: float) -> float:
        pairs = [
            (s.bad[tau], s.n_valid) for s in self.scenes if not s.degenerate and s.n_valid > 0
        ]
        total = math.fsum(w for _, w in pairs)
        if total == 0:
            return float("nan")
        return math.fsum(v * w for v, w in pairs) / total

    def lines(self) -> list:
        out = [
            f"scenes evaluated: {len(self.scenes)} (degenerate: {sum(s.degenerate for s in self.scenes)})",
            f"disparity MAE: {self.mae_px:.4f} px",
            f"depth MAE: {self.depth_mae_m * 100:.3f} cm",
            f"valid-pixel fraction: {self.valid_fraction:.4f}",
        ]
        for tau in self.thresholds:
            out.append(f"bad@{tau:g}px: {self.bad_rate(tau):.4f}")
        if self.pattern is not None:
            m = self.pattern
            out.append(
                f"illumination: {m.dot_count} dots, peak/mean {m.peak_to_mean:.2f}, "
                f"gini {m.gini:.3f}, top-1% energy {m.energy_top1:.3f}"
            )
        return out

    def write_csv(self, path) -> None:
        cols = ["name", "n_valid", "valid_fraction", "mae_px", "depth_mae_m"]
        cols += [f"bad_{tau:g}" for tau in self.thresholds]
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(cols) + "\n")
            for s in self.scenes:
                row = [s.name, str(s.n_valid), f"{s.valid_fraction!r}", f"{s.mae_px!r}",
                       f"{s.depth_mae_m!r}"]
                row += [f"{s.bad[tau]!r}" for tau in self.thresholds]
                f.write(",".join(row) + "\n")
            f.write(
                ",".join(
                    ["aggregate", "", f"{self.valid_fraction!r}", f"{self.mae_px!r}",
                     f"{self.depth_mae_m!r}"]
                    + [f"{self.bad_rate(tau)!r}" for tau in self.thresholds]
                )
                + "\n"
            )


def compute_eval(disp_est, disp_gt, valid_mask, rig, name: str = "scene",
                 thresholds=BAD_PIXEL_THRESHOLDS) -> SceneEval:
    """Per-scene metrics over the valid mask; flags a degenerate (empty) mask."""
    est = np.asarray(disp_est, dtype=float)
    gt = np.asarray(disp_gt, dtype=float)
    mask = np.asarray(valid_mask) != 0
    if est.shape != gt.shape or est.shape != mask.shape:
        raise ShapeError(f"eval shapes differ: {est.shape}, {gt.shape}, {mask.shape}")

    n_valid = int(mask.sum())
    if n_valid == 0:
        nanbad = {tau: float("nan") for tau in thresholds}
        return SceneEval(name, 0, 0.0, float("nan"), nanbad, float("nan"), 0, True)

    err = np.abs(est - gt)[mask]
    mae = float(err.mean())
    bad = {tau: float((err > tau).mean()) for tau in thresholds}

    depth_ok = mask & (est > MIN_DISPARITY_FOR_DEPTH) & (gt > MIN_DISPARITY_FOR_DEPTH)
    n_depth = int(depth_ok.sum())
    if n_depth:
        depth_err = np.abs(rig.depth_at(est[depth_ok]) - rig.depth_at(gt[depth_ok]))
        depth_mae = float(depth_err.mean())
    else:
        depth_mae = float("nan")

    return SceneEval(name, n_valid, n_valid / mask.size, mae, bad, depth_mae, n_depth)


def aggregate(scene_evals, thresholds=BAD_PIXEL_THRESHOLDS, pattern=None) -> EvalReport:
    return EvalReport(list(scene_evals), tuple(thresholds), pattern)
