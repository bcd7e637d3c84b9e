"""Figure analogues: image + CSV artifacts from the committed experiments.

``fig5`` (occlusion-boundary robustness) and ``fig8`` (target design
convergence) run their experiments directly. ``fig6``/``fig7`` (environment
and noise specialization) read checkpoints produced by prior ``optimize``
runs, so the expensive training is not repeated per figure.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import experiments, fileio, optimize
from .errors import DataError


def reproduce_figures(which: str, outdir, ckpt_dir=None) -> list:
    out = fileio.ensure_dir(outdir)
    maker = {
        "fig5": _fig5,
        "fig6": _fig6,
        "fig7": _fig7,
        "fig8": _fig8,
    }.get(which)
    if maker is None:
        raise DataError(f"unknown figure {which!r}; choose fig5, fig6, fig7 or fig8")
    files = maker(out, ckpt_dir)
    for f in files:
        print(f"wrote {f}")
    return files


def _fig5(out: Path, _ckpt_dir) -> list:
    scenes = experiments.trinocular_comparison()
    csv = out / "fig5_band_mae.csv"
    with open(csv, "w", encoding="utf-8") as f:
        f.write("scene,band_px,mae_trinocular,mae_binocular\n")
        for i, s in enumerate(scenes):
            f.write(f"{i},{s.band_px},{s.mae_tri!r},{s.mae_bino!r}\n")
    rep = scenes[0]
    tri_png = out / "fig5_error_trinocular.png"
    bin_png = out / "fig5_error_binocular.png"
    vmax = max(rep.err_tri.max(), rep.err_bino.max())
    fileio.write_preview_png(tri_png, rep.err_tri / vmax, colormap="inferno")
    fileio.write_preview_png(bin_png, rep.err_bino / vmax, colormap="inferno")
    return [csv, tri_png, bin_png]


def _pattern_figure(out: Path, ckpt_dir, spec: dict, csv_name: str) -> list:
    """Shared body of fig6/fig7: patterns + metrics from named checkpoints."""
    if ckpt_dir is None:
        raise DataError(
            "this figure needs --ckpt-dir with checkpoints from prior runs: "
            + ", ".join(f"{name} ({hint})" for name, hint in spec.items())
        )
    files = []
    rows = []
    for name, hint in spec.items():
        path = Path(ckpt_dir) / name
        if not path.exists():
            raise DataError(
                f"missing checkpoint {path}; produce it with: diffstereo optimize "
                f"-c <config with {hint}> --out <dir> and copy checkpoint.bin here"
            )
        pattern = optimize.pattern_from_checkpoint(path)
        metrics = optimize.pattern_metrics(pattern)
        png = out / f"{Path(name).stem}_pattern.png"
        fileio.write_preview_png(png, pattern.intensity)
        fileio.write_pfm(out / f"{Path(name).stem}_pattern.pfm", pattern.intensity)
        files.append(png)
        rows.append((Path(name).stem, metrics))
    csv = out / csv_name
    with open(csv, "w", encoding="utf-8") as f:
        f.write("run,dot_count,peak_to_mean,gini,energy_top1\n")
        for stem, m in rows:
            f.write(f"{stem},{m.dot_count},{m.peak_to_mean!r},{m.gini!r},{m.energy_top1!r}\n")
    files.append(csv)
    return files


def _fig6(out: Path, ckpt_dir) -> list:
    spec = {
        "ckpt_indoor.bin": "[environment] preset = indoor",
        "ckpt_outdoor.bin": "[environment] preset = outdoor",
    }
    return _pattern_figure(out, ckpt_dir, spec, "fig6_environment_metrics.csv")


def _fig7(out: Path, ckpt_dir) -> list:
    spec = {
        "ckpt_noise_low.bin": "[environment] noise_sigma = 0.02",
        "ckpt_noise_high.bin": "[environment] noise_sigma = 0.6",
    }
    return _pattern_figure(out, ckpt_dir, spec, "fig7_noise_metrics.csv")


def _fig8(out: Path, _ckpt_dir) -> list:
    case = experiments.target_design_case()
    csv = out / "fig8_convergence.csv"
    with open(csv, "w", encoding="utf-8") as f:
        f.write("iteration,error_iterative_fft,error_gradient\n")
        hist_gs = case["gs"].history
        hist_gr = case["grad"].history
        for i in range(max(len(hist_gs), len(hist_gr))):
            e1 = hist_gs[i]["error"] if i < len(hist_gs) else ""
            e2 = hist_gr[i]["error"] if i < len(hist_gr) else ""
            f.write(f"{i},{e1!r},{e2!r}\n")

    plot = out / "fig8_convergence.png"
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy([r["error"] for r in hist_gs], label="iterative FFT")
    ax.semilogy([r["error"] for r in hist_gr], label="gradient")
    ax.set_xlabel("iteration")
    ax.set_ylabel("far-field amplitude residual")
    ax.legend()
    fig.tight_layout()
    fig.savefig(plot, dpi=150)
    plt.close(fig)

    target_png = out / "fig8_target.png"
    gs_png = out / "fig8_iterative_fft.png"
    grad_png = out / "fig8_gradient.png"
    fileio.write_preview_png(target_png, case["target"])
    fileio.write_preview_png(gs_png, case["gs"].pattern)
    fileio.write_preview_png(grad_png, case["grad"].pattern)
    return [csv, plot, target_png, gs_png, grad_png]
