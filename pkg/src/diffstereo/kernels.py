"""Raw ndarray numerics shared by the public ops and the differentiation tape.

Every function here is a pure array-in/array-out transform. Where a transform
participates in reverse-mode differentiation, its adjoint lives next to it and
is derived analytically from the interpolation / filter weights rather than by
numeric differentiation.

Conventions fixed here (and relied on everywhere else):
  * The 2-D Fourier transform is unitary and centered: zero frequency sits at
    index ``n // 2`` on both axes and total power is preserved exactly.
  * Bicubic resampling uses the Catmull-Rom kernel (a = -0.5), zero padding
    outside the source grid, and is performed about the grid center ``n // 2``.
  * Horizontal warps use linear interpolation and read out-of-bounds as zero.
  * Cost aggregation is a zero-padded window *sum* (self-adjoint box filter).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


# ---------------------------------------------------------------------------
# centered unitary DFT
# ---------------------------------------------------------------------------

def dft2_unitary(u: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT: zero frequency at (n//2, n//2), power preserving."""
    n = u.shape[-1]
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(u))) / n


def idft2_unitary(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2_unitary` (also its Hermitian adjoint)."""
    n = v.shape[-1]
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(v))) * n


# ---------------------------------------------------------------------------
# phase application
# ---------------------------------------------------------------------------

def phase_to_field(phi: np.ndarray, amplitude) -> np.ndarray:
    """Complex field ``amplitude * exp(i * phi)``; amplitude is a scalar or grid."""
    return amplitude * np.exp(1j * phi)


def phase_to_field_vjp(out: np.ndarray, cot: np.ndarray) -> np.ndarray:
    # d(out)/d(phi) = i * out; real-interleaved chain rule collapses to Im(conj(out) * cot)
    return np.imag(np.conj(out) * cot)


def apply_phase(u: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Multiply a complex field by ``exp(i * phi)`` elementwise."""
    return u * np.exp(1j * phi)


def magnitude_sq(u: np.ndarray) -> np.ndarray:
    return (u.real * u.real + u.imag * u.imag)


def magnitude_sq_vjp(u: np.ndarray, cot: np.ndarray) -> np.ndarray:
    # grads wrt (re, im) are (2 re cot, 2 im cot), packed back into a complex array
    return 2.0 * u * cot


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom, zero padded, about grid center)
# ---------------------------------------------------------------------------

def _catmull_rom_weights(t: np.ndarray) -> tuple[np.ndarray, ...]:
    # taps at offsets -1, 0, +1, +2 from floor(x); t is the fractional part
    w_m1 = -0.5 * t * (1.0 - t) ** 2
    w_0 = 1.5 * t**3 - 2.5 * t**2 + 1.0
    w_p1 = 1.5 * (1.0 - t) ** 3 - 2.5 * (1.0 - t) ** 2 + 1.0
    w_p2 = -0.5 * (1.0 - t) * t**2
    return w_m1, w_0, w_p1, w_p2


@lru_cache(maxsize=32)
def _resample_matrix(n: int, scale: float) -> np.ndarray:
    """1-D resampling operator R with out = R @ src, built once per (n, scale)."""
    c = n // 2
    j = np.arange(n, dtype=float)
    x = c + scale * (j - c)
    i0 = np.floor(x).astype(int)
    t = x - i0
    weights = _catmull_rom_weights(t)
    r = np.zeros((n, n))
    for k, w in zip((-1, 0, 1, 2), weights):
        idx = i0 + k
        ok = (idx >= 0) & (idx < n)
        r[j[ok].astype(int), idx[ok]] = w[ok]
    return r


def resample_bicubic(p: np.ndarray, scale: float) -> np.ndarray:
    """Rescale a square pattern by ``scale`` about its center; zero outside."""
    n = p.shape[0]
    if p.shape[0] != p.shape[1]:
        raise ShapeError(f"resample expects a square grid, got {p.shape}")
    r = _resample_matrix(n, float(scale))
    return r @ p @ r.T


def resample_bicubic_vjp(cot: np.ndarray, scale: float) -> np.ndarray:
    n = cot.shape[0]
    r = _resample_matrix(n, float(scale))
    return r.T @ cot @ r


# ---------------------------------------------------------------------------
# horizontal disparity warp (linear interpolation, zero outside)
# ---------------------------------------------------------------------------

def warp_horizontal(p: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Sample ``p`` at ``x - disp`` along rows; out-of-bounds taps read zero."""
    if p.shape != disp.shape:
        raise ShapeError(f"pattern {p.shape} vs disparity {disp.shape}")
    h, w = p.shape
    x = np.arange(w)[None, :] - disp
    i0 = np.floor(x).astype(int)
    t = x - i0
    i1 = i0 + 1
    ok0 = (i0 >= 0) & (i0 < w)
    ok1 = (i1 >= 0) & (i1 < w)
    rows = np.arange(h)[:, None].repeat(w, axis=1)
    p0 = np.where(ok0, p[rows, np.clip(i0, 0, w - 1)], 0.0)
    p1 = np.where(ok1, p[rows, np.clip(i1, 0, w - 1)], 0.0)
    return (1.0 - t) * p0 + t * p1


def warp_horizontal_vjp(
    p: np.ndarray, disp: np.ndarray, cot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints wrt the pattern (scatter-add) and the disparity grid."""
    h, w = p.shape
    x = np.arange(w)[None, :] - disp
    i0 = np.floor(x).astype(int)
    t = x - i0
    i1 = i0 + 1
    ok0 = (i0 >= 0) & (i0 < w)
    ok1 = (i1 >= 0) & (i1 < w)
    rows = np.arange(h)[:, None].repeat(w, axis=1)

    grad_p = np.zeros_like(p)
    np.add.at(grad_p, (rows[ok0], i0[ok0]), ((1.0 - t) * cot)[ok0])
    np.add.at(grad_p, (rows[ok1], i1[ok1]), (t * cot)[ok1])

    p0 = np.where(ok0, p[rows, np.clip(i0, 0, w - 1)], 0.0)
    p1 = np.where(ok1, p[rows, np.clip(i1, 0, w - 1)], 0.0)
    # out = (1-t) p0 + t p1 with x = -disp + const, so d(out)/d(disp) = -(p1 - p0)
    grad_disp = -(p1 - p0) * cot
    return grad_p, grad_disp


# ---------------------------------------------------------------------------
# radiometry + sensor clamp
# ---------------------------------------------------------------------------

def radiometry_clamp(
    p_view: np.ndarray,
    refl: np.ndarray,
    noise: np.ndarray,
    gamma: float,
    alpha: float,
    beta: float,
    clip_lo: float,
    clip_hi: float,
) -> np.ndarray:
    """Sensor model: clamp(gamma * (alpha + beta * P) * refl + noise)."""
    pre = gamma * (alpha + beta * p_view) * refl + noise
    return np.clip(pre, clip_lo, clip_hi)


def radiometry_clamp_vjp(
    p_view: np.ndarray,
    refl: np.ndarray,
    noise: np.ndarray,
    gamma: float,
    alpha: float,
    beta: float,
    clip_lo: float,
    clip_hi: float,
    cot: np.ndarray,
) -> np.ndarray:
    # straight-through inside the sensor range, zero where saturated
    pre = gamma * (alpha + beta * p_view) * refl + noise
    interior = (pre > clip_lo) & (pre < clip_hi)
    return np.where(interior, gamma * beta * refl * cot, 0.0)


# ---------------------------------------------------------------------------
# box window sum (zero padded => self-adjoint)
# ---------------------------------------------------------------------------

def window_sum(a: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return a
    r = window // 2
    h, w = a.shape
    ap = np.pad(a, r)
    s = np.zeros((h + 2 * r + 1, w + 2 * r + 1))
    s[1:, 1:] = ap.cumsum(axis=0).cumsum(axis=1)
    return (
        s[window:, window:]
        - s[:-window, window:]
        - s[window:, :-window]
        + s[:-window, :-window]
    )


# ---------------------------------------------------------------------------
# cost volume over integer disparity candidates
# ---------------------------------------------------------------------------

def _shift_replicate(f: np.ndarray, d: int) -> np.ndarray:
    """f[..., x - d] with edge replication on the left border."""
    if d == 0:
        return f
    out = np.empty_like(f)
    out[..., d:] = f[..., : f.shape[-1] - d]
    out[..., :d] = f[..., :1]
    return out


def cost_volume(f_ref: np.ndarray, f_other: np.ndarray, d_max: int, window: int) -> np.ndarray:
    """Windowed L1 cost: cost[d] = boxsum_w( sum_c |f_ref - f_other(x-d)| )."""
    if f_ref.shape != f_other.shape:
        raise ShapeError(f"feature shapes differ: {f_ref.shape} vs {f_other.shape}")
    c, h, w = f_ref.shape
    if d_max >= w:
        raise ShapeError(f"d_max={d_max} must be < width {w}")
    cost = np.empty((d_max, h, w))
    for d in range(d_max):
        sad = np.abs(f_ref - _shift_replicate(f_other, d)).sum(axis=0)
        cost[d] = window_sum(sad, window)
    return cost


def cost_volume_vjp(
    f_ref: np.ndarray,
    f_other: np.ndarray,
    d_max: int,
    window: int,
    cot: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    grad_ref = np.zeros_like(f_ref)
    grad_other = np.zeros_like(f_other)
    w = f_ref.shape[-1]
    for d in range(d_max):
        shifted = _shift_replicate(f_other, d)
        g_sad = window_sum(cot[d], window)  # box sum is self-adjoint
        g_diff = np.sign(f_ref - shifted) * g_sad[None]
        grad_ref += g_diff
        if d == 0:
            grad_other -= g_diff
        else:
            grad_other[..., : w - d] -= g_diff[..., d:]
            grad_other[..., 0] -= g_diff[..., :d].sum(axis=-1)
    return grad_ref, grad_other


# ---------------------------------------------------------------------------
# cost volume fusion across baselines
# ---------------------------------------------------------------------------

def _fusion_taps(d_wide: int, dn: int, ratio: float):
    d = np.arange(d_wide, dtype=float)
    x = d / ratio
    i0 = np.floor(x).astype(int)
    t = x - i0
    over = i0 >= dn - 1
    i0[over] = dn - 1
    t[over] = 0.0
    i1 = np.minimum(i0 + 1, dn - 1)
    return i0, i1, t


def fuse_cost_volumes(wide: np.ndarray, narrow: np.ndarray, ratio: float) -> np.ndarray:
    """fused[d] = wide[d] + narrow interpolated at d / ratio (linear between slices)."""
    if wide.shape[1:] != narrow.shape[1:]:
        raise ShapeError(f"volume extents differ: {wide.shape} vs {narrow.shape}")
    dw, dn = wide.shape[0], narrow.shape[0]
    needed = (dw - 1) / ratio
    if needed > dn - 1 + 1e-9:
        raise ShapeError(
            f"narrow volume covers {dn} slices but d/ratio reaches {needed:.3f}"
        )
    i0, i1, t = _fusion_taps(dw, dn, ratio)
    tt = t[:, None, None]
    return wide + (1.0 - tt) * narrow[i0] + tt * narrow[i1]


def fuse_cost_volumes_vjp(
    wide_shape: tuple, narrow_shape: tuple, ratio: float, cot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    dw, dn = wide_shape[0], narrow_shape[0]
    grad_narrow = np.zeros(narrow_shape)
    i0, i1, t = _fusion_taps(dw, dn, ratio)
    for d in range(dw):
        grad_narrow[i0[d]] += (1.0 - t[d]) * cot[d]
        grad_narrow[i1[d]] += t[d] * cot[d]
    return cot.copy(), grad_narrow


# ---------------------------------------------------------------------------
# soft-argmin disparity expectation
# ---------------------------------------------------------------------------

def soft_argmin(cost: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax(-cost / T) expectation over the disparity axis."""
    logits = -cost / temperature
    logits -= logits.max(axis=0, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=0, keepdims=True)
    d = np.arange(cost.shape[0], dtype=float)[:, None, None]
    return (d * p).sum(axis=0)


def soft_argmin_vjp(cost: np.ndarray, temperature: float, cot: np.ndarray) -> np.ndarray:
    logits = -cost / temperature
    logits -= logits.max(axis=0, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=0, keepdims=True)
    d = np.arange(cost.shape[0], dtype=float)[:, None, None]
    out = (d * p).sum(axis=0)
    return p * (out[None] - d) / temperature * cot[None]


# ---------------------------------------------------------------------------
# small linear conv stack (same-size, zero padded)
# ---------------------------------------------------------------------------

def conv2d(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlation of [C_in,H,W] with [C_out,C_in,kh,kw] plus bias, zero 'same' pad."""
    co, ci, kh, kw = k.shape
    if x.shape[0] != ci:
        raise ShapeError(f"input channels {x.shape[0]} != kernel channels {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv kernels must have odd extents")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [ci, H, W, kh, kw]
    return np.einsum("ihwuv,oiuv->ohw", win, k) + b[:, None, None]


def conv2d_vjp(
    x: np.ndarray, k: np.ndarray, cot: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    co, ci, kh, kw = k.shape
    h, w = x.shape[1:]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    grad_k = np.einsum("ihwuv,ohw->oiuv", win, cot)
    grad_b = cot.sum(axis=(1, 2))
    grad_xp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            grad_xp[:, u : u + h, v : v + w] += np.einsum("oi,ohw->ihw", k[:, :, u, v], cot)
    grad_x = grad_xp[:, ph : ph + h, pw : pw + w]
    return grad_x, grad_k, grad_b


# ---------------------------------------------------------------------------
# mean-removed patch features (replicate padded)
# ---------------------------------------------------------------------------

def patch_features(x: np.ndarray, window: int) -> np.ndarray:
    """[w*w, H, W] stack of local samples with the patch mean removed."""
    if window % 2 == 0:
        raise ShapeError("patch window must be odd")
    r = window // 2
    xp = np.pad(x, r, mode="edge")
    win = sliding_window_view(xp, (window, window))  # [H, W, w, w]
    mean = win.mean(axis=(-2, -1))
    out = win.reshape(*x.shape, window * window) - mean[..., None]
    return np.ascontiguousarray(np.moveaxis(out, -1, 0))


def patch_features_vjp(x_shape: tuple, window: int, cot: np.ndarray) -> np.ndarray:
    h, w = x_shape
    r = window // 2
    s = cot.sum(axis=0) / (window * window)
    grad_xp = np.zeros((h + 2 * r, w + 2 * r))
    c = 0
    for u in range(window):
        for v in range(window):
            grad_xp[u : u + h, v : v + w] += cot[c] - s
            c += 1
    # fold the replicate padding back onto the border pixels (rows, then columns)
    core = grad_xp[r : r + h, :].copy()
    if r:
        core[0, :] += grad_xp[:r, :].sum(axis=0)
        core[-1, :] += grad_xp[r + h :, :].sum(axis=0)
    grad_x = core[:, r : r + w].copy()
    if r:
        grad_x[:, 0] += core[:, :r].sum(axis=1)
        grad_x[:, -1] += core[:, r + w :].sum(axis=1)
    return grad_x


# ---------------------------------------------------------------------------
# masked mean absolute error
# ---------------------------------------------------------------------------

def masked_mae(est: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    denom = mask.sum()
    if denom <= 0:
        raise ShapeError("masked MAE needs at least one valid pixel")
    return float((mask * np.abs(est - gt)).sum() / denom)


def masked_mae_vjp(est: np.ndarray, gt: np.ndarray, mask: np.ndarray, cot: float) -> np.ndarray:
    # subgradient 0 where est == gt
    return mask * np.sign(est - gt) / mask.sum() * cot


# ---------------------------------------------------------------------------
# misc small helpers
# ---------------------------------------------------------------------------

def bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize (align-corners-free, pixel-center convention)."""
    h, w = a.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    ty = np.clip(ys - y0, 0.0, 1.0)[:, None]
    tx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a00 = a[np.ix_(y0, x0)]
    a01 = a[np.ix_(y0, x1)]
    a10 = a[np.ix_(y1, x0)]
    a11 = a[np.ix_(y1, x1)]
    return (1 - ty) * ((1 - tx) * a00 + tx * a01) + ty * ((1 - tx) * a10 + tx * a11)


def quantize_wrap(h: np.ndarray, levels: int, period: float) -> np.ndarray:
    """Snap to the nearest of ``levels`` uniform levels on the circle [0, period)."""
    step = period / levels
    return (np.round(h / step) % levels) * step


def wrap_distance(a: np.ndarray, b: np.ndarray, period: float) -> np.ndarray:
    d = np.abs(a - b) % period
    return np.minimum(d, period - d)
