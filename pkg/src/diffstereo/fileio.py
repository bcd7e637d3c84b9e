"""File formats: PFM, netpbm masks/previews, the DOE container, checkpoints.

All binary layouts are fixed little-endian (except netpbm's big-endian 16-bit
convention) so files round-trip bit-exactly across platforms.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

# ---------------------------------------------------------------------------
# PFM (grayscale "Pf", scale -1.0 = little endian, bottom-up rows)
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise DataError(f"PFM writer expects a 2-D grid, got shape {data.shape}")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            raise DataError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
        if magic != b"Pf":
            raise DataError(f"{path}: not a PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise DataError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        fmt = "<f4" if scale < 0 else ">f4"
        raw = f.read(4 * w * h)
        if len(raw) != 4 * w * h:
            raise DataError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype=fmt).reshape(h, w)
    return np.flipud(data).astype(np.float64)


# ---------------------------------------------------------------------------
# netpbm: 1-bit masks (P4) and 16-bit grayscale (P5)
# ---------------------------------------------------------------------------

def write_mask_pbm(path, mask: np.ndarray) -> None:
    """1-bit mask; nonzero pixels are written as set bits."""
    mask = np.asarray(mask) != 0
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode())
        f.write(np.packbits(mask, axis=1).tobytes())


def read_mask_pbm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P4":
            raise DataError(f"{path}: not a binary PBM mask")
        w, h = map(int, f.readline().split())
        row_bytes = (w + 7) // 8
        raw = np.frombuffer(f.read(row_bytes * h), dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(h, row_bytes), axis=1)[:, :w]
    return bits.astype(bool)


def write_gray16_pgm(path, data: np.ndarray) -> None:
    """16-bit grayscale PGM (big-endian per netpbm)."""
    data = np.asarray(data)
    if data.dtype != np.uint16:
        lo, hi = float(data.min()), float(data.max())
        scale = 65535.0 / (hi - lo) if hi > lo else 0.0
        data = ((data - lo) * scale).astype(np.uint16)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.astype(">u2").tobytes())


# ---------------------------------------------------------------------------
# 8-bit previews (PNG via Pillow)
# ---------------------------------------------------------------------------

def write_preview_png(path, data: np.ndarray, colormap: str | None = None) -> None:
    """Normalize to 8 bit and save; optional matplotlib colormap name."""
    from PIL import Image

    a = np.asarray(data, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    norm = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    if colormap:
        import matplotlib

        rgba = matplotlib.colormaps[colormap](norm)
        img = (rgba[..., :3] * 255).astype(np.uint8)
    else:
        img = (norm * 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def read_image_gray(path) -> np.ndarray:
    """Any 8/16-bit image -> float [0, 1] grayscale (BT.601 luma for color)."""
    from PIL import Image

    img = Image.open(path)
    peak = 65535.0 if img.mode in ("I", "I;16", "I;16B", "I;16L") else 255.0
    a = np.asarray(img, dtype=float) / peak
    if a.ndim == 3:
        a = 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]
    return a


# ---------------------------------------------------------------------------
# DOE height-map container
# ---------------------------------------------------------------------------

_DOE_MAGIC = "DOEHMAP1"


def write_doe(path, doe) -> None:
    """8-line text header (magic, N, pitch, lambda, eta, levels, min, max) + f32le grid."""
    h = np.asarray(doe.height_h, dtype=np.float32)
    header = (
        f"{_DOE_MAGIC}\n{doe.n}\n{doe.pitch_u!r}\n{doe.wavelength_lambda!r}\n"
        f"{doe.refractive_index_eta!r}\n{doe.num_quant_levels}\n"
        f"{float(h.min())!r}\n{float(h.max())!r}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(h.astype("<f4").tobytes())


def read_doe(path):
    from .wavefield import DOEProfile

    with open(path, "rb") as f:
        lines = [f.readline().strip().decode() for _ in range(8)]
        if lines[0] != _DOE_MAGIC:
            raise DataError(f"{path}: not a DOE height-map file")
        n = int(lines[1])
        pitch, wavelength, eta = float(lines[2]), float(lines[3]), float(lines[4])
        levels = int(lines[5])
        raw = f.read(4 * n * n)
        if len(raw) != 4 * n * n:
            raise DataError(f"{path}: truncated DOE payload")
    heights = np.frombuffer(raw, dtype="<f4").reshape(n, n).astype(np.float64)
    return DOEProfile(heights, eta, wavelength, pitch, levels)


def write_doe_preview(path, doe) -> None:
    """16-bit grayscale image of the quantized level indices, for fabrication checks."""
    step = doe.max_height / doe.num_quant_levels
    levels = (np.round(doe.height_h / step) % doe.num_quant_levels).astype(np.uint16)
    span = 65535 // max(doe.num_quant_levels - 1, 1)
    write_gray16_pgm(path, (levels * span).astype(np.uint16))


# ---------------------------------------------------------------------------
# optimizer checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"DSCKPT1\n"


def write_checkpoint(path, scalars: dict, arrays: dict[str, np.ndarray]) -> None:
    """Layout: magic, u32 header length, JSON header, then raw C-order buffers.

    The JSON header stores the scalar state (seed, iteration, rng state, ...)
    and a manifest of array names / dtypes / shapes in payload order.
    """
    manifest = []
    payload = b""
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        manifest.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        payload += arr.tobytes()
    header = json.dumps({"version": 1, "scalars": scalars, "arrays": manifest}).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(payload)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        if header.get("version") != 1:
            raise DataError(f"{path}: unsupported checkpoint version")
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise DataError(f"{path}: truncated checkpoint payload at {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header["scalars"], arrays


# ---------------------------------------------------------------------------
# loss-history CSV
# ---------------------------------------------------------------------------

def write_loss_csv(path, history) -> None:
    """Rows of (iteration, loss, alpha, beta, noise_sigma)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("iteration,loss,alpha,beta,noise_sigma\n")
        for rec in history:
            f.write(
                f"{rec['iteration']},{rec['loss']!r},{rec['alpha']!r},"
                f"{rec['beta']!r},{rec['noise_sigma']!r}\n"
            )


def read_loss_csv(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if header != ["iteration", "loss", "alpha", "beta", "noise_sigma"]:
            raise DataError(f"{path}: unexpected loss CSV header")
        for line in f:
            it, loss, alpha, beta, sigma = line.strip().split(",")
            rows.append(
                {
                    "iteration": int(it),
                    "loss": float(loss),
                    "alpha": float(alpha),
                    "beta": float(beta),
                    "noise_sigma": float(sigma),
                }
            )
    return rows


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
