"""First-order degradation synthesis for LQ/HQ pair generation.

Frames are numpy arrays whose two trailing axes are (H, W); any leading axes
(channels, frames, batch) are processed independently with the same
parameters.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidScaleError, InvalidShapeError
from .tensor import Rng

BLUR_KERNEL_SIZE = 21
CUBIC_A = -0.5
RESIZE_MODES = ("bicubic", "bilinear", "nearest")

# JPEG Annex K luminance table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


# ---------------------------------------------------------------- blur


def gaussian_kernel1d(sigma: float, size: int = BLUR_KERNEL_SIZE) -> np.ndarray:
    if sigma < 0:
        raise InvalidConfigError("blur sigma must be >= 0")
    kernel = np.zeros(size)
    if sigma == 0:
        kernel[size // 2] = 1.0
        return kernel
    x = np.arange(size) - size // 2
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _correlate_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def gaussian_blur(frame: np.ndarray, sigma: float, size: int = BLUR_KERNEL_SIZE) -> np.ndarray:
    """Separable isotropic Gaussian blur with reflect-padded borders."""
    if sigma == 0:
        return np.array(frame, copy=True)
    k = gaussian_kernel1d(sigma, size)
    return _correlate_axis(_correlate_axis(np.asarray(frame, dtype=np.float64), k, -2), k, -1)


# ---------------------------------------------------------------- resize


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def _triangle(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x))


def _reflect_index(j: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    j = np.mod(j, period)
    return np.where(j < n, j, period - 1 - j)


def resize_matrix(n_in: int, n_out: int, mode: str = "bicubic", antialias: bool = True) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix; every row sums to one.

    Output pixel ``i`` samples input coordinate ``(i + 0.5) / scale - 0.5``.
    When downscaling with ``antialias`` the kernel is stretched by ``1/scale``.
    Taps outside the frame are mirrored back (half-sample symmetric).
    """
    if n_out < 1:
        raise InvalidScaleError(f"resize produces an empty axis ({n_in} -> {n_out})")
    scale = n_out / n_in
    mat = np.zeros((n_out, n_in))
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    if mode == "nearest":
        src = np.minimum(np.floor((np.arange(n_out) + 0.5) / scale).astype(int), n_in - 1)
        mat[np.arange(n_out), src] = 1.0
        return mat
    if mode == "bicubic":
        kernel, radius = cubic, 2.0
    elif mode == "bilinear":
        kernel, radius = _triangle, 1.0
    else:
        raise InvalidConfigError(f"unknown resize mode {mode!r}")
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    support = radius * stretch
    span = int(math.ceil(support)) * 2 + 2
    for i, c in enumerate(centers):
        taps = np.floor(c - support) + 1 + np.arange(span)
        w = kernel((c - taps) / stretch)
        keep = w != 0
        taps, w = taps[keep].astype(int), w[keep]
        np.add.at(mat[i], _reflect_index(taps, n_in), w / w.sum())
    return mat


def resize_to(frame: np.ndarray, out_h: int, out_w: int, mode: str = "bicubic", antialias: bool = True) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise InvalidScaleError(f"resize to {out_h}x{out_w} is empty")
    if (out_h, out_w) == (h, w) and mode == "nearest":
        return frame.copy()
    my = resize_matrix(h, out_h, mode, antialias)
    mx = resize_matrix(w, out_w, mode, antialias)
    return my @ frame @ mx.T


def resize(frame: np.ndarray, scale: float, mode: str = "bicubic", antialias: bool = True) -> np.ndarray:
    """Resize both trailing axes by ``scale``; extents become round(extent * scale)."""
    if scale <= 0:
        raise InvalidScaleError(f"scale must be positive, got {scale}")
    h, w = np.shape(frame)[-2:]
    out_h, out_w = int(round(h * scale)), int(round(w * scale))
    if out_h < 1 or out_w < 1:
        raise InvalidScaleError(f"scale {scale} maps {h}x{w} to an empty frame")
    return resize_to(frame, out_h, out_w, mode, antialias)


def bicubic_up(clip: np.ndarray, factor: int) -> np.ndarray:
    h, w = np.shape(clip)[-2:]
    return resize_to(clip, h * factor, w * factor, "bicubic")


def bicubic_down4(clip: np.ndarray) -> np.ndarray:
    h, w = np.shape(clip)[-2:]
    if h % 4 or w % 4:
        raise InvalidShapeError(f"bicubic_down4 needs extents divisible by 4, got {h}x{w}")
    return resize_to(clip, h // 4, w // 4, "bicubic", antialias=True)


# ---------------------------------------------------------------- noise


def add_gaussian_noise(frame: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    if sigma < 0:
        raise InvalidConfigError("noise sigma must be >= 0")
    frame = np.asarray(frame, dtype=np.float64)
    if sigma == 0:
        return frame.copy()
    return frame + rng.normal(frame.shape, 0.0, sigma)


# ---------------------------------------------------------------- compression proxy


def dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    mat[0] /= math.sqrt(2.0)
    return mat


_DCT8 = dct_matrix(8)


def quant_table(quality: int) -> np.ndarray | None:
    """IJG quality scaling of the luminance table on the 8-bit scale; None means lossless (q=100)."""
    if not 1 <= quality <= 100:
        raise InvalidConfigError(f"jpeg quality must be in [1, 100], got {quality}")
    if quality == 100:
        return None
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1, 255)


def jpeg_proxy(frame: np.ndarray, quality: int, table: np.ndarray | None = None) -> np.ndarray:
    """8x8 block DCT, quantize/dequantize, inverse DCT, per channel.

    Works on the 8-bit scale (values x 255 - 128). Edge blocks are zero-padded
    and cropped afterwards. The output is not clipped.
    """
    q = quant_table(quality) if table is None else np.asarray(table, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    if q is None:
        return frame.copy()
    h, w = frame.shape[-2:]
    ph, pw = -h % 8, -w % 8
    pad = [(0, 0)] * (frame.ndim - 2) + [(0, ph), (0, pw)]
    x = np.pad(frame, pad) * 255.0 - 128.0
    lead = x.shape[:-2]
    hb, wb = x.shape[-2] // 8, x.shape[-1] // 8
    blocks = x.reshape(lead + (hb, 8, wb, 8))
    coef = np.einsum("ij,...ajbk,lk->...aibl", _DCT8, blocks, _DCT8)
    coef = np.round(coef / q[:, None, :]) * q[:, None, :]
    rec = np.einsum("ij,...aibl,lk->...ajbk", _DCT8, coef, _DCT8)
    rec = (rec.reshape(x.shape) + 128.0) / 255.0
    return rec[..., :h, :w]


# ---------------------------------------------------------------- full pipeline


@dataclass(frozen=True)
class DegradationConfig:
    blur_sigma: tuple = (0.2, 3.0)
    resize_scale: tuple = (0.25, 1.0)
    resize_modes: tuple = RESIZE_MODES
    noise_sigma: tuple = (0.0, 0.1)
    jpeg_quality: tuple = (30, 95)
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_sigma", "resize_scale", "noise_sigma", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.blur_sigma[0] < 0 or self.noise_sigma[0] < 0:
            raise InvalidConfigError("sigmas must be >= 0")
        if self.resize_scale[0] <= 0:
            raise InvalidConfigError("resize scale must be positive")
        if not (1 <= self.jpeg_quality[0] and self.jpeg_quality[1] <= 100):
            raise InvalidConfigError("jpeg quality must lie in [1, 100]")
        bad = set(self.resize_modes) - set(RESIZE_MODES)
        if bad or not self.resize_modes:
            raise InvalidConfigError(f"unknown resize modes {sorted(bad)}")


@dataclass(frozen=True)
class DegradationRecord:
    """Parameters drawn for one clip; enough to replay the degradation exactly."""

    seed: int
    blur_sigma: float
    resize_scale: float
    resize_mode: str
    noise_sigma: float
    jpeg_quality: int

    def to_dict(self) -> dict:
        return asdict(self)


def draw_params(cfg: DegradationConfig, rng: Rng) -> DegradationRecord:
    def pick(bounds):
        lo, hi = bounds
        return float(lo) if lo == hi else float(rng.uniform(None, lo, hi))

    mode = cfg.resize_modes[int(rng.integers(0, len(cfg.resize_modes)))]
    lo_q, hi_q = cfg.jpeg_quality
    quality = int(lo_q) if lo_q == hi_q else int(rng.integers(lo_q, hi_q + 1))
    return DegradationRecord(
        seed=rng.seed,
        blur_sigma=pick(cfg.blur_sigma),
        resize_scale=pick(cfg.resize_scale),
        resize_mode=mode,
        noise_sigma=pick(cfg.noise_sigma),
        jpeg_quality=quality,
    )


def apply_degradation(clip: np.ndarray, rec: DegradationRecord, rng: Rng) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    h, w = clip.shape[-2:]
    x = gaussian_blur(clip, rec.blur_sigma)
    x = resize(x, rec.resize_scale, rec.resize_mode)
    x = add_gaussian_noise(x, rec.noise_sigma, rng)
    x = jpeg_proxy(x, rec.jpeg_quality)
    return resize_to(x, h // 4, w // 4, "bicubic")


def degrade_clip(clip: np.ndarray, cfg: DegradationConfig, rng: Rng | None = None):
    """Blur -> random resize -> noise -> JPEG proxy -> resize to (H/4, W/4).

    One parameter draw serves every frame of the clip. Returns the LQ clip and
    the drawn parameters.
    """
    clip = np.asarray(clip, dtype=np.float64)
    h, w = clip.shape[-2:]
    if h % 4 or w % 4:
        raise InvalidShapeError(f"clip extents {h}x{w} must be divisible by 4")
    rng = Rng(cfg.seed) if rng is None else rng
    rec = draw_params(cfg, rng)
    return apply_degradation(clip, rec, rng), rec
