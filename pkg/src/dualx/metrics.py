"""PSNR, SSIM, Charbonnier loss and block-matching motion amplitude."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import InvalidShapeError
from .tensor import Tensor

PSNR_CAP = 100.0
CHARBONNIER_EPS = 1e-6
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA = np.array([0.299, 0.587, 0.114])


def to_luma(frame: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a (3, H, W) frame; 2-d frames pass through."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[0] == 3:
        return np.tensordot(LUMA, frame, axes=(0, 0))
    raise InvalidShapeError(f"expected (H, W) or (3, H, W) frame, got {frame.shape}")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y) -> float:
    """PSNR in dB on the [0, 1] range, computed on luma; identical inputs give 100 dB."""
    x, y = _pair(x, y)
    mse = float(np.mean((to_luma(x) - to_luma(y)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim_map(x, y, size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x, y = _pair(x, y)
    x, y = to_luma(x), to_luma(y)
    if x.shape[0] < size or x.shape[1] < size:
        raise InvalidShapeError(f"frame {x.shape} is smaller than the {size}x{size} SSIM window")
    g = gaussian_window(size, sigma)
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(x, y) -> float:
    """Mean SSIM over the valid 11x11 Gaussian-window map of the luma channel."""
    return float(np.mean(ssim_map(x, y)))


def charbonnier(x, y, eps: float = CHARBONNIER_EPS) -> Tensor:
    """mean(sqrt((x - y)^2 + eps^2)); differentiable through the tape."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.shape != y.shape:
        raise InvalidShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    d = T.sub(x, y)
    return T.mean(T.sqrt(T.add(T.square(d), eps * eps)))


# ---------------------------------------------------------------- motion


def block_match(prev: np.ndarray, nxt: np.ndarray, block: int = 16, search: int = 8) -> np.ndarray:
    """Per-block displacement (dx, dy) mapping ``prev`` blocks onto ``nxt`` by exhaustive SAD search.

    Ties go to the smallest displacement. When the frame is large enough the
    block grid is inset by ``search`` pixels so every block sees its full
    search window.
    """
    prev, nxt = to_luma(prev), to_luma(nxt)
    if prev.shape != nxt.shape:
        raise InvalidShapeError(f"frame shapes differ: {prev.shape} vs {nxt.shape}")
    h, w = prev.shape
    my = search if h >= block + 2 * search else 0
    mx = search if w >= block + 2 * search else 0
    cands = sorted(((dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
                   key=lambda d: (d[0] * d[0] + d[1] * d[1], d))
    out = []
    for y in range(my, h - block - my + 1, block):
        for x in range(mx, w - block - mx + 1, block):
            ref = prev[y:y + block, x:x + block]
            best, best_d = math.inf, (0, 0)
            for dy, dx in cands:
                yy, xx = y + dy, x + dx
                if yy < 0 or xx < 0 or yy + block > h or xx + block > w:
                    continue
                sad = np.abs(nxt[yy:yy + block, xx:xx + block] - ref).sum()
                if sad < best:
                    best, best_d = sad, (dx, dy)
            out.append(best_d)
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def motion_amplitude(clip: np.ndarray, block: int = 16, search: int = 8) -> tuple[float, float]:
    """Mean |horizontal| and |vertical| displacement (px/frame) of a (3, N, H, W) or (N, H, W) clip."""
    clip = np.asarray(clip, dtype=np.float64)
    frames = [clip[:, i] for i in range(clip.shape[1])] if clip.ndim == 4 else list(clip)
    if len(frames) < 2:
        raise InvalidShapeError("motion amplitude needs at least two frames")
    us, vs = [], []
    for a, b in zip(frames[:-1], frames[1:]):
        d = block_match(a, b, block, search)
        if len(d) == 0:
            raise InvalidShapeError(f"frames smaller than one {block}px block")
        us.append(np.abs(d[:, 0]).mean())
        vs.append(np.abs(d[:, 1]).mean())
    return float(np.mean(us)), float(np.mean(vs))


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    clip: str
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    motion_u: float | None = None
    motion_v: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_psnr"] = self.mean_psnr
        d["mean_ssim"] = self.mean_ssim
        return d


def evaluate_clip(ref: np.ndarray, test: np.ndarray, name: str = "clip", meta: dict | None = None) -> MetricsReport:
    """Per-frame metrics of (3, N, H, W) clips."""
    ref, test = _pair(ref, test)
    if ref.ndim != 4 or ref.shape[0] != 3:
        raise InvalidShapeError(f"clips must be (3, N, H, W), got {ref.shape}")
    report = MetricsReport(name, meta=dict(meta or {}))
    for i in range(ref.shape[1]):
        report.psnr.append(psnr(ref[:, i], test[:, i]))
        report.ssim.append(ssim(ref[:, i], test[:, i]))
    return report
