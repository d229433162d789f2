"""Overlapping spatial tiles and temporal windows with partition-of-unity blending."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidConfigError


def _starts(extent: int, size: int, overlap: int) -> list[int]:
    if size >= extent:
        return [0]
    stride = size - overlap
    starts = list(range(0, extent - size, stride))
    starts.append(extent - size)
    return sorted(set(starts))


def _ramp(n: int, kind: str) -> np.ndarray:
    """Strictly positive rising ramp of length n ending just below 1."""
    t = (np.arange(n) + 0.5) / n
    if kind == "cosine":
        return 0.5 - 0.5 * np.cos(np.pi * t)
    return t


def axis_weights(starts: list[int], size: int, extent: int, overlap: int, margin: int = 0,
                 scale: int = 1, kind: str = "cosine") -> list[np.ndarray]:
    """Blend weights of every segment along one axis, normalized to sum to one.

    Weights rise over ``overlap`` units at interior edges and are zero within
    ``margin`` units of an interior edge. Everything is evaluated at ``scale``
    samples per unit.
    """
    n = size * scale
    band = max(overlap - 2 * margin, 0) * scale
    guard = margin * scale
    raw = []
    for s in starts:
        w = np.ones(n)
        for at_start, interior in ((True, s > 0), (False, s + size < extent)):
            if not interior:
                continue
            prof = np.concatenate([np.zeros(min(guard, n)), _ramp(band, kind) if band else np.zeros(0)])[:n]
            if at_start:
                w[:len(prof)] *= prof
            else:
                w[n - len(prof):] *= prof[::-1]
        raw.append(w)
    total = np.zeros(extent * scale)
    for s, w in zip(starts, raw):
        total[s * scale:s * scale + n] += w
    if np.any(total <= 0):
        raise InvalidConfigError("tiles leave samples with zero total weight; reduce margin or raise overlap")
    return [w / total[s * scale:s * scale + n] for s, w in zip(starts, raw)]


@dataclass
class TilePlan:
    height: int
    width: int
    frames: int
    tile_h: int
    tile_w: int
    t_window: int
    ys: list = field(default_factory=list)
    xs: list = field(default_factory=list)
    ts: list = field(default_factory=list)
    overlap: int = 16
    t_overlap: int = 4
    margin: int = 2

    @property
    def tiles(self) -> list[tuple[int, int, int, int]]:
        """(y, x, height, width) rectangles on the (padded) LQ frame."""
        return [(y, x, self.tile_h, self.tile_w) for y in self.ys for x in self.xs]

    @property
    def windows(self) -> list[tuple[int, int]]:
        return [(t, self.t_window) for t in self.ts]

    def spatial_weights(self, scale: int = 1) -> tuple[list[np.ndarray], list[np.ndarray]]:
        wy = axis_weights(self.ys, self.tile_h, self.height, self.overlap, self.margin, scale)
        wx = axis_weights(self.xs, self.tile_w, self.width, self.overlap, self.margin, scale)
        return wy, wx

    def temporal_weights(self) -> list[np.ndarray]:
        return axis_weights(self.ts, self.t_window, self.frames, self.t_overlap, 0, 1, kind="triangle")

    def weight_map(self, scale: int = 1) -> np.ndarray:
        """Sum of all tile weights at every sample (ones for a valid plan)."""
        wy, wx = self.spatial_weights(scale)
        total = np.zeros((self.height * scale, self.width * scale))
        for y, w_y in zip(self.ys, wy):
            for x, w_x in zip(self.xs, wx):
                total[y * scale:(y + self.tile_h) * scale, x * scale:(x + self.tile_w) * scale] += np.outer(w_y, w_x)
        return total

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tiles"] = self.tiles
        d["windows"] = self.windows
        return d


def plan_tiles(height: int, width: int, frames: int, tile_size: int = 112, t_window: int = 16,
               overlap: int = 16, t_overlap: int = 4, patch: tuple[int, int, int] = (1, 2, 2),
               margin: int = 2) -> TilePlan:
    """Tile an LQ clip of (frames, height, width), already padded to patch multiples.

    Tile extents are rounded down to patch multiples; a tile larger than the
    frame collapses to a single full-frame tile.
    """
    pt, ph, pw = patch
    if height % ph or width % pw or frames % pt:
        raise InvalidConfigError(f"frame ({frames}, {height}, {width}) is not padded to the patch size {patch}")
    if tile_size < 2 * overlap:
        raise InvalidConfigError(f"tile size {tile_size} must be at least twice the overlap {overlap}")
    if t_window < 1:
        raise InvalidConfigError("temporal window must be >= 1")
    if overlap < 0 or t_overlap < 0 or margin < 0:
        raise InvalidConfigError("overlaps and margin must be >= 0")
    if overlap <= 2 * margin:
        margin = 0
    tile_h = min(height, max(ph, tile_size - tile_size % ph))
    tile_w = min(width, max(pw, tile_size - tile_size % pw))
    win = min(frames, max(pt, t_window - t_window % pt))
    t_ov = min(t_overlap, win - 1) if win < frames else 0
    ov_h = min(overlap, tile_h - 1) if tile_h < height else 0
    ov_w = min(overlap, tile_w - 1) if tile_w < width else 0
    ys = _starts(height, tile_h, ov_h)
    xs = _starts(width, tile_w, ov_w)
    ts = _starts(frames, win, t_ov)
    if ys != [0] and any(b - a <= 0 for a, b in zip(ys, ys[1:])):
        raise InvalidConfigError("degenerate tile plan")
    return TilePlan(height, width, frames, tile_h, tile_w, win, ys, xs, ts, overlap, t_ov, margin)


def pad_to_patch(clip: np.ndarray, patch: tuple[int, int, int]) -> np.ndarray:
    """Reflect-pad the trailing (N, H, W) axes of a clip up to patch multiples."""
    pt, ph, pw = patch
    n, h, w = clip.shape[-3:]
    lead = clip.ndim - 3
    out = clip
    for axis, (extent, p) in enumerate(((n, pt), (h, ph), (w, pw))):
        amount = -extent % p
        if amount:
            pads = [(0, 0)] * clip.ndim
            pads[lead + axis] = (0, amount)
            # a single sample cannot be mirrored
            out = np.pad(out, pads, mode="reflect" if extent > 1 else "edge")
    return out


def tiled_forward(clip: np.ndarray, model: Callable[[np.ndarray], np.ndarray], scale: int,
                  patch: tuple[int, int, int] = (1, 2, 2), tile_size: int = 112, t_window: int = 16,
                  overlap: int = 16, t_overlap: int = 4, margin: int = 2,
                  plan: TilePlan | None = None) -> np.ndarray:
    """Run ``model`` tile by tile over a (B, 3, N, H, W) clip and blend the upscaled outputs.

    Tiles are visited in a fixed order (windows, then rows, then columns) so the
    accumulation is bit-reproducible.
    """
    clip = np.asarray(clip)
    b, c, n, h, w = clip.shape
    padded = pad_to_patch(clip, patch)
    pn, ph_, pw_ = padded.shape[-3:]
    if plan is None:
        plan = plan_tiles(ph_, pw_, pn, tile_size, t_window, overlap, t_overlap, patch, margin)
    wy, wx = plan.spatial_weights(scale)
    wt = plan.temporal_weights()
    out = None
    for t0, w_t in zip(plan.ts, wt):
        for y0, w_y in zip(plan.ys, wy):
            for x0, w_x in zip(plan.xs, wx):
                tile = padded[:, :, t0:t0 + plan.t_window, y0:y0 + plan.tile_h, x0:x0 + plan.tile_w]
                res = model(np.ascontiguousarray(tile))
                if out is None:
                    out = np.zeros((b, res.shape[1], pn, ph_ * scale, pw_ * scale), dtype=res.dtype)
                weight = (w_t[:, None, None] * np.outer(w_y, w_x)[None]).astype(res.dtype)
                out[:, :, t0:t0 + plan.t_window, y0 * scale:(y0 + plan.tile_h) * scale,
                    x0 * scale:(x0 + plan.tile_w) * scale] += res * weight
    return out[:, :, :n, :h * scale, :w * scale]


def seam_score(frame: np.ndarray, plan: TilePlan, scale: int) -> tuple[float, float]:
    """Max |horizontal gradient| on tile-boundary columns vs. elsewhere."""
    g = np.abs(np.diff(np.asarray(frame, dtype=np.float64), axis=-1))
    cols = set()
    for x in plan.xs[1:]:
        cols.update({x * scale - 1, x * scale})
    for x in plan.xs[:-1]:
        end = (x + plan.tile_w) * scale
        cols.update({end - 1, end - 2})
    cols = sorted(c for c in cols if 0 <= c < g.shape[-1])
    border = float(g[..., cols].max()) if cols else 0.0
    mask = np.ones(g.shape[-1], dtype=bool)
    mask[cols] = False
    interior = float(g[..., mask].max()) if mask.any() else 0.0
    return border, interior

