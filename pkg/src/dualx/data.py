"""Procedural textured clips with known global motion."""
from __future__ import annotations

import numpy as np

from .errors import InvalidShapeError
from .tensor import Rng


def synthetic_clip(rng: Rng | int, frames: int, height: int, width: int,
                   motion: tuple[float, float] = (1.0, 0.0), components: int = 12) -> np.ndarray:
    """(3, N, H, W) clip in [0, 1] sampled from a random sum of gratings.

    The texture is an analytic function of position, so frame ``t`` is the
    first frame translated by exactly ``t * motion`` pixels (u along width,
    v along height).
    """
    if frames < 1 or height < 1 or width < 1:
        raise InvalidShapeError(f"clip extents must be >= 1, got ({frames}, {height}, {width})")
    rng = Rng(rng) if isinstance(rng, int) else rng
    freq = rng.uniform((components, 2), 0.03, 0.25) * np.where(rng.uniform((components, 2)) < 0.5, -1, 1)
    phase = rng.uniform((components,), 0, 2 * np.pi)
    amp = rng.uniform((components,), 0.3, 1.0)
    mix = rng.uniform((3, components), 0.2, 1.0)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    out = np.empty((3, frames, height, width))
    u, v = motion
    for t in range(frames):
        # content moves by (+u, +v), so sample the pattern at the pre-image
        px, py = xs - u * t, ys - v * t
        waves = np.sin(2 * np.pi * (freq[:, 0, None, None] * px + freq[:, 1, None, None] * py) + phase[:, None, None])
        waves = waves * amp[:, None, None]
        out[:, t] = np.tensordot(mix, waves, axes=(1, 0))
    lo, hi = out.min(), out.max()
    return 0.05 + 0.9 * (out - lo) / (hi - lo if hi > lo else 1.0)


def synthetic_dataset(seed: int, count: int, frames: int, height: int, width: int,
                      max_motion: float = 2.0) -> list[np.ndarray]:
    """``count`` clips with random global motion, horizontal-dominant on average."""
    rng = Rng(seed)
    clips = []
    for i in range(count):
        child = rng.spawn(i)
        u = float(child.uniform(None, -max_motion, max_motion))
        v = float(child.uniform(None, -max_motion, max_motion)) * 0.5
        clips.append(synthetic_clip(child.spawn(1), frames, height, width, (u, v)))
    return clips
