"""Token-grid views, attention variants and their analytic cost.

A token grid has axes (B, D, n_N, n_H, n_W). Each view keeps D as the feature
axis and folds the axes that are not attended over into the batch:

    spatial              (B n_N)      x (n_H n_W)
    temporal             (B n_H n_W)  x  n_N
    vertical_temporal    (B n_W)      x (n_H n_N)
    horizontal_temporal  (B n_H)      x (n_W n_N)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidConfigError, InvalidShapeError
from .nn import AttentionBlockWeights, axial_angles, transformer_block
from .tensor import Tensor

VIEWS = ("spatial", "temporal", "vertical_temporal", "horizontal_temporal")

# grid axes: 0=B 1=D 2=N 3=H 4=W
_VIEW_ORDER = {
    "spatial": (0, 2, 3, 4, 1),
    "temporal": (0, 3, 4, 2, 1),
    "vertical_temporal": (0, 4, 3, 2, 1),
    "horizontal_temporal": (0, 3, 4, 2, 1),
}
# how many permuted leading axes are folded into the batch
_VIEW_FOLD = {"spatial": 2, "temporal": 3, "vertical_temporal": 2, "horizontal_temporal": 2}


@dataclass
class TokenGrid:
    tensor: Tensor

    def __post_init__(self):
        if self.tensor.ndim != 5:
            raise InvalidShapeError(f"token grid must be 5-d (B, D, n_N, n_H, n_W), got {self.tensor.shape}")

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    @property
    def batch(self) -> int:
        return self.shape[0]

    @property
    def dim(self) -> int:
        return self.shape[1]


def view_positions(view: str, n_t: int, n_h: int, n_w: int) -> np.ndarray:
    """(axis index, time index) pair per token of one view sequence, in sequence order."""
    if view == "spatial":
        hh, ww = np.meshgrid(np.arange(n_h), np.arange(n_w), indexing="ij")
        return np.stack([hh.ravel(), ww.ravel()], axis=1)
    if view == "temporal":
        return np.stack([np.zeros(n_t, dtype=int), np.arange(n_t)], axis=1)
    axis_len = n_h if view == "vertical_temporal" else n_w
    aa, tt = np.meshgrid(np.arange(axis_len), np.arange(n_t), indexing="ij")
    return np.stack([aa.ravel(), tt.ravel()], axis=1)


def to_view(grid: TokenGrid, view: str) -> tuple[Tensor, np.ndarray]:
    if view not in _VIEW_ORDER:
        raise InvalidConfigError(f"unknown view {view!r}")
    b, d, n_t, n_h, n_w = grid.shape
    t = T.permute(grid.tensor, _VIEW_ORDER[view])
    fold = _VIEW_FOLD[view]
    lead = int(np.prod(t.shape[:fold]))
    seq = T.reshape(t, (lead, -1, d))
    return seq, view_positions(view, n_t, n_h, n_w)


def from_view(seq: Tensor, view: str, grid_shape: Sequence[int]) -> TokenGrid:
    order = _VIEW_ORDER[view]
    permuted_shape = tuple(grid_shape[i] for i in order)
    t = T.reshape(seq, permuted_shape)
    inverse = tuple(int(i) for i in np.argsort(order))
    return TokenGrid(T.permute(t, inverse))


def transpose_hw(grid: TokenGrid) -> TokenGrid:
    return TokenGrid(T.permute(grid.tensor, (0, 1, 2, 4, 3)))


# ---------------------------------------------------------------- variants

VARIANTS = (
    "spatial",
    "temporal",
    "spatial_temporal",
    "vertical_temporal",
    "horizontal_temporal",
    "dual_serial_vh",
    "dual_serial_hv",
    "dual_interleaved",
)
SINGLE = {"spatial", "temporal", "vertical_temporal", "horizontal_temporal"}


def _alternate(a: str, b: str, n_a: int, n_b: int) -> list[str]:
    out = []
    for i in range(max(n_a, n_b)):
        if i < n_a:
            out.append(a)
        if i < n_b:
            out.append(b)
    return out


def block_schedule(variant: str, first: int, second: int) -> list[str]:
    """Views visited block by block.

    Single-mechanism variants run all ``first + second`` units in one view;
    two-mechanism variants give ``first`` units to the first mechanism and
    ``second`` to the other.
    """
    if variant in SINGLE:
        return [variant] * (first + second)
    if variant == "spatial_temporal":
        return _alternate("spatial", "temporal", first, second)
    if variant == "dual_serial_vh":
        return ["vertical_temporal"] * first + ["horizontal_temporal"] * second
    if variant == "dual_serial_hv":
        return ["horizontal_temporal"] * first + ["vertical_temporal"] * second
    if variant == "dual_interleaved":
        return _alternate("vertical_temporal", "horizontal_temporal", first, second)
    raise InvalidConfigError(f"unknown attention variant {variant!r}")


def run_blocks(grid: TokenGrid, views: Sequence[str], blocks: Sequence[AttentionBlockWeights],
               heads: int, rope_base: float = 10000.0) -> TokenGrid:
    if len(views) != len(blocks):
        raise InvalidConfigError(f"{len(blocks)} blocks given for a schedule of {len(views)}")
    shape = grid.shape
    head_dim = shape[1] // heads if shape[1] % heads == 0 else None
    if head_dim is None:
        raise InvalidConfigError(f"embedding dim {shape[1]} is not divisible by {heads} heads")
    i = 0
    while i < len(views):
        view = views[i]
        seq, pos = to_view(grid, view)
        angles = axial_angles(pos, head_dim, rope_base)
        while i < len(views) and views[i] == view:
            seq = transformer_block(seq, blocks[i], heads, angles)
            i += 1
        grid = from_view(seq, view, shape)
    return grid


def apply_variant(grid: TokenGrid, variant: str, blocks: Sequence[AttentionBlockWeights], heads: int,
                  depths: tuple[int, int] | None = None, rope_base: float = 10000.0) -> TokenGrid:
    """Run ``blocks`` over ``grid`` in the order dictated by ``variant``.

    ``depths`` is the (first, second) mechanism split; it defaults to an even
    split of the block count.
    """
    if depths is None:
        depths = (len(blocks) - len(blocks) // 2, len(blocks) // 2)
    views = block_schedule(variant, *depths)
    if len(views) != len(blocks):
        raise InvalidConfigError(f"variant {variant} with depths {depths} needs {len(views)} blocks, got {len(blocks)}")
    return run_blocks(grid, views, blocks, heads, rope_base)


# ---------------------------------------------------------------- cost model


@dataclass
class CostReport:
    """Exact parameter and multiply-accumulate counts, optionally nested."""

    label: str
    params: int = 0
    macs: dict = field(default_factory=dict)
    parts: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return self.params + sum(p.total_params for p in self.parts)

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values()) + sum(p.total_macs for p in self.parts)

    def component(self, name: str) -> int:
        return self.macs.get(name, 0) + sum(p.component(name) for p in self.parts)

    def components(self) -> dict:
        out: dict = dict(self.macs)
        for p in self.parts:
            for k, v in p.components().items():
                out[k] = out.get(k, 0) + v
        return out

    def find(self, label: str) -> "CostReport | None":
        if self.label == label:
            return self
        for p in self.parts:
            hit = p.find(label)
            if hit is not None:
                return hit
        return None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "params": self.total_params,
            "macs": self.total_macs,
            "components": self.components(),
            "parts": [p.to_dict() for p in self.parts],
        }


def view_geometry(view: str, b: int, n_t: int, n_h: int, n_w: int) -> tuple[int, int]:
    """(effective batch, sequence length) of a view."""
    return {
        "spatial": (b * n_t, n_h * n_w),
        "temporal": (b * n_h * n_w, n_t),
        "vertical_temporal": (b * n_w, n_h * n_t),
        "horizontal_temporal": (b * n_h, n_w * n_t),
        "omnidirectional": (b, n_t * n_h * n_w),
    }[view]


def score_cost(view: str, b: int, n_t: int, n_h: int, n_w: int, dim: int) -> int:
    batch, length = view_geometry(view, b, n_t, n_h, n_w)
    return batch * length * length * dim


def window_score_cost(b: int, n_t: int, n_h: int, n_w: int, dim: int, window=(2, 8, 8)) -> int:
    """Local window attention: every token scores against one window's tokens."""
    return b * n_t * n_h * n_w * int(np.prod(window)) * dim


def block_cost(view: str, grid_shape, dim: int, mlp_dim: int, label: str | None = None) -> CostReport:
    b, n_t, n_h, n_w = grid_shape
    batch, length = view_geometry(view, b, n_t, n_h, n_w)
    tokens = batch * length
    params = 4 * dim * dim + 4 * dim + 2 * dim * mlp_dim + mlp_dim + dim + 4 * dim
    return CostReport(
        label or view,
        params=params,
        macs={
            "projections": 4 * tokens * dim * dim,
            "scores": batch * length * length * dim,
            "values": batch * length * length * dim,
            "mlp": 2 * tokens * dim * mlp_dim,
        },
    )


def attention_cost(variant: str, grid_shape, dim: int, mlp_dim: int, depths: tuple[int, int] = (12, 12)) -> CostReport:
    """Cost of a block stack; ``grid_shape`` is (B, n_N, n_H, n_W)."""
    views = block_schedule(variant, *depths)
    parts = [block_cost(v, grid_shape, dim, mlp_dim, f"{v}[{i}]") for i, v in enumerate(views)]
    return CostReport(variant, parts=parts)
