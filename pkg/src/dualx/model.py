"""DualX-VSR network: input video embedding, dual axial transformer, reconstruction."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

import numpy as np

from . import tensor as T
from .degradation import bicubic_up
from .errors import InvalidConfigError, InvalidShapeError
from .nn import AttentionBlockWeights, block_param_shapes, conv2d, conv3d, gelu, linear, pixel_shuffle
from .tensor import Rng, Tensor
from .topology import VARIANTS, TokenGrid, block_schedule, run_blocks


@dataclass(frozen=True)
class ModelConfig:
    upscale: int = 4
    patch_t: int = 1
    patch_h: int = 2
    patch_w: int = 2
    pre_channels: int = 64
    pre_extraction: str = "conv2d"
    prep_depth: int = 2
    prep_mlp: int = 128
    prep_heads: int = 4
    embed_dim: int = 1280
    mlp_dim: int = 2560
    heads: int = 10
    vtab_depth: int = 6
    htab_depth: int = 6
    arrangement: str = "dual_serial_vh"
    recon_depth: int = 2
    recon_mlp: int = 2560
    recon_heads: int = 10
    recon_channels: int = 64
    shuffle_factor: int = 2
    rope_base: float = 10000.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 0:
                raise InvalidConfigError(f"{f.name} must be non-negative")
        for name in ("upscale", "patch_t", "patch_h", "patch_w", "pre_channels", "embed_dim", "mlp_dim",
                     "heads", "recon_channels", "shuffle_factor", "prep_heads", "recon_heads"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.pre_extraction not in ("conv2d", "conv3d"):
            raise InvalidConfigError(f"pre_extraction must be conv2d or conv3d, got {self.pre_extraction!r}")
        if self.arrangement not in VARIANTS:
            raise InvalidConfigError(f"unknown arrangement {self.arrangement!r}; expected one of {VARIANTS}")
        for dim, heads, what in ((self.pre_channels, self.prep_heads, "preprocessing"),
                                 (self.embed_dim, self.heads, "transformer"),
                                 (self.embed_dim, self.recon_heads, "reconstruction")):
            if dim % heads:
                raise InvalidConfigError(f"{what} embedding dim {dim} is not divisible by {heads} heads")
            if (dim // heads) % 4:
                raise InvalidConfigError(f"{what} head dim {dim // heads} must be divisible by 4 for axial rotary encoding")
        if self.upscale_stages is None:
            raise InvalidConfigError(f"upscale {self.upscale} is not a power of shuffle factor {self.shuffle_factor}")

    @property
    def upscale_stages(self) -> int | None:
        stages, s = 0, 1
        while s < self.upscale:
            s *= self.shuffle_factor
            stages += 1
            if self.shuffle_factor == 1:
                return None
        return stages if s == self.upscale else None

    @property
    def patch_features(self) -> int:
        return self.pre_channels * self.patch_t * self.patch_h * self.patch_w

    @property
    def transformer_views(self) -> list[str]:
        return block_schedule(self.arrangement, self.vtab_depth, self.htab_depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "paper": ModelConfig(),
    "desk": ModelConfig(
        pre_channels=16, prep_depth=1, prep_mlp=32, prep_heads=2,
        embed_dim=64, mlp_dim=128, heads=4, vtab_depth=1, htab_depth=1,
        recon_depth=1, recon_mlp=128, recon_heads=4, recon_channels=16,
    ),
    "tiny": ModelConfig(
        pre_channels=4, prep_depth=1, prep_mlp=8, prep_heads=1,
        embed_dim=8, mlp_dim=16, heads=2, vtab_depth=1, htab_depth=1,
        recon_depth=1, recon_mlp=16, recon_heads=2, recon_channels=4,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise InvalidConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return replace(base, **overrides)


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    d, D, r = cfg.pre_channels, cfg.embed_dim, cfg.shuffle_factor
    shapes: OrderedDict[str, tuple] = OrderedDict()
    k = (3, 3, 3) if cfg.pre_extraction == "conv3d" else (3, 3)
    shapes["pre.w"] = (d, 3) + k
    shapes["pre.b"] = (d,)
    for i in range(cfg.prep_depth):
        for name, shape in block_param_shapes(d, cfg.prep_mlp).items():
            shapes[f"prep.{i}.{name}"] = shape
    shapes["embed.w"] = (cfg.patch_features, D)
    shapes["embed.b"] = (D,)
    for i in range(len(cfg.transformer_views)):
        for name, shape in block_param_shapes(D, cfg.mlp_dim).items():
            shapes[f"xformer.{i}.{name}"] = shape
    for i in range(cfg.recon_depth):
        for name, shape in block_param_shapes(D, cfg.recon_mlp).items():
            shapes[f"recon.{i}.{name}"] = shape
    shapes["decode.w"] = (D, cfg.patch_features)
    shapes["decode.b"] = (cfg.patch_features,)
    c_in = d
    for s in range(cfg.upscale_stages):
        shapes[f"up.{s}.w"] = (cfg.recon_channels * r * r, c_in, 3, 3)
        shapes[f"up.{s}.b"] = (cfg.recon_channels * r * r,)
        c_in = cfg.recon_channels
    shapes["out.w"] = (3, c_in, 3, 3)
    shapes["out.b"] = (3,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


_ZERO_INIT = ("wo", "w2")


def init_params(cfg: ModelConfig, rng: Rng | int = 0, zero: bool = False) -> "OrderedDict[str, Tensor]":
    """Fresh weights.

    Linear projections draw from a truncated normal (sigma 0.02), convolution
    kernels from a truncated normal with sigma 1/sqrt(fan_in). Biases,
    residual-branch output projections and the final convolution start at
    zero; layer-norm gains at one. With ``zero=True`` every array except the
    layer-norm gains is zero.
    """
    rng = Rng(rng) if isinstance(rng, int) else rng
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("ln") and leaf.endswith("_g"):
            data = np.ones(shape)
        elif zero or leaf.startswith("b") or leaf.endswith("_b") or leaf in _ZERO_INIT or name.startswith("out."):
            data = np.zeros(shape)
        elif len(shape) > 2:
            fan_in = int(np.prod(shape[1:]))
            data = rng.truncated_normal(shape, sigma=1.0 / math.sqrt(fan_in))
        else:
            data = rng.truncated_normal(shape, sigma=0.02)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_params(cfg: ModelConfig, params: Mapping[str, Tensor]) -> None:
    expected = param_shapes(cfg)
    missing = set(expected) - set(params)
    extra = set(params) - set(expected)
    if missing or extra:
        raise InvalidConfigError(f"weights do not match config: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise InvalidConfigError(f"{name}: shape {params[name].shape} != expected {shape}")


def _blocks(params, prefix: str, count: int) -> list[AttentionBlockWeights]:
    return [AttentionBlockWeights.from_params(params, f"{prefix}.{i}") for i in range(count)]


# ---------------------------------------------------------------- patchify


def patchify(feat: Tensor, patch: tuple[int, int, int]) -> Tensor:
    """features[B, d, N, H, W] -> patches[B, n_N, n_H, n_W, n*h*w*d]."""
    b, d, n_frames, h, w = feat.shape
    pt, ph, pw = patch
    x = T.reshape(feat, (b, d, n_frames // pt, pt, h // ph, ph, w // pw, pw))
    x = T.permute(x, (0, 2, 4, 6, 3, 5, 7, 1))
    return T.reshape(x, (b, n_frames // pt, h // ph, w // pw, pt * ph * pw * d))


def unpatchify(patches: Tensor, patch: tuple[int, int, int], channels: int) -> Tensor:
    """Inverse of :func:`patchify`."""
    b, n_t, n_h, n_w, _ = patches.shape
    pt, ph, pw = patch
    x = T.reshape(patches, (b, n_t, n_h, n_w, pt, ph, pw, channels))
    x = T.permute(x, (0, 7, 1, 4, 2, 5, 3, 6))
    return T.reshape(x, (b, channels, n_t * pt, n_h * ph, n_w * pw))


# ---------------------------------------------------------------- stages


def _check_clip(clip: Tensor, cfg: ModelConfig) -> None:
    if clip.ndim != 5 or clip.shape[1] != 3:
        raise InvalidShapeError(f"clip must be (B, 3, N, H, W), got {clip.shape}")
    _, _, n, h, w = clip.shape
    if n % cfg.patch_t or h % cfg.patch_h or w % cfg.patch_w:
        raise InvalidShapeError(
            f"clip extents (N={n}, H={h}, W={w}) must be divisible by the patch size "
            f"({cfg.patch_t}, {cfg.patch_h}, {cfg.patch_w})")


def embed_input(clip, cfg: ModelConfig, params: Mapping[str, Tensor]) -> TokenGrid:
    """Shallow conv features, per-pixel temporal attention, patch embedding to D channels."""
    clip = T.as_tensor(clip)
    _check_clip(clip, cfg)
    b, c, n, h, w = clip.shape
    d = cfg.pre_channels
    if cfg.pre_extraction == "conv3d":
        feat = conv3d(clip, params["pre.w"], params["pre.b"])
    else:
        frames = T.reshape(T.permute(clip, (0, 2, 1, 3, 4)), (b * n, c, h, w))
        feat = T.reshape(conv2d(frames, params["pre.w"], params["pre.b"]), (b, n, d, h, w))
        feat = T.permute(feat, (0, 2, 1, 3, 4))
    # feat: (B, d, N, H, W); attention over time per pixel
    if cfg.prep_depth:
        grid = run_blocks(TokenGrid(feat), ["temporal"] * cfg.prep_depth, _blocks(params, "prep", cfg.prep_depth),
                          cfg.prep_heads, cfg.rope_base)
        feat = grid.tensor
    patches = patchify(feat, (cfg.patch_t, cfg.patch_h, cfg.patch_w))
    emb = linear(patches, params["embed.w"], params["embed.b"])           # (B, n_N, n_H, n_W, D)
    return TokenGrid(T.permute(emb, (0, 4, 1, 2, 3)))


def dualx_transform(grid: TokenGrid, cfg: ModelConfig, params: Mapping[str, Tensor]) -> TokenGrid:
    if grid.dim != cfg.embed_dim:
        raise InvalidConfigError(f"grid has {grid.dim} channels, config expects {cfg.embed_dim}")
    views = cfg.transformer_views
    return run_blocks(grid, views, _blocks(params, "xformer", len(views)), cfg.heads, cfg.rope_base)


def reconstruct(grid: TokenGrid, clip, cfg: ModelConfig, params: Mapping[str, Tensor]) -> Tensor:
    """Token temporal attention, decode + unpatchify, conv/pixel-shuffle upsampling, bicubic global residual."""
    clip_data = clip.data if isinstance(clip, Tensor) else np.asarray(clip)
    b, _, n, h, w = clip_data.shape
    if cfg.recon_depth:
        grid = run_blocks(grid, ["temporal"] * cfg.recon_depth, _blocks(params, "recon", cfg.recon_depth),
                          cfg.recon_heads, cfg.rope_base)
    tokens = T.permute(grid.tensor, (0, 2, 3, 4, 1))
    feat = unpatchify(linear(tokens, params["decode.w"], params["decode.b"]),
                      (cfg.patch_t, cfg.patch_h, cfg.patch_w), cfg.pre_channels)   # (B, d, N, H, W)
    x = T.reshape(T.permute(feat, (0, 2, 1, 3, 4)), (b * n, cfg.pre_channels, h, w))
    for s in range(cfg.upscale_stages):
        x = gelu(pixel_shuffle(conv2d(x, params[f"up.{s}.w"], params[f"up.{s}.b"]), cfg.shuffle_factor))
    x = conv2d(x, params["out.w"], params["out.b"])
    sh, sw = h * cfg.upscale, w * cfg.upscale
    x = T.permute(T.reshape(x, (b, n, 3, sh, sw)), (0, 2, 1, 3, 4))
    base = bicubic_up(clip_data, cfg.upscale).astype(x.dtype)
    return T.add(x, base)


def forward(clip, cfg: ModelConfig, params: Mapping[str, Tensor]) -> Tensor:
    clip = T.as_tensor(clip)
    grid = embed_input(clip, cfg, params)
    grid = dualx_transform(grid, cfg, params)
    return reconstruct(grid, clip, cfg, params)


class DualXModel:
    """Config plus weights, callable on numpy clips for inference."""

    def __init__(self, cfg: ModelConfig, params: Mapping[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else OrderedDict(params)
        check_params(cfg, self.params)

    @property
    def scale(self) -> int:
        return self.cfg.upscale

    @property
    def patch(self) -> tuple[int, int, int]:
        return (self.cfg.patch_t, self.cfg.patch_h, self.cfg.patch_w)

    def __call__(self, clip: np.ndarray) -> np.ndarray:
        return forward(Tensor(clip), self.cfg, self.params).data

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())
