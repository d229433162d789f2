"""Neural building blocks: convolution, normalization, rotary attention, pixel shuffle."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import erf

from . import tensor as T
from .errors import InvalidConfigError, InvalidShapeError
from .tensor import Tensor, apply_op, as_tensor

LN_EPS = 1e-5


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as (in, out)."""
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf
    pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
    return apply_op(out.astype(x.dtype), (x,), lambda g: ((g * (cdf + x.data * pdf)).astype(x.dtype),), "gelu")


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalize over the trailing (channel) axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise InvalidShapeError(f"layer_norm parameters must have shape ({x.shape[-1]},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def grad(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return apply_op(out, (x, gamma, beta), grad, "layer_norm")


# ---------------------------------------------------------------- convolution


def _conv_same(x: Tensor, w: Tensor, b: Tensor | None, nd: int) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise InvalidShapeError(f"conv{nd}d expects {nd + 2}-d input and kernel, got {x.shape} and {w.shape}")
    c_out, c_in = w.shape[:2]
    if x.shape[1] != c_in:
        raise InvalidShapeError(f"conv{nd}d channel mismatch: input has {x.shape[1]}, kernel expects {c_in}")
    ks = w.shape[2:]
    if any(k % 2 == 0 for k in ks):
        raise InvalidShapeError("kernel extents must be odd for same padding")
    pads = [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in ks]
    xp = np.pad(x.data, pads)
    spatial = x.shape[2:]
    offsets = list(itertools.product(*[range(k) for k in ks]))

    def window(off):
        return (slice(None), slice(None)) + tuple(slice(o, o + n) for o, n in zip(off, spatial))

    # im2col: (C_in, K, B, *spatial)
    cols = np.stack([xp[window(off)] for off in offsets], axis=0)
    cols = np.moveaxis(cols, 2, 0)  # (C_in, K, B, *spatial)
    wmat = w.data.reshape(c_out, c_in * len(offsets))
    out = wmat @ cols.reshape(c_in * len(offsets), -1)
    out = out.reshape((c_out, x.shape[0]) + spatial)
    out = np.moveaxis(out, 0, 1)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape((1, c_out) + (1,) * nd)
    out = np.ascontiguousarray(out)
    inputs = (x, w) if b is None else (x, w, b)

    def grad(g):
        gm = np.moveaxis(g, 1, 0).reshape(c_out, -1)
        gw = (gm @ cols.reshape(c_in * len(offsets), -1).T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape((c_in, len(offsets), x.shape[0]) + spatial)
            gxp = np.zeros_like(xp)
            for k, off in enumerate(offsets):
                gxp[window(off)] += np.moveaxis(gcols[:, k], 0, 1)
            gx = gxp[(slice(None), slice(None)) + tuple(slice(p, p + n) for (p, _), n in zip(pads[2:], spatial))]
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, g.ndim))) if b.requires_grad else None
        return gx, gw, gb

    return apply_op(out, inputs, grad, f"conv{nd}d")


def conv2d(x, kernel, bias=None) -> Tensor:
    """Same-padded (zero border) convolution of x[B, C, H, W] with kernel[C_out, C, k, k]."""
    return _conv_same(x, kernel, bias, 2)


def conv3d(x, kernel, bias=None) -> Tensor:
    """Same-padded convolution of x[B, C, N, H, W] with kernel[C_out, C, k, k, k]."""
    return _conv_same(x, kernel, bias, 3)


def pixel_shuffle(x, r: int) -> Tensor:
    """x[B, C*r*r, H, W] -> [B, C, r*H, r*W]; channel c*r*r + i*r + j lands at (r*h + i, r*w + j)."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    if c % (r * r):
        raise InvalidShapeError(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    y = T.reshape(x, (b, c // (r * r), r, r, h, w))
    y = T.permute(y, (0, 1, 4, 2, 5, 3))
    return T.reshape(y, (b, c // (r * r), h * r, w * r))


def pixel_unshuffle(x, r: int) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % r or w % r:
        raise InvalidShapeError(f"pixel_unshuffle: extents {h}x{w} not divisible by {r}")
    y = T.reshape(x, (b, c, h // r, r, w // r, r))
    y = T.permute(y, (0, 1, 3, 5, 2, 4))
    return T.reshape(y, (b, c * r * r, h // r, w // r))


# ---------------------------------------------------------------- rotary encoding


@dataclass(frozen=True)
class RopeParams:
    dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise InvalidConfigError(f"rotary dimension must be even and positive, got {self.dim}")
        if self.base <= 0:
            raise InvalidConfigError("rotary base must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        d = np.arange(self.dim // 2, dtype=np.float64)
        return self.base ** (-2.0 * d / self.dim)


def rotate_pairs(x, angles: np.ndarray) -> Tensor:
    """Rotate channel pairs (2d, 2d+1) of x[..., L, 2P] by angles[L, P]."""
    x = as_tensor(x)
    if x.shape[-1] != 2 * angles.shape[-1] or x.shape[-2] != angles.shape[0]:
        raise InvalidShapeError(f"angle table {angles.shape} does not fit tokens {x.shape}")
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)

    def rot(v, s):
        v = v.reshape(v.shape[:-1] + (-1, 2))
        a, b = v[..., 0], v[..., 1]
        return np.stack([a * cos - b * s, a * s + b * cos], axis=-1).reshape(v.shape[:-2] + (-1,))

    out = rot(x.data, sin)
    return apply_op(out, (x,), lambda g: (rot(g, -sin),), "rope")


def rope_apply(tokens, positions, params: RopeParams) -> Tensor:
    """Rotate each channel pair (2d, 2d+1) of the token at index u by u * theta_d."""
    tokens = as_tensor(tokens)
    if tokens.shape[-1] % 2:
        raise InvalidConfigError(f"rotary encoding needs an even head dimension, got {tokens.shape[-1]}")
    if tokens.shape[-1] != params.dim:
        raise InvalidConfigError(f"head dimension {tokens.shape[-1]} != rotary dimension {params.dim}")
    pos = np.asarray(positions, dtype=np.float64)
    return rotate_pairs(tokens, np.outer(pos, params.frequencies))


def axial_angles(positions: np.ndarray, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Angle table for 2-axis positions[L, 2]: first half of the head follows axis 0, second half axis 1."""
    if head_dim % 4:
        raise InvalidConfigError(f"axial rotary encoding needs head_dim divisible by 4, got {head_dim}")
    pos = np.asarray(positions, dtype=np.float64)
    freqs = RopeParams(head_dim // 2, base).frequencies
    return np.concatenate([np.outer(pos[:, 0], freqs), np.outer(pos[:, 1], freqs)], axis=1)


def attention_scores(q_rot, k_rot) -> Tensor:
    """Raw scores A[u, v] = <q_u, k_v> of already-rotated vectors (no scaling)."""
    return T.matmul(q_rot, T.transpose(k_rot))


# ---------------------------------------------------------------- transformer block


@dataclass
class AttentionBlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str) -> "AttentionBlockWeights":
        return cls(**{name: params[f"{prefix}.{name}"] for name in cls.__dataclass_fields__})

    @property
    def embed_dim(self) -> int:
        return self.wq.shape[0]


def block_param_shapes(dim: int, mlp_dim: int) -> dict[str, tuple]:
    return {
        "ln1_g": (dim,), "ln1_b": (dim,),
        "wq": (dim, dim), "bq": (dim,),
        "wk": (dim, dim), "bk": (dim,),
        "wv": (dim, dim), "bv": (dim,),
        "wo": (dim, dim), "bo": (dim,),
        "ln2_g": (dim,), "ln2_b": (dim,),
        "w1": (dim, mlp_dim), "b1": (mlp_dim,),
        "w2": (mlp_dim, dim), "b2": (dim,),
    }


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, l, d = x.shape
    return T.permute(T.reshape(x, (b, l, heads, d // heads)), (0, 2, 1, 3))


def multi_head_attention(x, w: AttentionBlockWeights, heads: int, angles: np.ndarray | None = None) -> Tensor:
    """Pre-norm residual self-attention over x[Batch, L, D].

    ``angles`` is a rotary table [L, head_dim/2] applied to queries and keys.
    Scores are scaled by 1/sqrt(head_dim) before the softmax.
    """
    x = as_tensor(x)
    bsz, length, dim = x.shape
    if dim % heads:
        raise InvalidConfigError(f"embedding dim {dim} is not divisible by {heads} heads")
    head_dim = dim // heads
    h = layer_norm(x, w.ln1_g, w.ln1_b)
    q = _split_heads(linear(h, w.wq, w.bq), heads)
    k = _split_heads(linear(h, w.wk, w.bk), heads)
    v = _split_heads(linear(h, w.wv, w.bv), heads)
    if angles is not None:
        q = rotate_pairs(q, angles)
        k = rotate_pairs(k, angles)
    scores = T.mul(attention_scores(q, k), 1.0 / math.sqrt(head_dim))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    ctx = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (bsz, length, dim))
    return T.add(x, linear(ctx, w.wo, w.bo))


def mlp_block(x, w: AttentionBlockWeights) -> Tensor:
    """x + W2 GELU(W1 LN(x) + b1) + b2."""
    h = layer_norm(x, w.ln2_g, w.ln2_b)
    return T.add(x, linear(gelu(linear(h, w.w1, w.b1)), w.w2, w.b2))


def transformer_block(x, w: AttentionBlockWeights, heads: int, angles: np.ndarray | None = None) -> Tensor:
    return mlp_block(multi_head_attention(x, w, heads, angles), w)
