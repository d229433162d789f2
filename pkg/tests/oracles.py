"""Independent reference implementations used by the tests.

These are deliberately naive (explicit loops, scalar formulas, scipy
routines) and share no code with the package.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.fft import dctn, idctn


def conv2d_loops(x, w, b):
    """Zero-padded 'same' cross-correlation, x (B, Ci, H, W), w (Co, Ci, k, k)."""
    bsz, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((bsz, co, h, wd))
    for n in range(bsz):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    out[n, o, i, j] = np.sum(xp[n, :, i:i + k, j:j + k] * w[o]) + b[o]
    return out


def conv3d_loops(x, w, b):
    bsz, ci, t, h, wd = x.shape
    co, _, k, _, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    out = np.zeros((bsz, co, t, h, wd))
    for n in range(bsz):
        for o in range(co):
            for a in range(t):
                for i in range(h):
                    for j in range(wd):
                        out[n, o, a, i, j] = np.sum(xp[n, :, a:a + k, i:i + k, j:j + k] * w[o]) + b[o]
    return out


def pixel_shuffle_loops(x, r):
    bsz, c, h, w = x.shape
    co = c // (r * r)
    out = np.zeros((bsz, co, h * r, w * r))
    for n in range(bsz):
        for o in range(co):
            for i in range(h * r):
                for j in range(w * r):
                    out[n, o, i, j] = x[n, o * r * r + (i % r) * r + (j % r), i // r, j // r]
    return out


def gelu_scalar(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def layer_norm_ref(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def rope_complex(x, pos, base=10000.0):
    """Rotary encoding of x (L, d) at scalar positions via complex multiplication."""
    d = x.shape[-1]
    freqs = base ** (-np.arange(0, d, 2) / d)
    z = x[..., 0::2] + 1j * x[..., 1::2]
    z = z * np.exp(1j * np.outer(pos, freqs))
    out = np.empty_like(x)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def axial_rope_ref(x, pos2, base=10000.0):
    """First half of channels rotated by pos2[:, 0], second half by pos2[:, 1]."""
    half = x.shape[-1] // 2
    return np.concatenate([rope_complex(x[..., :half], pos2[:, 0], base),
                           rope_complex(x[..., half:], pos2[:, 1], base)], axis=-1)


def attention_block_ref(x, p, heads, pos2=None, base=10000.0):
    """Pre-norm MHA + MLP transformer block, one sequence at a time, per-head loops."""
    out = np.empty_like(x)
    for s in range(x.shape[0]):
        seq = x[s]
        L, D = seq.shape
        dh = D // heads
        h = layer_norm_ref(seq, p["ln1_g"], p["ln1_b"])
        q, k, v = h @ p["wq"] + p["bq"], h @ p["wk"] + p["bk"], h @ p["wv"] + p["bv"]
        ctx = np.zeros((L, D))
        for hd in range(heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            qh, kh = q[:, sl], k[:, sl]
            if pos2 is not None:
                qh, kh = axial_rope_ref(qh, pos2, base), axial_rope_ref(kh, pos2, base)
            sc = qh @ kh.T / math.sqrt(dh)
            sc = np.exp(sc - sc.max(1, keepdims=True))
            sc /= sc.sum(1, keepdims=True)
            ctx[:, sl] = sc @ v[:, sl]
        y = seq + ctx @ p["wo"] + p["bo"]
        h2 = layer_norm_ref(y, p["ln2_g"], p["ln2_b"])
        act = np.vectorize(gelu_scalar)(h2 @ p["w1"] + p["b1"])
        out[s] = y + act @ p["w2"] + p["b2"]
    return out


def cubic_scalar(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def bicubic_up_1d(signal, factor):
    """Integer-factor cubic upsampling with half-pixel centres and symmetric borders."""
    n = len(signal)
    out = np.zeros(n * factor)
    for i in range(n * factor):
        c = (i + 0.5) / factor - 0.5
        base = math.floor(c)
        acc = wsum = 0.0
        for j in range(base - 1, base + 3):
            wgt = cubic_scalar(c - j)
            jj = j
            while jj < 0 or jj >= n:
                jj = -jj - 1 if jj < 0 else 2 * n - jj - 1
            acc += wgt * signal[jj]
            wsum += wgt
        out[i] = acc / wsum
    return out


def jpeg_ref(frame, table):
    """8x8 blockwise DCT quantization via scipy, on (H, W) with H, W multiples of 8."""
    x = frame * 255.0 - 128.0
    out = np.empty_like(x)
    for i in range(0, x.shape[0], 8):
        for j in range(0, x.shape[1], 8):
            c = dctn(x[i:i + 8, j:j + 8], norm="ortho")
            c = np.round(c / table) * table
            out[i:i + 8, j:j + 8] = idctn(c, norm="ortho")
    return (out + 128.0) / 255.0


def mse_two_pass(x, y):
    """Luma MSE by explicit per-pixel accumulation."""
    coef = (0.299, 0.587, 0.114)
    total = 0.0
    count = 0
    for i in range(x.shape[1]):
        for j in range(x.shape[2]):
            lx = sum(c * x[k, i, j] for k, c in enumerate(coef))
            ly = sum(c * y[k, i, j] for k, c in enumerate(coef))
            total += (lx - ly) ** 2
            count += 1
    return total / count


def block_params(dim, mlp):
    return 4 * dim * dim + 4 * dim + 2 * dim + 2 * dim + dim * mlp + mlp + mlp * dim + dim


def block_macs(batch, length, dim, mlp):
    tokens = batch * length
    return 4 * tokens * dim * dim + 2 * batch * length * length * dim + 2 * tokens * dim * mlp


def model_cost_hand(cfg, shape):
    """Hand summation of parameters and MACs, written from the counting convention alone."""
    b, _, n, h, w = shape
    d, D = cfg.pre_channels, cfg.embed_dim
    pf = d * cfg.patch_t * cfg.patch_h * cfg.patch_w
    nn_, nh, nw = n // cfg.patch_t, h // cfg.patch_h, w // cfg.patch_w
    tokens = b * nn_ * nh * nw
    k = 27 if cfg.pre_extraction == "conv3d" else 9
    params = d * 3 * k + d
    macs = b * n * h * w * 3 * d * k
    for _ in range(cfg.prep_depth):
        params += block_params(d, cfg.prep_mlp)
        macs += block_macs(b * h * w, n, d, cfg.prep_mlp)
    params += pf * D + D
    macs += tokens * pf * D
    geo = {
        "vertical_temporal": (b * nw, nh * nn_),
        "horizontal_temporal": (b * nh, nw * nn_),
        "spatial": (b * nn_, nh * nw),
        "temporal": (b * nh * nw, nn_),
    }
    for view in cfg.transformer_views:
        params += block_params(D, cfg.mlp_dim)
        macs += block_macs(*geo[view], D, cfg.mlp_dim)
    for _ in range(cfg.recon_depth):
        params += block_params(D, cfg.recon_mlp)
        macs += block_macs(b * nh * nw, nn_, D, cfg.recon_mlp)
    params += D * pf + pf
    macs += tokens * D * pf
    r, c_in, sh, sw = cfg.shuffle_factor, d, h, w
    for _ in range(cfg.upscale_stages):
        c_out = cfg.recon_channels * r * r
        params += c_out * c_in * 9 + c_out
        macs += b * n * sh * sw * c_in * c_out * 9
        c_in, sh, sw = cfg.recon_channels, sh * r, sw * r
    params += 3 * c_in * 9 + 3
    macs += b * n * sh * sw * c_in * 3 * 9
    return params, macs


def cubic_resize_1d(signal, n_out, a=-0.5):
    """Direct kernel sum; the kernel widens by n_in/n_out when shrinking."""
    n = len(signal)
    s = n_out / n
    stretch = 1.0 / s if s < 1 else 1.0
    out = np.zeros(n_out)
    for i in range(n_out):
        c = (i + 0.5) / s - 0.5
        acc = wsum = 0.0
        for j in range(math.floor(c - 2 * stretch) - 1, math.ceil(c + 2 * stretch) + 2):
            wgt = cubic_scalar((c - j) / stretch, a)
            jj = j
            while jj < 0 or jj >= n:
                jj = -jj - 1 if jj < 0 else 2 * n - jj - 1
            acc += wgt * signal[jj]
            wsum += wgt
        out[i] = acc / wsum
    return out


def gaussian_1d_ref(sigma, size=21):
    r = size // 2
    vals = [math.exp(-(x * x) / (2 * sigma * sigma)) for x in range(-r, r + 1)]
    total = sum(vals)
    return np.array([v / total for v in vals])
