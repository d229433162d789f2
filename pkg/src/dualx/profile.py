"""Closed-form parameter and MAC counts of the full model.

Counting convention: one MAC is one multiply-accumulate. Counted are linear
projections, attention score (Q K^T) and value (A V) products, MLP layers and
convolutions (H W C_in C_out k^d per frame). Not counted: biases, layer
norms, softmax, GELU, rotary encoding, pixel shuffle and the bicubic residual.
"""
from __future__ import annotations

from typing import Sequence

from .model import ModelConfig, parameter_count
from .topology import CostReport, block_cost

REFERENCE_PARAMS = 127.95e6
REFERENCE_MACS = 99.41e9
REFERENCE_INPUT = (1, 3, 16, 64, 64)

CONVENTION = (
    "1 MAC = one multiply-accumulate; counted: linear projections, attention scores (QK^T) and "
    "values (AV), MLPs, convolutions (H*W*Cin*Cout*k^d per frame); not counted: biases, norms, "
    "softmax, GELU, rotary encoding, pixel shuffle, bicubic residual"
)


def _conv(label: str, frames: int, h: int, w: int, c_in: int, c_out: int, taps: int) -> CostReport:
    return CostReport(label, params=c_out * c_in * taps + c_out, macs={"conv": frames * h * w * c_in * c_out * taps})


def _linear(label: str, tokens: int, n_in: int, n_out: int) -> CostReport:
    return CostReport(label, params=n_in * n_out + n_out, macs={"linear": tokens * n_in * n_out})


def profile_model(cfg: ModelConfig, input_shape: Sequence[int] = REFERENCE_INPUT) -> CostReport:
    """Cost tree of one forward pass on a (B, 3, N, H, W) input."""
    b, _, n, h, w = input_shape
    d, D = cfg.pre_channels, cfg.embed_dim
    pf = cfg.patch_features
    grid = (b, n // cfg.patch_t, h // cfg.patch_h, w // cfg.patch_w)
    tokens = grid[0] * grid[1] * grid[2] * grid[3]

    taps = 27 if cfg.pre_extraction == "conv3d" else 9
    embed = CostReport("embed", parts=[
        _conv("pre_conv", b * n, h, w, 3, d, taps),
        *[block_cost("temporal", (b, n, h, w), d, cfg.prep_mlp, f"prep[{i}]") for i in range(cfg.prep_depth)],
        _linear("patch_embed", tokens, pf, D),
    ])
    transformer = CostReport("transformer", parts=[
        block_cost(v, grid, D, cfg.mlp_dim, f"{v}[{i}]") for i, v in enumerate(cfg.transformer_views)
    ])
    r = cfg.shuffle_factor
    ups, c_in, sh, sw = [], d, h, w
    for s in range(cfg.upscale_stages):
        ups.append(_conv(f"up[{s}]", b * n, sh, sw, c_in, cfg.recon_channels * r * r, 9))
        c_in, sh, sw = cfg.recon_channels, sh * r, sw * r
    recon = CostReport("reconstruct", parts=[
        *[block_cost("temporal", grid, D, cfg.recon_mlp, f"recon[{i}]") for i in range(cfg.recon_depth)],
        _linear("decode", tokens, D, pf),
        *ups,
        _conv("out_conv", b * n, sh, sw, c_in, 3, 9),
    ])
    report = CostReport("dualx", parts=[embed, transformer, recon])
    assert report.total_params == parameter_count(cfg)
    return report


def delta_percent(value: float, reference: float) -> float:
    return 100.0 * (value - reference) / reference


def format_report(report: CostReport, depth: int = 2, reference: bool = False) -> str:
    lines = [f"# {CONVENTION}", f"{'component':<28}{'params':>16}{'MACs':>20}"]

    def walk(node: CostReport, level: int):
        lines.append(f"{'  ' * level + node.label:<28}{node.total_params:>16,}{node.total_macs:>20,}")
        if level < depth:
            for p in node.parts:
                walk(p, level + 1)

    walk(report, 0)
    comps = report.components()
    lines.append("by kind: " + ", ".join(f"{k}={v:,}" for k, v in sorted(comps.items())))
    if reference:
        p, m = report.total_params, report.total_macs
        lines.append(f"reference params {REFERENCE_PARAMS / 1e6:.2f} M | computed {p / 1e6:.2f} M | "
                     f"delta {delta_percent(p, REFERENCE_PARAMS):+.2f}%")
        lines.append(f"reference MACs   {REFERENCE_MACS / 1e9:.2f} G | computed {m / 1e9:.2f} G | "
                     f"delta {delta_percent(m, REFERENCE_MACS):+.2f}%")
    return "\n".join(lines)


def profile_record(cfg: ModelConfig, input_shape: Sequence[int] = REFERENCE_INPUT) -> dict:
    report = profile_model(cfg, input_shape)
    return {
        "input_shape": list(input_shape),
        "convention": CONVENTION,
        "params": report.total_params,
        "macs": report.total_macs,
        "reference_params": REFERENCE_PARAMS,
        "reference_macs": REFERENCE_MACS,
        "params_delta_percent": delta_percent(report.total_params, REFERENCE_PARAMS),
        "macs_delta_percent": delta_percent(report.total_macs, REFERENCE_MACS),
        "tree": report.to_dict(),
    }
