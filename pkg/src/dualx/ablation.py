"""Toy-scale ablation suites with analytic cost columns.

Every row of a suite is trained with the same budget and seed on the same
synthetic clips and evaluated on a held-out synthetic set.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .data import synthetic_dataset
from .degradation import DegradationConfig, bicubic_down4, bicubic_up, degrade_clip
from .errors import InvalidConfigError
from .metrics import evaluate_clip
from .model import ModelConfig, forward, init_params, preset
from .profile import profile_model
from .tensor import Rng
from .topology import attention_cost
from .train import TrainConfig, run_stage

# Cost columns are evaluated on the full-size design at this shape.
COST_SHAPE = (1, 3, 16, 180, 320)
COST_UNITS = (12, 12)

SUITES = ("attention", "connection", "staging")


@dataclass
class AblationRow:
    key: str
    label: str
    psnr: float = float("nan")
    ssim: float = float("nan")
    params: int = 0
    blocks: int = 0
    score_macs: int = 0
    attention_macs: int = 0
    total_macs: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AblationBudget:
    iterations: int = 150
    pretrain_iterations: int = 150
    lr: float = 1e-3
    train_clips: int = 2
    eval_clips: int = 2
    frames: int = 4
    size: int = 32
    seed: int = 0


@dataclass(frozen=True)
class Variant:
    key: str
    label: str
    model: ModelConfig
    pretrain: bool = False
    stage: int = 1
    crop: int | None = None
    frames: int | None = None


def _cost_grid(cfg: ModelConfig) -> tuple[int, int, int, int]:
    b, _, n, h, w = COST_SHAPE
    return (b, n // cfg.patch_t, h // cfg.patch_h, w // cfg.patch_w)


def attention_variants(base: ModelConfig) -> list[Variant]:
    names = [
        ("spatial", "Only Spatial"),
        ("temporal", "Only Temporal"),
        ("spatial_temporal", "Spatial-Temporal"),
        ("vertical_temporal", "Vertical-Temporal"),
        ("horizontal_temporal", "Horizontal-Temporal"),
        ("dual_serial_vh", "Dual Axial Spatial x Temporal"),
    ]
    return [Variant(k, label, replace(base, arrangement=k)) for k, label in names]


def connection_variants(base: ModelConfig) -> list[Variant]:
    return [
        Variant("a", "Interleaved, 2D conv", replace(base, arrangement="dual_interleaved", pre_extraction="conv2d")),
        Variant("b", "Serial VTAB-HTAB, 3D conv", replace(base, arrangement="dual_serial_vh", pre_extraction="conv3d")),
        Variant("c", "Serial HTAB-VTAB, 2D conv", replace(base, arrangement="dual_serial_hv", pre_extraction="conv2d")),
        Variant("d", "Serial VTAB-HTAB, 2D conv", replace(base, arrangement="dual_serial_vh", pre_extraction="conv2d")),
    ]


def staging_variants(base: ModelConfig, budget: AblationBudget) -> list[Variant]:
    # the full-size 112/64 crops and 16/8 frames are scaled to the toy clip
    big, small = budget.size, budget.size // 2
    full, half = budget.frames, max(1, budget.frames // 2)
    return [
        Variant("a", f"no pretraining, crop {big}, {full} frames", base, False, 2, big, full),
        Variant("b", f"pretraining, crop {small}, {full} frames", base, True, 2, small, full),
        Variant("c", f"pretraining, crop {big}, {half} frames", base, True, 2, big, half),
        Variant("d", f"pretraining, crop {big}, {full} frames", base, True, 2, big, full),
    ]


def suite_variants(suite: str, base: ModelConfig, budget: AblationBudget) -> list[Variant]:
    if suite == "attention":
        return attention_variants(base)
    if suite == "connection":
        return connection_variants(base)
    if suite == "staging":
        return staging_variants(base, budget)
    raise InvalidConfigError(f"unknown ablation suite {suite!r}; expected one of {SUITES}")


def check_equal_units(variants: list[Variant]) -> int:
    counts = {v.key: len(v.model.transformer_views) for v in variants}
    if len(set(counts.values())) != 1:
        raise InvalidConfigError(f"variants differ in transformer block count: {counts}")
    return next(iter(counts.values()))


def cost_columns(cfg: ModelConfig) -> dict:
    """Score MACs and attention-stack MACs of the full-size design with this variant's topology."""
    full = replace(preset("paper"), arrangement=cfg.arrangement, pre_extraction=cfg.pre_extraction)
    att = attention_cost(full.arrangement, _cost_grid(full), full.embed_dim, full.mlp_dim, COST_UNITS)
    total = profile_model(replace(full, vtab_depth=COST_UNITS[0], htab_depth=COST_UNITS[1]), COST_SHAPE)
    return {"score_macs": att.component("scores"), "attention_macs": att.total_macs, "total_macs": total.total_macs}


def evaluate_model(cfg: ModelConfig, params, clips: list[np.ndarray], degradation: DegradationConfig | None,
                   seed: int) -> tuple[float, float, float]:
    """Mean PSNR, SSIM of the model and mean PSNR of the bicubic baseline over ``clips``."""
    ps, ss, base = [], [], []
    for i, hq in enumerate(clips):
        if degradation is None:
            lq = bicubic_down4(hq)
        else:
            lq, _ = degrade_clip(hq, degradation, Rng(seed).spawn(i))
        out = forward(lq[None].astype(np.float32), cfg, params).data[0]
        rep = evaluate_clip(hq, out)
        ps.append(rep.mean_psnr)
        ss.append(rep.mean_ssim)
        base.append(evaluate_clip(hq, bicubic_up(lq, cfg.upscale)).mean_psnr)
    return float(np.mean(ps)), float(np.mean(ss)), float(np.mean(base))


def train_variant(v: Variant, budget: AblationBudget, train_set: list[np.ndarray],
                  degradation: DegradationConfig):
    params = init_params(v.model, budget.seed)
    crop = v.crop or budget.size
    frames = v.frames or budget.frames
    if v.pretrain:
        tc = TrainConfig(stage=1, lr=budget.lr, crop=crop, frames=frames,
                         iterations=budget.pretrain_iterations, seed=budget.seed)
        params = run_stage(train_set, v.model, params, tc).params
    tc = TrainConfig(stage=v.stage, lr=budget.lr, crop=crop, frames=frames,
                     iterations=budget.iterations, seed=budget.seed + 1)
    return run_stage(train_set, v.model, params, tc, degradation).params


def run_suite(suite: str, base: ModelConfig | None = None, budget: AblationBudget = AblationBudget(),
              degradation: DegradationConfig | None = None,
              progress: Callable[[AblationRow], None] | None = None) -> list[AblationRow]:
    base = base or preset("desk")
    degradation = degradation or DegradationConfig(seed=budget.seed)
    variants = suite_variants(suite, base, budget)
    blocks = check_equal_units(variants)
    train_set = synthetic_dataset(budget.seed, budget.train_clips, budget.frames, budget.size, budget.size)
    eval_set = synthetic_dataset(budget.seed + 1000, budget.eval_clips, budget.frames, budget.size, budget.size)
    rows = []
    for v in variants:
        params = train_variant(v, budget, train_set, degradation)
        eval_deg = degradation if v.stage == 2 else None
        p, s, b = evaluate_model(v.model, params, eval_set, eval_deg, budget.seed + 2000)
        row = AblationRow(v.key, v.label, p, s, sum(x.size for x in params.values()), blocks,
                          extra={"bicubic_psnr": b, "arrangement": v.model.arrangement,
                                 "pre_extraction": v.model.pre_extraction, "pretrain": v.pretrain,
                                 "crop": v.crop or budget.size, "frames": v.frames or budget.frames},
                          **cost_columns(v.model))
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def format_table(rows: list[AblationRow]) -> str:
    head = f"{'row':<22}{'label':<36}{'PSNR':>8}{'SSIM':>8}{'score GMACs':>14}{'attn GMACs':>13}{'total GMACs':>13}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.key:<22}{r.label:<36}{r.psnr:>8.2f}{r.ssim:>8.4f}{r.score_macs / 1e9:>14.1f}"
                     f"{r.attention_macs / 1e9:>13.1f}{r.total_macs / 1e9:>13.1f}")
    return "\n".join(lines)


def pretrain_comparison(model: ModelConfig, clip: np.ndarray, pretrain_iterations: int, iterations: int,
                        lr: float = 1e-3, seed: int = 0, degradation: DegradationConfig | None = None) -> dict:
    """PSNR on ``clip`` after stage 2 with and without stage-1 pretraining, equal stage-2 budget."""
    degradation = degradation or DegradationConfig(seed=seed)
    _, n, h, w = clip.shape
    out = {}
    for key, pre in (("scratch", 0), ("pretrained", pretrain_iterations)):
        params = init_params(model, seed)
        if pre:
            tc1 = TrainConfig(stage=1, lr=lr, crop=max(h, w), frames=n, iterations=pre, seed=seed)
            params = run_stage([clip], model, params, tc1).params
        tc2 = TrainConfig(stage=2, lr=lr, crop=max(h, w), frames=n, iterations=iterations, seed=seed + 1)
        params = run_stage([clip], model, params, tc2, degradation).params
        out[key], _, out["bicubic"] = evaluate_model(model, params, [clip], degradation, seed + 2000)
    return out
