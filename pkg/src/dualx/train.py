"""Staged toy training: bicubic pretraining, degradation finetuning, AdamW."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .degradation import DegradationConfig, bicubic_down4, degrade_clip
from .errors import InvalidConfigError, InvalidShapeError, NonFiniteError, TrainingDivergedError
from .metrics import charbonnier
from .model import ModelConfig, forward
from .tensor import Rng, Tape, Tensor


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    batch: int = 1
    crop: int | None = None          # HQ crop; None picks the stage default
    frames: int = 16
    iterations: int = 500
    lambda_pix: float = 1e-2
    lambda_per: float = 1.0
    lambda_adv: float = 5e-3
    grad_clip: float = 1.0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise InvalidConfigError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("lambda_pix", "lambda_per", "lambda_adv", "weight_decay", "grad_clip"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise InvalidConfigError("lr must be positive and betas in [0, 1)")
        if self.frames < 1 or self.batch < 1 or self.iterations < 0:
            raise InvalidConfigError("frames and batch must be >= 1, iterations >= 0")
        if self.crop is not None and self.crop < 1:
            raise InvalidConfigError("crop must be positive")

    @property
    def crop_size(self) -> int:
        return self.crop if self.crop is not None else (64 if self.stage == 1 else 112)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(weights: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8,
               weight_decay: float = 0.01) -> tuple[dict, AdamState]:
    """One AdamW update with bias correction and decoupled weight decay.

    Returns new weight arrays; inputs are not modified.
    """
    if set(weights) != set(grads):
        raise InvalidShapeError("weights and gradients have different names")
    step = state.step + 1
    c1, c2 = 1.0 - beta1 ** step, 1.0 - beta2 ** step
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        w = np.asarray(w)
        g = np.asarray(grads[name])
        if g.shape != w.shape:
            raise InvalidShapeError(f"{name}: gradient shape {g.shape} != weight shape {w.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new_w[name] = (w - lr * weight_decay * w - lr * update).astype(w.dtype)
        new_m[name], new_v[name] = m, v
    return new_w, AdamState(step, new_m, new_v)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / (norm + 1e-12)
    return {k: g * scale for k, g in grads.items()}, norm


# ---------------------------------------------------------------- loss

LossTerm = Callable[[Tensor, Tensor], Tensor]


def combined_loss(pred, target, terms: Sequence[tuple[LossTerm, float]]) -> Tensor:
    """Weighted sum of loss terms, each given as (fn(pred, target), weight)."""
    total = None
    for fn, lam in terms:
        if lam < 0:
            raise InvalidConfigError(f"loss weight must be >= 0, got {lam}")
        term = T.mul(fn(pred, target), float(lam))
        total = term if total is None else T.add(total, term)
    if total is None:
        return Tensor(0.0)
    return total


def pixel_terms(cfg: TrainConfig) -> list[tuple[LossTerm, float]]:
    """Stages 1 and 2 optimize the pixel term alone at unit weight.

    The lambda weights only matter when further terms join the sum, so they
    are carried in the config and left out here.
    """
    return [(charbonnier, 1.0)]


# ---------------------------------------------------------------- data


def sample_pair(dataset: Sequence[np.ndarray], cfg: TrainConfig, model_cfg: ModelConfig, rng: Rng,
                degradation: DegradationConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Random aligned (LQ, HQ) crop pair of shapes (3, F, c/s, c/s) and (3, F, c, c)."""
    s = model_cfg.upscale
    unit = s * model_cfg.patch_h * model_cfg.patch_w // math.gcd(model_cfg.patch_h, model_cfg.patch_w)
    clip = dataset[int(rng.integers(0, len(dataset)))]
    _, n, h, w = clip.shape
    frames = min(cfg.frames, n)
    frames -= frames % model_cfg.patch_t
    ch = min(cfg.crop_size, h) // unit * unit
    cw = min(cfg.crop_size, w) // unit * unit
    if ch == 0 or cw == 0 or frames == 0:
        raise InvalidShapeError(f"clip {clip.shape} is too small for crops of unit {unit}")
    t0 = int(rng.integers(0, n - frames + 1))
    y0 = int(rng.integers(0, (h - ch) // s + 1)) * s
    x0 = int(rng.integers(0, (w - cw) // s + 1)) * s
    hq = clip[:, t0:t0 + frames, y0:y0 + ch, x0:x0 + cw]
    if cfg.stage == 1:
        lq = bicubic_down4(hq)
    else:
        lq, _ = degrade_clip(hq, degradation or DegradationConfig(), rng.spawn(1))
    return lq, hq


# ---------------------------------------------------------------- loop


@dataclass
class TrainResult:
    params: "OrderedDict[str, Tensor]"
    trace: list
    state: AdamState


def run_stage(dataset: Sequence[np.ndarray], model_cfg: ModelConfig, params: Mapping[str, Tensor],
              cfg: TrainConfig, degradation: DegradationConfig | None = None,
              checkpoint_dir: str | Path | None = None, on_step: Callable[[dict], None] | None = None,
              state: AdamState | None = None) -> TrainResult:
    """Minimize Charbonnier(forward(lq), hq) over random crops of ``dataset``.

    Every iteration draws its batch from a child stream of ``cfg.seed`` keyed
    by the iteration index, so a run is replayable from its config alone.
    """
    if len(dataset) == 0:
        raise InvalidConfigError("training dataset is empty")
    if model_cfg.upscale != 4:
        raise InvalidConfigError("training pairs are synthesized at x4")
    names = list(params)
    weights = {k: np.array(params[k].data) for k in names}
    state = state or AdamState()
    trace: list[dict] = []
    root = Rng(cfg.seed)
    terms = pixel_terms(cfg)
    for it in range(cfg.iterations):
        rng = root.spawn(it)
        pairs = [sample_pair(dataset, cfg, model_cfg, rng.spawn(b), degradation) for b in range(cfg.batch)]
        lq = np.stack([p[0] for p in pairs]).astype(T.default_dtype())
        hq = np.stack([p[1] for p in pairs]).astype(T.default_dtype())
        leaves = OrderedDict((k, Tensor(weights[k], requires_grad=True)) for k in names)
        try:
            with Tape() as tape:
                loss = combined_loss(forward(lq, model_cfg, leaves), Tensor(hq), terms)
            tape.backward(loss, list(leaves.values()))
        except NonFiniteError as exc:
            raise TrainingDivergedError(f"non-finite value at iteration {it}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"loss is {value} at iteration {it}")
        grads, gnorm = clip_grad_norm({k: leaves[k].grad for k in names}, cfg.grad_clip)
        weights, state = adamw_step(weights, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                                    cfg.weight_decay)
        record = {"iteration": it, "stage": cfg.stage, "loss": value, "grad_norm": gnorm, "lr": cfg.lr}
        trace.append(record)
        if on_step is not None:
            on_step(record)
        if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            from .io import save_checkpoint

            save_checkpoint(Path(checkpoint_dir) / f"stage{cfg.stage}_{it + 1:08d}.ckpt", model_cfg,
                            _as_params(weights, names), {"iteration": it + 1, "train": cfg.to_dict()})
    return TrainResult(_as_params(weights, names), trace, state)


def _as_params(weights: Mapping[str, np.ndarray], names: Sequence[str]) -> "OrderedDict[str, Tensor]":
    return OrderedDict((k, Tensor(weights[k], requires_grad=True)) for k in names)


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
