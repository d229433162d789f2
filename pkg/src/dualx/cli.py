"""Command-line entry point: ``dualx <subcommand> [--config FILE] [--seed N] [--out PATH] [--override k=v ...]``."""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import tensor as T
from .ablation import SUITES, AblationBudget, format_table, run_suite
from .config import RunConfig, load_config
from .data import synthetic_dataset
from .degradation import degrade_clip
from .errors import DualXError, InvalidConfigError, InvalidShapeError
from .io import (clip_hash, file_hash, load_checkpoint, read_clip, save_checkpoint, write_clip, write_record)
from .metrics import evaluate_clip, motion_amplitude
from .model import forward, init_params
from .profile import CONVENTION, REFERENCE_INPUT, format_report, profile_model, profile_record
from .tiling import pad_to_patch, plan_tiles, tiled_forward
from .train import run_stage


def _provenance(cfg: RunConfig, command: str, **extra) -> dict:
    return {"tool": "dualx", "version": __version__, "command": command, "config_hash": cfg.hash,
            "config": cfg.to_dict(), **extra}


def _out_dir(args, default: str) -> Path:
    return Path(args.out or default)


# ---------------------------------------------------------------- subcommands


def cmd_degrade(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "lq")
    if args.input:
        hq = read_clip(args.input)
        source = {"input": str(args.input), "input_hash": clip_hash(hq)}
    else:
        d = cfg.data
        hq = synthetic_dataset(cfg.seed, 1, d.frames, d.height, d.width, d.max_motion)[0]
        source = {"input": "synthetic", "input_hash": clip_hash(hq)}
        if args.hq_out:
            write_clip(args.hq_out, hq, args.format)
            write_record(Path(args.hq_out) / "provenance.json", _provenance(cfg, "degrade", role="hq", **source))
    deg = replace(cfg.degradation, seed=cfg.seed)
    lq, rec = degrade_clip(hq, deg)
    write_clip(out, lq, args.format)
    write_record(out / "provenance.json",
                 _provenance(cfg, "degrade", degradation=rec.to_dict(), output_hash=clip_hash(lq), **source))
    print(f"degraded {hq.shape[1]} frames {hq.shape[2]}x{hq.shape[3]} -> {lq.shape[2]}x{lq.shape[3]} into {out}")
    return 0


def _load_dataset(paths: Sequence[str], cfg: RunConfig) -> tuple[list[np.ndarray], list[str]]:
    if paths:
        clips = [read_clip(p) for p in paths]
        return clips, [clip_hash(c) for c in clips]
    d = cfg.data
    clips = synthetic_dataset(cfg.seed, d.clips, d.frames, d.height, d.width, d.max_motion)
    return clips, [clip_hash(c) for c in clips]


def _params_for(cfg: RunConfig, ckpt: str | None):
    if ckpt:
        mcfg, params, _ = load_checkpoint(ckpt)
        if mcfg != cfg.model:
            raise InvalidConfigError(f"checkpoint {ckpt} was written for a different model config")
        return params
    return init_params(cfg.model, cfg.seed)


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    dataset, hashes = _load_dataset(args.data, cfg)
    params = _params_for(cfg, args.init)
    deg = replace(cfg.degradation, seed=cfg.seed)
    stages = []
    if cfg.pretrain_iterations and cfg.train.stage == 2:
        stages.append(replace(cfg.train, stage=1, iterations=cfg.pretrain_iterations))
    stages.append(cfg.train)
    trace_path = out / "trace.jsonl"
    with trace_path.open("w") as trace:
        for tc in stages:
            def log(rec, _f=trace):
                _f.write(json.dumps({**rec, "config_hash": cfg.hash}) + "\n")
            result = run_stage(dataset, cfg.model, params, tc, deg, checkpoint_dir=out, on_step=log)
            params = result.params
            if result.trace:
                print(f"stage {tc.stage}: {len(result.trace)} iterations, loss "
                      f"{result.trace[0]['loss']:.6f} -> {result.trace[-1]['loss']:.6f}")
    ckpt = save_checkpoint(out / "final.ckpt", cfg.model, params, {"config_hash": cfg.hash, "dataset": hashes})
    write_record(out / "provenance.json",
                 _provenance(cfg, "train", dataset=hashes, checkpoint=ckpt.name, checkpoint_hash=file_hash(ckpt),
                             trace_hash=file_hash(trace_path)))
    print(f"wrote {ckpt}")
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    if not args.input:
        raise InvalidConfigError("infer needs --in <clip dir>")
    out = _out_dir(args, "sr")
    params = _params_for(cfg, args.ckpt)
    lq = read_clip(args.input)
    m = cfg.model
    patch = (m.patch_t, m.patch_h, m.patch_w)
    t = cfg.tiling

    def model_fn(clip):
        return forward(clip, m, params).data

    padded = pad_to_patch(lq, patch)
    plan = plan_tiles(padded.shape[2], padded.shape[3], padded.shape[1], t.tile_size, t.t_window,
                      t.overlap, t.t_overlap, patch, t.margin)
    if args.plan_dump:
        write_record(args.plan_dump, {"config_hash": cfg.hash, **plan.to_dict()})
    sr = tiled_forward(lq[None].astype(T.default_dtype()), model_fn, m.upscale, patch, plan=plan)[0]
    write_clip(out, sr, args.format)
    write_record(out / "provenance.json",
                 _provenance(cfg, "infer", input=str(args.input), input_hash=clip_hash(lq),
                             checkpoint_hash=file_hash(args.ckpt) if args.ckpt else None,
                             tiles=len(plan.tiles), windows=len(plan.windows), output_hash=clip_hash(sr)))
    print(f"upscaled {lq.shape[1]} frames {lq.shape[2]}x{lq.shape[3]} -> {sr.shape[2]}x{sr.shape[3]} into {out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    if not (args.ref and args.test):
        raise InvalidConfigError("eval needs --ref and --test clip directories")
    ref, test = read_clip(args.ref), read_clip(args.test)
    if ref.shape != test.shape:
        raise InvalidShapeError(f"reference {ref.shape} and test {test.shape} clips differ in shape")
    report = evaluate_clip(ref, test, Path(args.test).name, {"config_hash": cfg.hash, "ref": str(args.ref),
                                                             "test": str(args.test)})
    if args.motion and ref.shape[1] > 1:
        report.motion_u, report.motion_v = motion_amplitude(ref)
    print(f"{'frame':>6}{'PSNR':>10}{'SSIM':>10}")
    for i, (p, s) in enumerate(zip(report.psnr, report.ssim)):
        print(f"{i:>6}{p:>10.4f}{s:>10.6f}")
    print(f"{'mean':>6}{report.mean_psnr:>10.4f}{report.mean_ssim:>10.6f}")
    if args.out:
        write_record(args.out, {**report.to_dict(), "config_hash": cfg.hash})
    return 0


def cmd_profile(args, cfg: RunConfig) -> int:
    shape = tuple(int(s) for s in args.shape.split(",")) if args.shape else REFERENCE_INPUT
    if len(shape) != 5 or shape[1] != 3:
        raise InvalidShapeError(f"--shape must be B,3,N,H,W, got {shape}")
    report = profile_model(cfg.model, shape)
    print(format_report(report, depth=args.depth, reference=True))
    if args.out:
        write_record(args.out, {**profile_record(cfg.model, shape), "config_hash": cfg.hash})
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    d = cfg.data
    budget = AblationBudget(iterations=cfg.train.iterations, pretrain_iterations=cfg.pretrain_iterations or cfg.train.iterations,
                            lr=cfg.train.lr, train_clips=d.clips, eval_clips=args.eval_clips, frames=d.frames,
                            size=min(d.height, d.width), seed=cfg.seed)
    rows = run_suite(args.suite, cfg.model, budget, replace(cfg.degradation, seed=cfg.seed),
                     progress=lambda r: print(f"  {r.key}: PSNR {r.psnr:.3f}", file=sys.stderr))
    print(f"# {CONVENTION}")
    print(format_table(rows))
    if args.out:
        write_record(args.out, {"suite": args.suite, "config_hash": cfg.hash, "budget": budget.__dict__,
                                "rows": [r.to_dict() for r in rows]})
    return 0


def cmd_motion(args, cfg: RunConfig) -> int:
    if not args.input:
        raise InvalidConfigError("motion needs --in <clip dir>")
    u, v = motion_amplitude(read_clip(args.input), args.block, args.search)
    print(f"mean |u| = {u:.4f} px/frame, mean |v| = {v:.4f} px/frame")
    if args.out:
        write_record(args.out, {"clip": str(args.input), "motion_u": u, "motion_v": v, "config_hash": cfg.hash})
    return 0


COMMANDS = {
    "degrade": cmd_degrade, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "profile": cmd_profile, "ablate": cmd_ablate, "motion": cmd_motion,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable (e.g. train.lr=1e-3)")

    parser = argparse.ArgumentParser(prog="dualx", description="Dual axial spatial x temporal video super-resolution")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    p = sub.add_parser("degrade", parents=[common], help="synthesize a degraded LQ clip")
    p.add_argument("--in", dest="input", help="HQ clip directory (synthetic clip if omitted)")
    p.add_argument("--hq-out", help="where to write the synthetic HQ clip")
    p.add_argument("--format", default="png", choices=["png", "ppm"])

    p = sub.add_parser("train", parents=[common], help="run toy training")
    p.add_argument("--data", action="append", default=[], help="HQ clip directory, repeatable (synthetic if omitted)")
    p.add_argument("--init", help="checkpoint to start from")

    p = sub.add_parser("infer", parents=[common], help="tiled x4 inference")
    p.add_argument("--in", dest="input", help="LQ clip directory")
    p.add_argument("--ckpt", help="checkpoint (fresh seeded weights if omitted)")
    p.add_argument("--plan-dump", help="write the tile plan as JSON")
    p.add_argument("--format", default="png", choices=["png", "ppm"])

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of a test clip against a reference")
    p.add_argument("--ref", help="reference clip directory")
    p.add_argument("--test", help="test clip directory")
    p.add_argument("--motion", action="store_true", help="also report reference motion amplitude")

    p = sub.add_parser("profile", parents=[common], help="closed-form parameter and MAC counts")
    p.add_argument("--shape", help="input shape B,3,N,H,W (default 1,3,16,64,64)")
    p.add_argument("--depth", type=int, default=2, help="tree depth to print")

    p = sub.add_parser("ablate", parents=[common], help="toy ablation suite")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--eval-clips", type=int, default=2)

    p = sub.add_parser("motion", parents=[common], help="block-matching motion amplitude of a clip")
    p.add_argument("--in", dest="input", help="clip directory")
    p.add_argument("--block", type=int, default=16)
    p.add_argument("--search", type=int, default=8)
    return parser


def _thread_limit():
    value = os.environ.get("DUALX_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise InvalidConfigError(f"DUALX_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise InvalidConfigError("DUALX_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed)
        dtype = np.float64 if cfg.precision == "float64" else np.float32
        with _thread_limit(), T.precision(dtype):
            return COMMANDS[args.command](args, cfg)
    except DualXError as exc:
        print(f"error: {exc.kind}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
