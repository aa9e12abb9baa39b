"""Command-line pipeline: fit, hierarchy, finetune, encode, decode, render,
transition, eval, ablate-flat, synth.

Defaults mirror the reference configuration (8 levels, c_min 100000,
lambda 1e-2, 30000 iterations) even though desk-scale runs override them.
Every subcommand is deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import codec, hierarchy as hmod, metrics, scenefit
from .finetune import FinetuneConfig, compute_quant_params, finetune
from .model import subset
from .ply import load_ply, save_ply
from .quant import QuantParams, QuantizationSpec
from .render import render, render_transition
from .views import load_views, save_image, save_views

BACKGROUND = (0.0, 0.0, 0.0)


def _save_quant_params(params: QuantParams, path) -> None:
    record = {
        "q_min": params.q_min,
        "q_max": params.q_max,
        "scale": [float(v) for v in params.scale],
        "zero_point": [float(v) for v in params.zero_point],
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def _load_quant_params(path) -> QuantParams:
    with open(path) as fh:
        record = json.load(fh)
    return QuantParams(np.asarray(record["scale"]), np.asarray(record["zero_point"]),
                       record["q_min"], record["q_max"])


def _quant_sidecar(model_path) -> str:
    return str(model_path) + ".quant.json"


def _cmd_synth(args) -> int:
    views, reference = scenefit.make_synthetic_scene(
        args.kind, args.views, args.resolution, args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_views(views, os.path.join(args.out, "views.json"))
    save_ply(reference, os.path.join(args.out, "reference.ply"))
    print(f"wrote {len(views)} views and reference model to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    views = load_views(args.views)
    model = scenefit.fit(views, args.n, args.iters, args.seed)
    save_ply(model, args.out)
    print(f"fitted {model.n} Gaussians -> {args.out}")
    return 0


def _cmd_hierarchy(args) -> int:
    model = load_ply(args.model)
    views = load_views(args.views)
    c_max = args.cmax if args.cmax else int(args.cmax_frac * model.n)
    prog = hmod.compute_progression(args.cmin, c_max, args.levels)
    h = hmod.build_hierarchy(model, views, prog, score=args.score,
                             one_shot=args.one_shot,
                             accumulation=args.accumulation)
    hmod.save_hierarchy(h, args.out)
    print(f"hierarchy levels {prog.cumulative} -> {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    model = load_ply(args.model)
    h = hmod.load_hierarchy(args.hierarchy)
    views = load_views(args.views)
    if args.config:
        cfg = FinetuneConfig.from_file(args.config)
    else:
        cfg = FinetuneConfig()
    sampling = args.sampling if args.sampling else cfg.sampling
    g = cfg.sampling_g
    if sampling.startswith("weighted"):
        sampling, _, g_str = sampling.partition(":")
        g = float(g_str) if g_str else g
    cfg = FinetuneConfig(
        iterations=args.iters if args.iters is not None else cfg.iterations,
        sh_l1_weight=args.l1 if args.l1 is not None else cfg.sh_l1_weight,
        l1_include_dc=cfg.l1_include_dc,
        l1_mean_normalized=cfg.l1_mean_normalized,
        ssim_weight=cfg.ssim_weight,
        sampling=sampling, sampling_g=g,
        seed=args.seed if args.seed is not None else cfg.seed,
        lr_position=cfg.lr_position, lr_position_final=cfg.lr_position_final,
        lr_sh_dc=cfg.lr_sh_dc, lr_sh_rest=cfg.lr_sh_rest,
        lr_opacity=cfg.lr_opacity, lr_scale=cfg.lr_scale,
        lr_rotation=cfg.lr_rotation,
    )
    spec = QuantizationSpec()
    params = compute_quant_params(model, h, spec)
    tuned = finetune(model, h, views, spec, cfg, params=params,
                     background=BACKGROUND, log_path=args.log)
    save_ply(tuned, args.out)
    _save_quant_params(params, _quant_sidecar(args.out))
    print(f"fine-tuned {cfg.iterations} iterations -> {args.out}")
    return 0


def _cmd_encode(args) -> int:
    model = load_ply(args.model)
    h = hmod.load_hierarchy(args.hierarchy)
    spec = QuantizationSpec()
    params_path = args.params or _quant_sidecar(args.model)
    if os.path.exists(params_path):
        params = _load_quant_params(params_path)
    else:
        print(f"note: no frozen ranges at {params_path}, deriving from the model",
              file=sys.stderr)
        params = compute_quant_params(model, h, spec)
    stream = codec.encode(model, h, spec, params)
    codec.write_gode(stream, args.out)
    sizes = [len(codec.truncate(stream, l)) for l in range(stream.levels)]
    print(f"encoded {stream.levels} layers, prefix sizes {sizes} -> {args.out}")
    return 0


def _cmd_decode(args) -> int:
    stream = codec.read_gode(args.infile)
    model = codec.decode(stream, args.level)
    save_ply(model, args.out)
    print(f"decoded level {args.level}: {model.n} Gaussians -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    stream = codec.read_gode(args.infile)
    model = codec.decode(stream, args.level)
    views = load_views(args.views)
    if not 0 <= args.camera < len(views):
        raise ValueError(f"camera index {args.camera} out of range")
    image = render(model, views[args.camera].camera, BACKGROUND)
    save_image(image, args.out)
    print(f"rendered level {args.level} camera {args.camera} -> {args.out}")
    return 0


def _cmd_transition(args) -> int:
    stream = codec.read_gode(args.infile)
    views = load_views(args.views)
    if not 0 <= args.camera < len(views):
        raise ValueError(f"camera index {args.camera} out of range")
    camera = views[args.camera].camera
    model = codec.decode(stream, args.level + 1)
    h = _decoded_hierarchy(stream, args.level + 1)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.steps):
        t = i / (args.steps - 1) if args.steps > 1 else 0.0
        image = render_transition(model, h, args.level, t, camera, BACKGROUND)
        save_image(image, os.path.join(args.out, f"transition_{i:03d}.png"))
    print(f"wrote {args.steps} transition frames to {args.out}")
    return 0


def _decoded_hierarchy(stream: codec.GodeStream, levels: int) -> hmod.Hierarchy:
    """Identity-layout hierarchy over a decoded model (layers are already
    concatenated in layer order)."""
    counts = stream.counts[:levels + 1] if levels < stream.levels else stream.counts
    cumulative = list(np.cumsum(counts))
    prog = hmod.LevelProgression(counts[0], cumulative[-1], len(counts),
                                 [int(c) for c in cumulative],
                                 [int(counts[0])] + [int(c) for c in counts[1:]])
    offsets = [0] + cumulative
    return hmod.Hierarchy(
        prog,
        np.arange(counts[0]),
        [np.arange(offsets[i], offsets[i + 1]) for i in range(1, len(counts))],
        source_count=cumulative[-1],
    )


def _cmd_eval(args) -> int:
    stream = codec.read_gode(args.infile)
    views = load_views(args.views)
    reports = metrics.evaluate_levels(stream, views, BACKGROUND)
    text = metrics.reports_to_csv(reports)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _cmd_ablate_flat(args) -> int:
    """Non-hierarchical baseline: each level is masked independently from
    the full model (one-shot scores) and fine-tuned on its own, with no
    nesting constraint between levels."""
    model = load_ply(args.model)
    views = load_views(args.views)
    c_max = args.cmax if args.cmax else int(args.cmax_frac * model.n)
    prog = hmod.compute_progression(args.cmin, c_max, args.levels)
    scores = hmod.accumulate_scores(model, np.arange(model.n), views,
                                    score=args.score)
    order = np.lexsort((np.arange(model.n), scores))
    spec = QuantizationSpec()
    reports = []
    for level, count in enumerate(prog.cumulative):
        keep = np.sort(order[model.n - count:])
        part = subset(model, keep)
        flat_prog = hmod.compute_progression(count, count, 2)
        flat_h = hmod.Hierarchy(flat_prog, np.arange(count),
                                [np.arange(0)], source_count=count)
        params = compute_quant_params(part, flat_h, spec)
        cfg = FinetuneConfig(iterations=args.iters, sh_l1_weight=args.l1,
                             seed=args.seed)
        tuned = finetune(part, flat_h, views, spec, cfg, params=params,
                         background=BACKGROUND)
        stream = codec.encode(tuned, flat_h, spec, params)
        level_reports = metrics.evaluate_levels(stream, views, BACKGROUND)
        top = level_reports[-1]
        reports.append(metrics.LevelReport(
            level=level, gaussian_count=count,
            size_bytes=len(stream.to_bytes()),
            psnr_db=top.psnr_db, ssim=top.ssim,
            render_ms_mean=top.render_ms_mean))
    text = metrics.reports_to_csv(reports)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlod",
        description="Progressive level-of-detail codec for Gaussian-splat scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic posed scene")
    p.add_argument("--kind", default="blobs")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit a fixed-count model to posed views")
    p.add_argument("--views", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("hierarchy", help="build the base/enhancement partition")
    p.add_argument("--model", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--cmin", type=int, default=100000)
    p.add_argument("--cmax", type=int, default=0,
                   help="absolute top-level count (overrides --cmax-frac)")
    p.add_argument("--cmax-frac", type=float, default=0.75, dest="cmax_frac")
    p.add_argument("--score", choices=hmod.SCORE_KINDS, default="gradient")
    p.add_argument("--accumulation", choices=hmod.ACCUMULATIONS, default="norm-sum")
    p.add_argument("--one-shot", action="store_true", dest="one_shot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_hierarchy)

    p = sub.add_parser("finetune", help="quantization-aware fine-tuning")
    p.add_argument("--model", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lambda", type=float, default=None, dest="l1")
    p.add_argument("--sampling", default=None,
                   help="uniform or weighted:G")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log", default=None, help="per-iteration CSV log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("encode", help="serialize to a layered .gode stream")
    p.add_argument("--model", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--params", default=None,
                   help="frozen quantization ranges (default: model sidecar)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a level of detail to PLY")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("render", help="render a decoded level")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--camera", type=int, required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("transition", help="opacity-interpolated level cross-fade")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--views", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transition)

    p = sub.add_parser("eval", help="per-level quality/size report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate-flat",
                       help="independent per-level masking baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--cmin", type=int, required=True)
    p.add_argument("--cmax", type=int, default=0)
    p.add_argument("--cmax-frac", type=float, default=0.75, dest="cmax_frac")
    p.add_argument("--score", choices=hmod.SCORE_KINDS, default="gradient")
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--lambda", type=float, default=1e-2, dest="l1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ablate_flat)

    for sp in sub.choices.values():
        sp.add_argument("--threads", type=int, default=1,
                        help="renderer worker cap (the CPU renderer is "
                             "sequential; values above 1 are clamped)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # pipeline errors -> message + exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
