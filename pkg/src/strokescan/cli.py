"""Command-line surface: paint, bench, train-renderer, train-predictor,
fit, metrics."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import imageio, metrics, strokes, tiling, training
from .predictor import (DecoderConfig, EncoderConfig, Predictor,
                        load_predictor, predict_strokes, save_predictor,
                        save_tensors)
from .raster import Canvas
from .training import TrainConfig

# published end-to-end timings for the reference implementation of this
# method on its reference GPU, per resolution; printed for context only
REFERENCE_TIMES_S = {256: 0.073, 512: 0.198, 1024: 0.851}


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("STROKESCAN_THREADS")
    return int(env) if env else 1


def _merge_config(args, parser_defaults: dict):
    """Values from --config JSON fill any flag left at its default."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as f:
        cfg = json.load(f)
    for key, val in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise SystemExit(f"unknown config key: {key}")
        if getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, val)
    return args


def _predictor_from(args) -> Predictor:
    if getattr(args, "checkpoint", None):
        return load_predictor(args.checkpoint)
    # self-contained fallback: a small untrained model (deterministic)
    return Predictor(
        EncoderConfig(d_model=32, n_state=4, n_blocks=2, patch_embed=8),
        DecoderConfig(d_model=64, n_state=4, n_blocks=2,
                      n_strokes=args.strokes, n_heads=4),
        seed=args.seed)


def _patch_predictor(model: Predictor, model_res: int = 64):
    def predict(patch: Canvas) -> strokes.StrokeSequence:
        small = imageio.resize_bilinear(patch, model_res, model_res)
        return predict_strokes(small, model)
    return predict


def cmd_paint(args) -> int:
    img = imageio.load_png(args.input)
    grid = tiling.plan_patches(img.height, img.width, args.grid, args.grid,
                               args.overlap)
    model = _predictor_from(args)
    if model.dec_cfg.n_strokes != args.strokes:
        raise SystemExit("--strokes must match the checkpoint's stroke count")
    canvas, record = tiling.render_tiled(img, _patch_predictor(model), grid,
                                         group_size=args.group_size)
    imageio.save_png(args.output, canvas)
    if args.save_strokes:
        imageio.atomic_write_text(args.save_strokes, strokes.serialize(record))
    return 0


def cmd_bench(args) -> int:
    if args.runs < 3:
        raise SystemExit("bench needs at least 3 runs")
    model = _predictor_from(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    for size, g in ((256, 1), (512, 2), (1024, 4)):
        img = Canvas(size, size, rng.random((size, size, 3)))
        grid = tiling.plan_patches(size, size, g, g, args.overlap)
        times = []
        for i in range(args.runs + args.warmup):
            t0 = time.perf_counter()
            tiling.render_tiled(img, _patch_predictor(model), grid,
                                group_size=args.group_size)
            if i >= args.warmup:
                times.append(time.perf_counter() - t0)
        rows.append({"resolution": size, "grid": g,
                     "mean_s": float(np.mean(times)),
                     "std_s": float(np.std(times)),
                     "runs": args.runs})
    print(f"{'res':>6} {'grid':>5} {'mean (s)':>10} {'std (s)':>10} {'runs':>5}")
    for r in rows:
        print(f"{r['resolution']:>6} {r['grid']:>5} {r['mean_s']:>10.3f} "
              f"{r['std_s']:>10.3f} {r['runs']:>5}")
    ref = " / ".join(f"{REFERENCE_TIMES_S[r['resolution']]:.3f}" for r in rows)
    print(f"footnote: published reference timings {ref} s at these "
          f"resolutions (reference GPU); shown for context, not asserted.")
    report = {"strokes_per_step": model.dec_cfg.n_strokes,
              "n_params": model.n_params(), "rows": rows}
    if args.json:
        imageio.atomic_write_text(args.json, json.dumps(report) + "\n")
    return 0


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "fn"}


def _write_log(path: str, header: dict, records: list):
    lines = [json.dumps({"header": header})]
    lines += [json.dumps(r) for r in records]
    imageio.atomic_write_text(path, "\n".join(lines) + "\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, steps=args.steps,
                       lr=args.lr, seed=args.seed,
                       gan_start_fraction=args.gan_start,
                       group_size=args.group_size, n_strokes=args.strokes)


def cmd_train_renderer(args) -> int:
    cfg = _train_config(args)
    net, log = training.train_neural_renderer(cfg)
    save_tensors(args.checkpoint_out, net.state_dict(), {"kind": "renderer"})
    _write_log(args.log, {"command": "train-renderer", "config": _args_dict(args),
                          "steps": cfg.steps}, log)
    print(f"final loss {log[-1]['loss']:.5f} after {cfg.steps} steps")
    return 0


def cmd_train_predictor(args) -> int:
    cfg = _train_config(args)
    model, log = training.train_predictor(cfg)
    save_predictor(args.checkpoint_out, model)
    _write_log(args.log, {"command": "train-predictor", "config": _args_dict(args),
                          "steps": cfg.steps}, log)
    print(f"final loss {log[-1]['loss']:.5f} after {cfg.steps} steps")
    return 0


def cmd_fit(args) -> int:
    img = imageio.load_png(args.input)
    if img.height != img.width:
        raise SystemExit("fit expects a square input image")
    seq, mse, _ = training.fit_strokes_direct(img, args.n, args.iters,
                                              seed=args.seed)
    print(f"MSE {mse:.5f} with {args.n} strokes after {args.iters} iterations")
    if args.output:
        canvas = tiling.paint_strokes(seq, img.height,
                                      group_size=args.group_size)
        imageio.save_png(args.output, canvas)
    return 0


def cmd_metrics(args) -> int:
    a = imageio.load_png(args.a)
    b = imageio.load_png(args.b) if args.b else None
    out = {}
    if b is not None:
        out["mse"] = metrics.mse_metric(a, b)
    if args.grid > 1:
        out["seam"] = metrics.seam_metric(a, args.grid, args.grid)
    print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strokescan",
                                description="stroke-based image painting")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads; default env STROKESCAN_THREADS or 1")
        sp.add_argument("--config", default=None,
                        help="JSON file whose keys fill unset flags")
        sp.add_argument("--group-size", type=int, default=10,
                        help="strokes per intermediate canvas (default 10)")

    sp = sub.add_parser("paint", help="paint an image with predicted strokes")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--checkpoint", default=None, help="predictor checkpoint")
    sp.add_argument("--grid", type=int, default=1, help="patch grid side (default 1)")
    sp.add_argument("--overlap", type=float, default=0.25,
                    help="patch overlap fraction (default 0.25)")
    sp.add_argument("--strokes", type=int, default=100,
                    help="strokes per patch (default 100)")
    sp.add_argument("--save-strokes", default=None, help="write painting JSON here")
    common(sp)
    sp.set_defaults(fn=cmd_paint)

    sp = sub.add_parser("bench", help="time painting at 256/512/1024")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--strokes", type=int, default=100)
    sp.add_argument("--overlap", type=float, default=0.25)
    sp.add_argument("--runs", type=int, default=10, help="timed runs (default 10)")
    sp.add_argument("--warmup", type=int, default=2, help="warmup runs (default 2)")
    sp.add_argument("--json", default=None, help="write the report JSON here")
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    for name, fn in (("train-renderer", cmd_train_renderer),
                     ("train-predictor", cmd_train_predictor)):
        sp = sub.add_parser(name, help=f"run the {name.replace('-', ' ')} loop")
        sp.add_argument("--steps", type=int, default=1000,
                        help="training steps (default 1000)")
        sp.add_argument("--batch-size", type=int, default=16)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--gan-start", type=float, default=0.5,
                        help="fraction of steps before the GAN term (default 0.5)")
        sp.add_argument("--strokes", type=int, default=8,
                        help="strokes per training render (default 8)")
        sp.add_argument("--checkpoint-out", default=f"{name}.ckpt")
        sp.add_argument("--log", default=f"{name}.ndjson")
        common(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("fit", help="direct gradient-descent stroke fit")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("-o", "--output", default=None)
    sp.add_argument("-n", type=int, default=32, help="stroke count (default 32)")
    sp.add_argument("--iters", type=int, default=300)
    common(sp)
    sp.set_defaults(fn=cmd_fit)

    sp = sub.add_parser("metrics", help="mse / seam metrics between images")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", default=None)
    sp.add_argument("--grid", type=int, default=1,
                    help="seam grid side; >1 enables the seam metric")
    common(sp)
    sp.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = next(a for a in parser._actions
               if isinstance(a, argparse._SubParsersAction))
    defaults = {a.dest: a.default for a in sub.choices[args.command]._actions}
    try:
        args = _merge_config(args, defaults)
        n = _threads(args)
        os.environ.setdefault("OMP_NUM_THREADS", str(n))
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
