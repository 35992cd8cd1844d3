"""``simdiff`` command line: train, sample, schedule dump, dwt, grad-check, verify.

Exit codes: 0 success / all checks pass, 1 failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    from .config import ConfigError, RunConfig
    from .trainer import load_checkpoint, train

    try:
        if args.resume:
            state = load_checkpoint(args.resume)
            cfg = state.config
        else:
            state = None
            cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg.apply_overrides(args.set)
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.steps is not None:
            cfg.set("num_train_steps", args.steps)
    except (ConfigError, ValueError) as e:
        raise UsageError(str(e)) from e
    if state is not None:
        state.config = cfg
    state, history = train(cfg, args.out, state=state)
    if history:
        print(f"trained to step {state.step}; final loss {history[-1].loss:.6f}")
    print(f"wrote {os.path.join(args.out, 'last.sdck')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    from .imageio import write_pnm
    from .report import image_grid
    from .sampler import model_v_fn, sample, to_uint8
    from .trainer import build_model, load_checkpoint

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    if args.steps is not None:
        cfg.set("sample_steps", args.steps)
    if args.guidance is not None:
        cfg.set("guidance_scale", args.guidance)
    if args.noise_param is not None:
        cfg.set("noise_param", args.noise_param)
    try:
        scfg = cfg.sampler()
    except ValueError as e:
        raise UsageError(str(e)) from e
    model = build_model(cfg)
    ids = None
    if model.config.num_classes > 0:
        if args.class_id is None:
            raise UsageError("--class is required for a class-conditional checkpoint")
        if not 0 <= args.class_id < model.config.num_classes:
            raise UsageError(f"--class must be in [0, {model.config.num_classes})")
        ids = np.full(args.num, args.class_id, dtype=np.int64)
    params = state.ema if not args.raw_params else state.params
    shape = (args.num, cfg["resolution"], cfg["resolution"], cfg["channels"])
    x = sample(model_v_fn(model, params), cfg.schedule(), scfg, shape, ids,
               rng=np.random.default_rng(args.seed), null_id=model.null_class)
    os.makedirs(args.out, exist_ok=True)
    ext = "pgm" if shape[-1] == 1 else "ppm"
    with open(os.path.join(args.out, "samples.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "class", "file", "mean", "std"])
        for i, img in enumerate(x):
            name = f"sample_{i:03d}.{ext}"
            write_pnm(os.path.join(args.out, name), to_uint8(img))
            w.writerow([i, "" if ids is None else int(ids[i]), name, repr(float(img.mean())), repr(float(img.std()))])
    image_grid(os.path.join(args.out, "samples.png"), list(x))
    print(f"wrote {len(x)} samples to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# schedule dump


def dump_schedule(spec, path) -> np.ndarray:
    """Write t, logsnr, alpha, sigma, weight on t = 0, 0.001, ..., 1 (weight blank at the ends)."""
    from .schedule import elbo_weight

    t = np.round(np.arange(1001) * 0.001, 12)
    t[-1] = 1.0
    lam = spec.logsnr(t)
    ab = spec.alpha_sigma(t)
    weight = np.full_like(t, np.nan)
    weight[1:-1] = elbo_weight(spec, t[1:-1])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "logsnr", "alpha", "sigma", "weight"])
        for row in zip(t, lam, ab.alpha, ab.sigma, weight):
            w.writerow([format(float(v), ".17g") if np.isfinite(v) else "" for v in row])
    return np.stack([t, lam, weight])


def cmd_schedule(args) -> int:
    from .report import plot_schedule
    from .schedule import ScheduleKind, ScheduleSpec

    try:
        spec = ScheduleSpec(ScheduleKind(args.kind), logsnr_min=args.logsnr_min, logsnr_max=args.logsnr_max,
                            image_d=args.image_d, noise_d=args.noise_d, noise_d_low=args.noise_d_low,
                            noise_d_high=args.noise_d_high, interp_main_text=args.main_text_interp)
    except ValueError as e:
        raise UsageError(str(e)) from e
    t, lam, weight = dump_schedule(spec, args.out)
    ref = ScheduleSpec(ScheduleKind.COSINE, args.logsnr_min, args.logsnr_max).logsnr(t)
    png = os.path.splitext(args.out)[0] + ".png"
    plot_schedule(png, t, lam, weight, reference=ref if args.kind != "cosine" else None, label=args.kind)
    print(f"wrote {args.out} and {png}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dwt


def cmd_dwt(args) -> int:
    from .engine.container import load_tensors, save_tensors
    from .imageio import ImageFormatError, read_pnm, write_pnm
    from . import wavelet

    if args.inverse:
        tensors = load_tensors(args.input)
        if "dwt/packed" not in tensors or "dwt/meta" not in tensors:
            raise UsageError(f"{args.input} does not hold a packed DWT stack")
        h, w, c, levels = (int(v) for v in tensors["dwt/meta"])
        image = wavelet.unpack(tensors["dwt/packed"].astype(np.float64), levels)
        if image.shape != (h, w, c):
            raise UsageError(f"{args.input}: stored shape {(h, w, c)} disagrees with the stack")
        write_pnm(args.output, np.clip(np.round(image), 0, 255).astype(np.uint8))
    else:
        try:
            image = read_pnm(args.input).astype(np.float64)
        except ImageFormatError as e:
            raise UsageError(str(e)) from e
        h, w, c = image.shape
        if h % (1 << args.levels) or w % (1 << args.levels):
            raise UsageError(f"image {h}x{w} is not divisible by 2^{args.levels}")
        packed = wavelet.pack(image, args.levels)
        save_tensors(args.output, {"dwt/packed": packed, "dwt/meta": np.array([h, w, c, args.levels])})
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grad-check / verify


def cmd_grad_check(args) -> int:
    from .verify import GRAD_OPS, grad_check

    try:
        checks = grad_check(args.op, seed=args.seed)
    except KeyError:
        raise UsageError(f"unknown op {args.op!r}; choose from {', '.join(GRAD_OPS + ('uvit',))}") from None
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def cmd_verify(args) -> int:
    from .verify import run

    ok = run(args.suite, seed=args.seed, out_dir=args.out)
    print("ALL PASS" if ok else "FAILURES")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    p = argparse.ArgumentParser(prog="simdiff", description="Desk-scale pixel diffusion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a U-ViT diffusion model")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    t.add_argument("--steps", type=int, help="total number of training steps")
    t.add_argument("--out", default="run", help="output directory")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint's EMA weights")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--class", dest="class_id", type=int)
    s.add_argument("--num", type=int, default=8)
    s.add_argument("--steps", type=int)
    s.add_argument("--guidance", type=float, help="guidance scale 1 + eta")
    s.add_argument("--noise-param", type=float)
    s.add_argument("--raw-params", action="store_true", help="use the raw weights instead of the EMA")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="samples")
    s.set_defaults(func=cmd_sample)

    sc = sub.add_parser("schedule", help="noise schedule tools")
    scs = sc.add_subparsers(dest="action", required=True)
    d = scs.add_parser("dump", help="write the schedule table as CSV plus a figure")
    d.add_argument("--kind", choices=("cosine", "shifted", "interpolated"), default="cosine")
    d.add_argument("--image-d", type=int, default=64)
    d.add_argument("--noise-d", type=int, default=64)
    d.add_argument("--noise-d-low", type=int, default=32)
    d.add_argument("--noise-d-high", type=int, default=64)
    d.add_argument("--logsnr-min", type=float, default=-15.0)
    d.add_argument("--logsnr-max", type=float, default=15.0)
    d.add_argument("--main-text-interp", action="store_true", help="swap the interpolation endpoints")
    d.add_argument("--out", default="schedule.csv")
    d.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the dump is deterministic")
    d.set_defaults(func=cmd_schedule)

    w = sub.add_parser("dwt", help="5/3 wavelet pack a PGM/PPM into a tensor container, or back")
    w.add_argument("--inverse", action="store_true")
    w.add_argument("--levels", type=int, default=1, choices=(1, 2, 3))
    w.add_argument("input")
    w.add_argument("output")
    w.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the transform is deterministic")
    w.set_defaults(func=cmd_dwt)

    g = sub.add_parser("grad-check", help="central-difference gradient checks")
    g.add_argument("--op", help="single op name, or 'uvit' for the end-to-end network")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    v.add_argument("--out", help="directory for the pooling-law pyramid and figures")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"simdiff: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"simdiff: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
