"""Command-line entry point: ``ssnet <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 I/O or format error, 4 check failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
import warnings

import numpy as np

from . import gradcheck
from ._fileutil import atomic_write
from .depth_ace import enhance_depth
from .imageio import ImageFormatError, read_image, write_image
from .metrics import evaluate_dataset, report_to_json
from .network import (
    init_weights,
    load_weights,
    read_config,
    save_weights,
    ssnet_forward,
)
from .priors import compute_priors
from .ssm import S6Params, s6_scan_parallel, s6_scan_seq, scan_inputs
from .tensor_core import bilinear_resize

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


def _read_gray(path):
    img = read_image(path)
    if img.shape[0] != 1:
        raise ImageFormatError(f"{path}: expected a single-channel PGM, got {img.shape[0]} channels")
    return img


def _read_rgb(path):
    img = read_image(path)
    if img.shape[0] != 3:
        raise ImageFormatError(f"{path}: expected a 3-channel PPM, got {img.shape[0]} channel")
    return img


def cmd_enhance_depth(args):
    depth = _read_gray(args.inp)
    write_image(args.out, enhance_depth(depth, args.low_pct, args.high_pct, args.invert_depth))


def _load_pair(args):
    rgb = _read_rgb(args.rgb)
    depth = _read_gray(args.depth)
    if rgb.shape[1:] != depth.shape[1:]:
        raise ImageFormatError(
            f"rgb is {rgb.shape[2]}x{rgb.shape[1]} but depth is {depth.shape[2]}x{depth.shape[1]}"
        )
    return rgb, enhance_depth(depth, invert=args.invert_depth)


def cmd_priors(args):
    rgb, depth = _load_pair(args)
    priors = compute_priors(rgb, depth)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, arr in priors.maps().items():
        write_image(os.path.join(args.out_dir, f"{name}.pgm"), arr)


def cmd_infer(args):
    cfg = read_config(args.config)
    weights = load_weights(args.weights)
    rgb, depth = _load_pair(args)
    if rgb.shape[1:] != (cfg.H, cfg.W):
        rgb = bilinear_resize(rgb, cfg.H, cfg.W)
        depth = bilinear_resize(depth, cfg.H, cfg.W)
    write_image(args.out, ssnet_forward(rgb, depth, weights, cfg))


def cmd_init_weights(args):
    cfg = read_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    save_weights(init_weights(cfg, seed), args.out)


def cmd_eval(args):
    report = evaluate_dataset(args.pred_dir, args.gt_dir)
    atomic_write(args.report, report_to_json(report).encode("utf-8"))


def bench_scan(L, D, N, modes=("seq", "par"), repeats=3, seed=0, dtype=np.float32, workers=1):
    """Best-of-``repeats`` wall time per mode and the parallel scan's deviation from the oracle."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((L, D)).astype(dtype)
    inp = scan_inputs(f, f, S6Params.init(D, N, rng, dtype=dtype))
    fns = {"seq": s6_scan_seq, "par": lambda i: s6_scan_parallel(i, workers=workers)}
    times, outs = {}, {}
    for mode in modes:
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            outs[mode] = fns[mode](inp)
            best = min(best, time.perf_counter() - t0)
        times[mode] = best
    ref = outs["seq"] if "seq" in outs else s6_scan_seq(inp)
    dev = float(np.abs(outs["par"] - ref).max()) if "par" in outs else 0.0
    return times, dev


def cmd_bench_scan(args):
    modes = ("seq", "par") if args.mode == "both" else (args.mode,)
    dtype = np.float64 if args.float64 else np.float32
    times, dev = bench_scan(args.L, args.D, args.N, modes, args.repeats, args.seed, dtype,
                            args.workers)
    for mode, t in times.items():
        print(f"{mode}: {t * 1e3:.2f} ms")
    print(f"max |par - seq|: {dev:.3e}")
    tol = 1e-10 if args.float64 else 1e-5
    if dev > tol:
        raise CheckFailed(f"parallel scan deviates from the oracle by {dev:.3e} > {tol:g}")
    if len(times) == 2:
        speedup = times["seq"] / times["par"]
        cores = os.cpu_count() or 1
        print(f"speedup: {speedup:.2f}x ({cores} core(s) available)")
        if speedup < 2.0:
            if cores >= 4:
                raise CheckFailed(f"parallel scan only {speedup:.2f}x faster than sequential")
            warnings.warn(f"speedup {speedup:.2f}x < 2x with only {cores} core(s) available")


def cmd_gradcheck(args):
    errs = gradcheck.CHECKS[args.op](args.seed)
    worst = max(errs.values())
    for name, e in errs.items():
        print(f"{name}: rel err {e:.3e}")
    if not worst < gradcheck.TOLERANCE:
        raise CheckFailed(f"max relative error {worst:.3e} >= {gradcheck.TOLERANCE:g}")
    print("ok")


def build_parser():
    ap = argparse.ArgumentParser(prog="ssnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance-depth", help="adaptive contrast enhancement of a depth PGM")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--low-pct", type=float, default=1.0)
    p.add_argument("--high-pct", type=float, default=1.0)
    p.add_argument("--invert-depth", action="store_true", help="treat dark pixels as near")
    p.set_defaults(fn=cmd_enhance_depth)

    p = sub.add_parser("priors", help="write the saliency priors and intermediates as PGMs")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--invert-depth", action="store_true")
    p.set_defaults(fn=cmd_priors)

    p = sub.add_parser("infer", help="predict a saliency map")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--invert-depth", action="store_true")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("init-weights", help="write randomly initialised weights")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init_weights)

    p = sub.add_parser("eval", help="evaluate a directory of predictions")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench-scan", help="time sequential vs. parallel scan")
    p.add_argument("--L", type=int, default=16384)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--mode", choices=("seq", "par", "both"), default="both")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--float64", action="store_true")
    p.set_defaults(fn=cmd_bench_scan)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    p.add_argument("--op", choices=sorted(gradcheck.CHECKS), default="s6")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (OSError, ValueError) as exc:
        # format errors (image, weights, config) are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
