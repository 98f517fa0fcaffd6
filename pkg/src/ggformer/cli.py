"""``ggformer`` command line.

Exit codes: 0 success, 1 a verification check failed, 2 usage or input error.
Every run echoes its resolved configuration on stderr as a ``# config`` line.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import kernels
from .attention import AttentionConfig, Variant, attention, init_attention
from .backbone import build, forward, get_config, load_checkpoint, save_checkpoint
from .complexity import count_model, predicted_macs
from .errors import GGError
from .partition import PartitionSpec
from .tensor import io, no_grad

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DTYPES = {"float64": np.float64, "float32": np.float32}
DEFAULT_SWEEP = [49 * 4 ** i for i in range(6)]


def _echo(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["kernel_backend"] = kernels.BACKEND
    print("# config " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _pair(text):
    parts = [int(v) for v in text.replace("x", ",").split(",")]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected h,w got {text!r}")
    return tuple(parts)


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ------------------------------------------------------------------

def cmd_forward(args):
    img = io.load(args.input)
    if img.ndim != 3 or img.shape[0] != 3:
        raise GGError(f"input must be a 3 x H x W tensor, got shape {img.shape}")
    dtype = DTYPES[args.precision]
    if args.checkpoint:
        weights = load_checkpoint(args.checkpoint, dtype=dtype)
        if weights.config.name != get_config(args.model).name:
            raise GGError(f"checkpoint holds {weights.config.name}, not {args.model}")
    else:
        cfg = get_config(args.model)
        cfg.stage_grids(img.shape[1], img.shape[2])  # reject bad geometry before building
        weights = build(cfg, seed=args.seed, dtype=dtype)
    with no_grad():
        logits = forward(img.astype(dtype), weights).data
    if args.out:
        io.save(args.out, logits)
    top = np.argsort(-logits, kind="stable")[:5]
    print("top5 " + " ".join(str(int(i)) for i in top))
    return EXIT_OK


def cmd_count(args):
    rep = count_model(get_config(args.model), args.image_size)
    if args.format == "csv":
        _emit(rep.to_csv(), args.out)
    else:
        _emit(rep.to_table(f"{args.model} @ {args.image_size[0]}x{args.image_size[1]}") + "\n", args.out)
    return EXIT_OK


def loglog_slope(ns, values):
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _time_variant(variant, h, w, C, heads, M, R, rng, repeats=1):
    cfg = AttentionConfig(C, heads, M, R, variant, rel_pos_bias=False)
    weights = init_attention(cfg, rng)
    x = rng.standard_normal((h * w, C))
    spec = PartitionSpec(h, w, M)
    best = math.inf
    with no_grad():
        for _ in range(repeats):
            t0 = time.perf_counter()
            attention(x, weights, cfg, spec)
            best = min(best, time.perf_counter() - t0)
    return best


def compare_rows(variants, grids, C, heads=1, M=7, R=1, timing=True, time_max_n=3136, seed=0):
    """Rows of (variant, N, h, w, predicted MACs, wall seconds or None)."""
    rng = np.random.default_rng(seed)
    rows = []
    for v in variants:
        v = Variant(v)
        for h, w in grids:
            N = h * w
            if v in (Variant.G_MSA, Variant.W_MSA):
                PartitionSpec(h, w, M)
            if v is Variant.SRA and (h % R or w % R):
                raise GGError(f"grid {h}x{w} not divisible by reduction R={R}")
            macs = predicted_macs(v, N, C, M, R)
            secs = None
            if timing and N <= time_max_n:
                secs = _time_variant(v, h, w, C, heads, M, R, rng)
            rows.append((v.value, N, h, w, macs, secs))
    return rows


def cmd_compare(args):
    if args.sweep:
        grids = []
        for n in args.sweep:
            side = math.isqrt(n)
            if side * side != n:
                raise GGError(f"sweep value N={n} is not a square token count")
            grids.append((side, side))
    elif args.grid:
        grids = [args.grid]
    else:
        grids = [(math.isqrt(n),) * 2 for n in DEFAULT_SWEEP]
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        try:
            Variant(v)
        except ValueError:
            raise GGError(f"unknown variant {v!r}; choose from msa,gmsa,wmsa,sra") from None
    rows = compare_rows(variants, grids, args.channels, args.heads, args.M, args.reduction,
                        timing=not args.no_timing, time_max_n=args.time_max_n, seed=args.seed)
    lines = ["variant,N,h,w,predicted_macs,wall_time_s"]
    for v, N, h, w, macs, secs in rows:
        lines.append(f"{v},{N},{h},{w},{macs},{'' if secs is None else f'{secs:.6f}'}")
    _emit("\n".join(lines) + "\n", args.out)
    if len(grids) > 1:
        for v in variants:
            pts = [(N, m) for vv, N, _, _, m, _ in rows if vv == v]
            slope = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
            print(f"# slope variant={v} loglog_macs_vs_N={slope:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suites

    results = run_suites([args.suite], seed=args.seed, fault=args.inject_fault)
    ok = True
    for name, checks, secs in results:
        for c in checks:
            print(c.line())
            ok &= c.passed
        passed = all(c.passed for c in checks)
        print(json.dumps({"suite": name, "status": "PASS" if passed else "FAIL",
                          "checks": len(checks), "seconds": round(secs, 3)}))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_init(args):
    w = build(get_config(args.model, image_size=args.image_size), seed=args.seed)
    bin_path = save_checkpoint(w, args.out)
    print(f"wrote {args.out} and {bin_path} ({w.num_parameters()} parameters)")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _default_seed():
    env = os.environ.get("GG_SEED")
    return int(env) if env not in (None, "") else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ggformer", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_default_seed(),
                        help="RNG seed (falls back to $GG_SEED, then 0)")
    common.add_argument("--precision", choices=sorted(DTYPES), default="float64")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", parents=[common], help="classify a GGT1 image tensor")
    p.add_argument("model", help="GG-T or GG-S")
    p.add_argument("input", help="GGT1 tensor of shape 3 x H x W")
    p.add_argument("--out", help="write logits as a GGT1 tensor")
    p.add_argument("--checkpoint", help="weights manifest (otherwise seeded init)")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("count", parents=[common], help="parameter and MAC report")
    p.add_argument("model")
    p.add_argument("--image-size", type=_pair, default=(224, 224))
    p.add_argument("--format", choices=("csv", "table"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("compare", parents=[common], help="attention variant cost sweep (CSV)")
    p.add_argument("--variants", default="msa,gmsa,wmsa,sra")
    p.add_argument("--grid", type=_pair, help="single token grid h,w")
    p.add_argument("--sweep", type=int, nargs="+", help="square token counts N")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--M", type=int, default=7, help="partition / window side")
    p.add_argument("--reduction", type=int, default=1, help="SRA pooling factor R")
    p.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty")
    p.add_argument("--time-max-n", type=int, default=3136,
                   help="skip timing above this N (dense attention is O(N^2) memory)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", parents=[common], help="run invariant suites")
    p.add_argument("--suite", choices=("oracle", "grad", "perm", "flops", "all"), default="all")
    p.add_argument("--inject-fault", choices=("merge",), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("init", parents=[common], help="write a seeded weight checkpoint")
    p.add_argument("model")
    p.add_argument("--image-size", type=_pair, default=(224, 224))
    p.add_argument("--out", required=True, help="manifest path (binary written alongside)")
    p.set_defaults(func=cmd_init)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo(args)
    try:
        return args.func(args)
    except (GGError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
