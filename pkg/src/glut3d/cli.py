"""Command-line front end.

Subcommands: fit, apply, bake, edit, eval, bench, serve.

Exit codes: 0 success; 2 bad usage or invalid argument values; 3 malformed
.cube or model file; 4 file/image I/O failure; 5 training divergence;
6 model-kind mismatch (e.g. asking a single-style model for a blend).

A --config file supplies defaults as KEY=VALUE lines (long option names,
dashes or underscores; '#' comments). Explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import cglut as cg
from . import editing as ed
from . import eval_bench as eb
from .glut_core import (
    GlutModel,
    ModelFormatError,
    ModelKindError,
    apply_to_image,
    bake_to_cube,
    serialize,
)
from .glut_train import DivergenceError, TrainConfig, fit_glut, sample_complement
from .lut_io import (
    ColorPairSet,
    CubeParseError,
    ImageIOError,
    parse_cube,
    read_image,
    trilinear_sample,
    write_cube,
    write_image,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_DIVERGENCE = 5
EXIT_KIND = 6


def parse_color(text: str) -> tuple[float, float, float]:
    """'#rrggbb' hex or 'r,g,b' floats in [0, 1]."""
    text = text.strip()
    if text.startswith("#"):
        if len(text) != 7:
            raise argparse.ArgumentTypeError(f"hex color must be #rrggbb: {text!r}")
        try:
            vals = tuple(int(text[i:i + 2], 16) / 255.0 for i in (1, 3, 5))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad hex color {text!r}") from None
        return vals
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"color must be #rrggbb or r,g,b: {text!r}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad color component in {text!r}") from None
    if not all(0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError(f"color components must be in [0,1]: {text!r}")
    return vals


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected KEY=VALUE")
            key, val = line.split("=", 1)
            out[key.strip().lower().replace("-", "_")] = val.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, conf: dict[str, str]) -> None:
    """Turn config entries into parser defaults, honoring each option's type."""
    known = {}
    for action in parser._actions:  # argparse lacks a public action registry
        if action.dest in conf:
            raw = conf[action.dest]
            if isinstance(action, (argparse._StoreTrueAction,
                                   argparse._StoreFalseAction)):
                known[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                known[action.dest] = action.type(raw)
            else:
                known[action.dest] = raw
    parser.set_defaults(**known)


def _read_model(path: str):
    with open(path, "rb") as f:
        return cg.load_any_model(f.read())


def _materialize(model, style, blend_pair, alpha, need_model=True):
    """Resolve --style/--blend against the loaded model's kind."""
    if isinstance(model, GlutModel):
        if style is not None or blend_pair is not None:
            raise ModelKindError(0, "a styled or blended request")
        return model
    if blend_pair is not None:
        return cg.blend(model, blend_pair[0], blend_pair[1], alpha)
    if style is not None:
        return cg.materialize_style(model, style)
    if need_model:
        raise ModelKindError(
            1 if model.mode == cg.MODE_FULL else 2,
            "a direct application; pass --style or --blend")
    return model


# --- subcommands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg_kwargs = dict(epochs=args.epochs, batch_size=args.batch_size,
                      base_lr=args.lr, seed=args.seed, train_q=args.train_q,
                      holdout_size=args.holdout_size)
    targets = []
    if args.cube:
        for path in args.cube:
            with open(path, encoding="utf-8") as f:
                targets.append(parse_cube(f.read()))
    if args.pairs:
        src = read_image(args.pairs[0]).reshape(-1, 3)
        dst = read_image(args.pairs[1]).reshape(-1, 3)
        if src.shape != dst.shape:
            raise ValueError("--pairs images must have the same pixel count")
        targets.append(ColorPairSet(inputs=src, targets=dst))
    if not targets:
        raise ValueError("nothing to fit: pass --cube and/or --pairs")

    if len(targets) == 1:
        cfg = TrainConfig(**{k: v for k, v in cfg_kwargs.items() if v is not None})
        model, records = fit_glut(targets[0], n=args.gaussians, cfg=cfg,
                                  log_path=args.log)
        blob = serialize(model)
    else:
        merged = {k: v for k, v in cfg_kwargs.items() if v is not None}
        cfg = cg.default_cglut_config(**merged)
        h = {"small": 64, "large": 128}[args.size]
        model, records = cg.fit_cglut(targets, n=args.gaussians, cfg=cfg,
                                      mode=args.mode, h=h, log_path=args.log)
        blob = cg.serialize_cglut(model)

    with open(args.out, "wb") as f:
        f.write(blob)
    final = records[-1]
    if args.json:
        print(json.dumps({"out": args.out, "bytes": len(blob), **final}))
    else:
        print(f"wrote {args.out} ({len(blob)} bytes); final holdout "
              f"PSNR {final['holdout_psnr']:.2f} dB")
    return EXIT_OK


def cmd_apply(args) -> int:
    model = _materialize(_read_model(args.model), args.style, args.blend,
                         args.alpha)
    img = read_image(args.input)
    out = apply_to_image(model, img, threads=args.threads,
                         keep_fraction=args.keep_fraction)
    write_image(args.output, out, bit_depth=args.bit_depth)
    return EXIT_OK


def cmd_bake(args) -> int:
    model = _materialize(_read_model(args.model), args.style, args.blend,
                         args.alpha)
    cube = bake_to_cube(model, args.size)
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(write_cube(cube))
    return EXIT_OK


def cmd_edit(args) -> int:
    model = _read_model(args.model)
    if not isinstance(model, GlutModel):
        raise ModelKindError(1 if model.mode == cg.MODE_FULL else 2,
                             "an editable single-style model")
    con = ed.EditConstraint(args.cin, args.cout, k=args.k,
                            strength=args.strength)
    before = ed.residual(model, con.c_in, con.c_out)
    edited, record = ed.apply_edit(model, con)
    after = ed.residual(edited, con.c_in, con.c_out)
    with open(args.out, "wb") as f:
        f.write(serialize(edited))
    if args.journal:
        with open(args.journal, "a", encoding="utf-8") as f:
            f.write(ed.record_to_json(record) + "\n")
    payload = {
        "residual_before": [float(v) for v in before],
        "residual_after": [float(v) for v in after],
        "m": record.m,
        "touched": record.touched.tolist(),
        "out": args.out,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print(f"|residual| {float(np.linalg.norm(before)):.6f} -> "
              f"{float(np.linalg.norm(after)):.6f} (m={record.m:.4f}, "
              f"touched {record.touched.tolist()})")
    return EXIT_OK


def cmd_eval(args) -> int:
    import time

    from . import color as col
    from .glut_core import evaluate_sparse

    model = _materialize(_read_model(args.model), args.style, args.blend,
                         args.alpha)
    with open(args.cube, encoding="utf-8") as f:
        ref = parse_cube(f.read())
    rng = np.random.default_rng(args.seed)
    probes = sample_complement(rng, args.samples, args.train_q)
    targets = np.clip(trilinear_sample(ref, probes), 0.0, 1.0)
    t0 = time.perf_counter()
    pred = evaluate_sparse(model, probes, args.keep_fraction)
    lab_p = col.srgb_to_lab(pred)
    lab_t = col.srgb_to_lab(targets)
    report = eb.EvalReport(
        psnr_db=col.psnr(pred, targets),
        delta_e76=float(np.mean(col.delta_e76(lab_p, lab_t))),
        delta_e00=float(np.mean(col.delta_e00(lab_p, lab_t))),
        sample_count=int(probes.shape[0]),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    print(json.dumps(report.to_dict()) if args.json else report.to_text())
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _materialize(_read_model(args.model), args.style, args.blend,
                         args.alpha)
    resolution = args.resolution
    if "x" in resolution and resolution not in eb.RESOLUTIONS:
        w, h = resolution.split("x", 1)
        resolution = (positive_int(w), positive_int(h))
    report = eb.throughput_bench(model, resolution, threads=args.threads,
                                 keep_fraction=args.keep_fraction,
                                 runs=args.runs)
    flops = eb.flops_per_pixel(model.n, args.keep_fraction)
    if args.json:
        print(json.dumps({**report.to_dict(), "flops_per_pixel": flops}))
    else:
        print(report.to_text() + f" | {flops} flops/px")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .edit_service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port,
                log_level="warning")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_style_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--style", type=int, default=None,
                   help="style index for conditional models")
    p.add_argument("--blend", type=int, nargs=2, metavar=("L1", "L2"),
                   default=None, help="blend two styles of a conditional model")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="blend position in [0,1] (with --blend)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glut3d",
        description="Continuous color LUTs as mixtures of 3D Gaussians.",
        epilog="exit codes: 0 ok, 2 usage, 3 malformed file, 4 I/O, "
               "5 divergence, 6 model-kind mismatch")
    parser.add_argument("--config", default=None,
                        help="KEY=VALUE defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to .cube targets or image pairs")
    p.add_argument("--cube", action="append", default=[],
                   help=".cube target; repeat for a multi-style fit")
    p.add_argument("--pairs", nargs=2, metavar=("IN", "OUT"), default=None,
                   help="source/graded image pair as explicit color pairs")
    p.add_argument("-n", "--gaussians", type=positive_int, default=32)
    p.add_argument("--epochs", type=positive_int, default=None)
    p.add_argument("--batch-size", type=positive_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-q", type=positive_int, default=None,
                   help="training sublattice resolution per axis")
    p.add_argument("--holdout-size", type=positive_int, default=None)
    p.add_argument("--mode", choices=(cg.MODE_FULL, cg.MODE_SHARED),
                   default=cg.MODE_FULL, help="conditional geometry mode")
    p.add_argument("--size", choices=("small", "large"), default="small",
                   help="conditional generator width (H=64 or H=128)")
    p.add_argument("--log", default=None, help="write per-epoch metrics JSONL")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="apply a model to an image")
    p.add_argument("--model", required=True)
    _add_style_flags(p)
    p.add_argument("--threads", type=positive_int, default=1)
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8,
                   help="output PNG depth")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("bake", help="bake a model to a lattice .cube file")
    p.add_argument("--model", required=True)
    _add_style_flags(p)
    p.add_argument("--size", type=positive_int, default=33)
    p.add_argument("output")
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("edit", help="nudge one color correspondence")
    p.add_argument("--model", required=True)
    p.add_argument("--cin", type=parse_color, required=True,
                   help="source color (#rrggbb or r,g,b)")
    p.add_argument("--cout", type=parse_color, required=True,
                   help="requested output color")
    p.add_argument("-k", type=positive_int, default=4,
                   help="primitives to touch")
    p.add_argument("-s", "--strength", type=float, default=1.0)
    p.add_argument("--journal", default=None,
                   help="append the edit record to this JSONL file")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="score a model against a reference .cube")
    p.add_argument("--model", required=True)
    _add_style_flags(p)
    p.add_argument("--cube", required=True, help="reference .cube")
    p.add_argument("--samples", type=positive_int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-q", type=positive_int, default=128,
                   help="probe off this sublattice (holdout convention)")
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure frames/second on synthetic frames")
    p.add_argument("--model", required=True)
    _add_style_flags(p)
    p.add_argument("--resolution", default="512",
                   help="512 | hd | 4k | WxH")
    p.add_argument("--threads", type=positive_int, default=1)
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--runs", type=positive_int, default=20)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the interactive editing service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8317)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    # config pre-pass: pull defaults in before the real parse
    if "--config" in argv:
        at = argv.index("--config")
        if at + 1 >= len(argv):
            parser.error("--config needs a path")
        try:
            conf = _load_config(argv[at + 1])
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for action in parser._subparsers._group_actions:
            if isinstance(action, argparse._SubParsersAction):
                for sp in action.choices.values():
                    try:
                        _apply_config(sp, conf)
                    except (ValueError, argparse.ArgumentTypeError) as exc:
                        print(f"error: bad config value: {exc}", file=sys.stderr)
                        return EXIT_USAGE

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CubeParseError as exc:
        print(f"error: malformed cube: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ModelKindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_KIND
    except ModelFormatError as exc:
        print(f"error: malformed model: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ImageIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
