"""Command-line front end: ``csvideo {encode,decode,info,psnr,sweep,noise,track,synth}``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 format/corruption error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from csvideo.evaluation import (noise_csv, noise_experiment, read_boxes, run_sweep, sequence_psnr,
                                success_rate, sweep_csv, track, write_boxes)
from csvideo.frames import FORMATS, FrameFormatError, load_sequence, save_sequence
from csvideo.intra import BitstreamError
from csvideo.pipeline import ContainerError, GopConfig, decode_sequence, parse_container, total_cr, write_container
from csvideo.tv import SolverParams

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(flag, lo=1, hi=None):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {text!r}") from None
        if v < lo or (hi is not None and v > hi):
            bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
            raise argparse.ArgumentTypeError(f"{flag} must be {bound}, got {v}")
        return v
    return conv


def _float_above(flag, lo, inclusive=False):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {text!r}") from None
        if not (v >= lo if inclusive else v > lo) or not np.isfinite(v):
            raise argparse.ArgumentTypeError(f"{flag} must be {'>=' if inclusive else '>'} {lo:g}, got {text}")
        return v
    return conv


def _list_of(conv, flag):
    def parse(text):
        items = [t for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError(f"{flag} expects a comma-separated list")
        return [conv(t.strip()) for t in items]
    return parse


def _box(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--box expects cx,cy,w,h, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"--box expects 4 values cx,cy,w,h, got {len(vals)}")
    return vals


def _add_input(p, name="input"):
    p.add_argument(name, help="PGM directory, .y4m file, or raw planar file")
    p.add_argument("--format", choices=FORMATS, help="input format (default: guessed from path)")
    p.add_argument("--width", type=_positive_int("--width", 8), help="raw input width")
    p.add_argument("--height", type=_positive_int("--height", 8), help="raw input height")
    p.add_argument("--frame-rate", type=_float_above("--frame-rate", 0), default=30.0)


def _add_codec(p):
    p.add_argument("--gop", type=_positive_int("--gop", 1, 255), default=5, help="frames per GOP (default 5)")
    p.add_argument("--cr-key", type=_float_above("--cr-key", 1), default=23.0,
                   help="key-frame target compression ratio (default 23)")
    p.add_argument("--cr-cs", type=_float_above("--cr-cs", 1, inclusive=True), default=50.0,
                   help="CS-frame sample-count ratio n/m (default 50; 1 = lossless diagnostic)")
    p.add_argument("--seed", type=_positive_int("--seed", 0, 2 ** 64 - 1), default=42)


def _add_solver(p):
    g = p.add_argument_group("solver")
    g.add_argument("--mu", type=_float_above("--mu", 0))
    g.add_argument("--beta", type=_float_above("--beta", 0))
    g.add_argument("--tol", type=_float_above("--tol", 0))
    g.add_argument("--max-outer", type=_positive_int("--max-outer"))
    g.add_argument("--max-inner", type=_positive_int("--max-inner"))
    g.add_argument("--max-refine", type=_positive_int("--max-refine", 0))
    g.add_argument("--anisotropic", action="store_true", help="anisotropic TV")
    p.add_argument("--workers", type=_positive_int("--workers"), default=1, help="parallel GOP decodes")


def _solver(args) -> SolverParams:
    defaults = SolverParams()
    return SolverParams(
        mu=args.mu or defaults.mu,
        beta=args.beta or defaults.beta,
        tol=args.tol or defaults.tol,
        max_outer=args.max_outer or defaults.max_outer,
        max_inner=args.max_inner or defaults.max_inner,
        max_refine=defaults.max_refine if args.max_refine is None else args.max_refine,
        isotropic=not args.anisotropic,
    )


def _load(args, path=None):
    return load_sequence(path or args.input, args.format, args.width, args.height, args.frame_rate)


def _out(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csvideo", description="Compressive-sensing surveillance video codec")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="sequence -> container")
    _add_input(p)
    _add_codec(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("decode", help="container -> sequence")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=FORMATS, help="output format (default: from output path)")
    _add_solver(p)

    p = sub.add_parser("info", help="print container header and compression ratios")
    p.add_argument("input")

    p = sub.add_parser("psnr", help="per-frame PSNR of two sequences as CSV")
    _add_input(p, "reference")
    p.add_argument("test")
    p.add_argument("-o", "--output")

    p = sub.add_parser("sweep", help="GOP size x ratio grid sweep as CSV")
    _add_input(p)
    p.add_argument("--gops", type=_list_of(_positive_int("--gops", 1, 255), "--gops"), default=[3, 5, 7])
    p.add_argument("--cr-keys", type=_list_of(_float_above("--cr-keys", 1), "--cr-keys"), default=[23.0])
    p.add_argument("--cr-cs", type=_list_of(_float_above("--cr-cs", 1, True), "--cr-cs"), default=[40.0, 60.0, 80.0])
    p.add_argument("--seed", type=_positive_int("--seed", 0, 2 ** 64 - 1), default=42)
    p.add_argument("--truth", help="ground-truth boxes file (frame_index,cx,cy,w,h)")
    p.add_argument("--threshold", type=_float_above("--threshold", 0), default=20.0)
    p.add_argument("-o", "--output")
    _add_solver(p)

    p = sub.add_parser("noise", help="noise-variance ladder -> PSNR and tracking SR as CSV")
    _add_input(p)
    p.add_argument("--variances", type=_list_of(_float_above("--variances", 0, True), "--variances"),
                   default=[0, 25, 100, 400, 900, 1600, 2500, 3600])
    p.add_argument("--truth")
    p.add_argument("--seed", type=_positive_int("--seed", 0), default=0)
    p.add_argument("--threshold", type=_float_above("--threshold", 0), default=20.0)
    p.add_argument("-o", "--output")

    p = sub.add_parser("track", help="track a box through a sequence")
    _add_input(p)
    p.add_argument("--box", type=_box, help="initial box cx,cy,w,h (default: first truth box)")
    p.add_argument("--truth")
    p.add_argument("--search-radius", type=_positive_int("--search-radius"), default=8)
    p.add_argument("--threshold", type=_float_above("--threshold", 0), default=20.0)
    p.add_argument("-o", "--output", help="write boxes here (default stdout)")

    p = sub.add_parser("synth", help="write the synthetic moving-square clip and its truth boxes")
    p.add_argument("output")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--width", type=_positive_int("--width", 32), default=176)
    p.add_argument("--height", type=_positive_int("--height", 32), default=144)
    p.add_argument("--frames", type=_positive_int("--frames"), default=48)
    p.add_argument("--seed", type=_positive_int("--seed", 0), default=0)
    p.add_argument("--boxes", help="truth boxes output path")
    return parser


def _cmd_encode(args):
    seq = _load(args)
    cfg = GopConfig(args.gop, args.cr_key, args.cr_cs, args.seed)
    buf = write_container(seq, cfg)
    Path(args.output).write_bytes(buf)
    logging.info("wrote %d frames, %d bytes", len(seq), len(buf))


def _cmd_decode(args):
    enc = parse_container(Path(args.input).read_bytes())
    seq, info = decode_sequence(enc, _solver(args), args.workers)
    save_sequence(seq, args.output, args.format)
    stalled = info.converged.count(False)
    if stalled:
        logging.warning("%d CS frame(s) hit the iteration cap", stalled)


def _cmd_info(args):
    enc = parse_container(Path(args.input).read_bytes())
    h = enc.header
    print(f"dimensions      {h.width}x{h.height}")
    print(f"frames          {h.frame_count} @ {h.frame_rate:g} fps")
    print(f"gop size        {h.gop_size}")
    print(f"cr key:cs       {h.cr_key:g}:{h.cr_cs:g}")
    print(f"measurements    m={h.m} of n={h.n}")
    print(f"seed            {h.seed}")
    print(f"nominal GOP CR  {total_cr(h.gop_size, h.cr_key, h.cr_cs):.2f}")
    print(f"nominal CR      {enc.nominal_cr:.2f}")
    print(f"achieved key CR {enc.key_cr():.2f}")
    print(f"realized CR     {enc.realized_cr():.2f}")


def _cmd_psnr(args):
    a = _load(args, args.reference)
    b = _load(args, args.test)
    lines = ["frame,psnr"] + [f"{i},{v:.4f}" for i, v in enumerate(sequence_psnr(a, b))]
    _out("\n".join(lines) + "\n", args.output)


def _cmd_sweep(args):
    seq = _load(args)
    truth = read_boxes(args.truth) if args.truth else None
    grid = list(itertools.product(args.gops, args.cr_keys, args.cr_cs))
    rows = run_sweep(seq, grid, _solver(args), truth, seed=args.seed, workers=args.workers,
                     sr_threshold=args.threshold)
    _out(sweep_csv(rows), args.output)


def _cmd_noise(args):
    seq = _load(args)
    truth = read_boxes(args.truth) if args.truth else None
    rows = noise_experiment(seq, args.variances, truth, args.seed, args.threshold)
    _out(noise_csv(rows), args.output)


def _cmd_track(args):
    seq = _load(args)
    truth = read_boxes(args.truth) if args.truth else None
    if args.box is None and truth is None:
        raise UsageError("track needs --box or --truth")
    boxes = track(seq, args.box or truth[0], args.search_radius)
    if args.output:
        write_boxes(boxes, args.output)
    else:
        for i, b in enumerate(boxes):
            print(i, *(f"{v:g}" for v in b), sep=",")
    if truth is not None:
        print(f"success rate {success_rate(boxes, truth, args.threshold):.1f}%", file=sys.stderr)


def _cmd_synth(args):
    from csvideo.synthetic import moving_square

    clip = moving_square(args.width, args.height, args.frames, seed=args.seed)
    save_sequence(clip.sequence, args.output, args.format)
    if args.boxes:
        write_boxes(clip.boxes, args.boxes)


COMMANDS = {
    "encode": _cmd_encode, "decode": _cmd_decode, "info": _cmd_info, "psnr": _cmd_psnr,
    "sweep": _cmd_sweep, "noise": _cmd_noise, "track": _cmd_track, "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"csvideo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="csvideo: %(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"csvideo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FrameFormatError, ContainerError, BitstreamError) as exc:
        print(f"csvideo: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"csvideo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"csvideo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
