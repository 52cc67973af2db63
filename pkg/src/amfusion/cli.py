"""
Command-line interface.

Usage::

    python -m src.amfusion train --config configs/toy.yaml --ir-dir data/ir --vis-dir data/vis --out model.amfw
    python -m src.amfusion fuse --model model.amfw --ir a.png --vis b.png --strategy l1 --out fused.png
    python -m src.amfusion eval --ir-dir data/ir --vis-dir data/vis --fused-dir out/ --out report.csv
    python -m src.amfusion rank --reports a.csv,b.csv --names A,B --out table.csv
    python -m src.amfusion gradcheck --seed 0

Failures print ``<category>: <message>`` on stderr and exit with the
category's code (config 2, io 3, shape 4, numeric 5).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from src.amfusion import __version__
from src.amfusion.config import KEYS, build_train_config, load_config_file, resolve
from src.amfusion.dataio import crop_center, discover_pairs, load_gray, load_pair, preprocess, save_gray, to_tensor
from src.amfusion.errors import EXIT_CODES, AmfusionError, ConfigError, DataIOError, NumericError, ShapeError
from src.amfusion.fusion import FusionKind, parse_strategy
from src.amfusion.gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, run_suite
from src.amfusion.log import setup_logging
from src.amfusion.metrics import (
    evaluate_pairs,
    format_ranking,
    read_report_summary,
    write_ranking_csv,
    write_report_csv,
)
from src.amfusion.nn.blocks import autoencode, fuse_forward
from src.amfusion.nn.weights import load_weights, save_weights
from src.amfusion.training import train, write_trace_csv

logger = logging.getLogger(__name__)


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _load_input(path: str, side: Optional[int]):
    img = load_gray(path)
    return preprocess(img, side) if side else to_tensor(img)


def cmd_train(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {name: getattr(args, name) for name in KEYS}
    cfg = build_train_config(resolve(file_values, overrides))
    pairs = [load_pair(stem, ir, vis, cfg.arch.image_side) for stem, ir, vis in discover_pairs(args.ir_dir, args.vis_dir)]
    if not pairs:
        raise DataIOError(f"no matching image pairs in {args.ir_dir} and {args.vis_dir}")
    checkpoint_dir = args.checkpoint_dir or str(Path(args.out).parent)
    result = train(pairs, cfg, checkpoint_dir=checkpoint_dir)
    save_weights(result.params, args.out)
    if args.trace:
        write_trace_csv(result.trace, args.trace)
    print(f"trained {len(result.trace)} steps: L_total {result.trace[0].total:.6f} -> {result.trace[-1].total:.6f}")
    return 0


def cmd_fuse(args) -> int:
    params = load_weights(args.model, use_attention=not args.no_attention)
    ir = _load_input(args.ir, args.side)
    vis = _load_input(args.vis, args.side)
    if ir.shape != vis.shape:
        raise ShapeError(f"IR {ir.shape[2:]} and VIS {vis.shape[2:]} differ in size")
    fused = fuse_forward(ir, vis, params, parse_strategy(args.strategy))
    save_gray(fused, args.out)
    logger.info("fused ir=%s vis=%s strategy=%s out=%s", args.ir, args.vis, args.strategy, args.out)
    return 0


def cmd_reconstruct(args) -> int:
    params = load_weights(args.model, use_attention=not args.no_attention)
    out = autoencode(_load_input(args.image, args.side), params, mode="eval")
    save_gray(out, args.out)
    return 0


def _find_fused(fused_dir: Path, stem: str) -> Optional[Path]:
    for suffix in (".png", ".pgm"):
        candidate = fused_dir / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def cmd_eval(args) -> int:
    fused_dir = Path(args.fused_dir)
    if not fused_dir.is_dir():
        raise DataIOError(f"not a directory: {fused_dir}")
    triples = []
    for stem, ir_path, vis_path in discover_pairs(args.ir_dir, args.vis_dir):
        fused_path = _find_fused(fused_dir, stem)
        if fused_path is None:
            logger.warning("no fused image for pair %s in %s", stem, fused_dir)
            continue
        fused = load_gray(fused_path)
        h, w = fused.shape
        triples.append((stem, crop_center(load_gray(ir_path), h, w), crop_center(load_gray(vis_path), h, w), fused))
    if not triples:
        raise DataIOError(f"no pairs with fused outputs under {fused_dir}")
    report = evaluate_pairs(triples, threads=args.threads)
    write_report_csv(report, args.out)
    print(f"evaluated {len(report)} pairs -> {args.out}")
    return 0


def cmd_rank(args) -> int:
    reports = _split_list(args.reports)
    names = _split_list(args.names) if args.names else [Path(p).stem for p in reports]
    if len(names) != len(reports):
        raise ConfigError(f"{len(reports)} reports but {len(names)} names")
    if len(set(names)) != len(names):
        raise ConfigError("method names must be unique")
    table = {name: read_report_summary(path) for name, path in zip(names, reports)}
    write_ranking_csv(table, args.out)
    sys.stdout.write(format_ranking(table))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    results = run_suite(seeds, step=args.step, tolerance=args.tolerance)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name.ljust(width)}  {r.worst:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amfusion", description="Infrared/visible image fusion toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="logging level (default: LOG_LEVEL env or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the autoencoder on IR/VIS pairs")
    p.add_argument("--config", help="flat key=value file or YAML profile")
    p.add_argument("--ir-dir", required=True, help="directory of infrared images")
    p.add_argument("--vis-dir", required=True, help="directory of visible images")
    p.add_argument("--out", required=True, help="output AMFW weight file")
    p.add_argument("--trace", help="write the per-step loss trace CSV here")
    p.add_argument("--checkpoint-dir", help="directory for periodic checkpoints (default: next to --out)")
    for name, key in KEYS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE",
                       help=f"{key.help} (default {key.default})")
    p.set_defaults(handler=cmd_train)

    strategies = [k.value for k in FusionKind]
    p = sub.add_parser("fuse", help="fuse one IR/VIS pair with a trained model")
    p.add_argument("--model", required=True, help="AMFW weight file")
    p.add_argument("--ir", required=True, help="infrared image (PGM or PNG)")
    p.add_argument("--vis", required=True, help="visible image (PGM or PNG)")
    p.add_argument("--strategy", choices=strategies, default=FusionKind.L1_NORM.value, help="feature fusion rule")
    p.add_argument("--out", required=True, help="output image (.pgm or .png)")
    p.add_argument("--side", type=int, default=None, help="center-crop inputs to this side first")
    p.add_argument("--no-attention", action="store_true", help="model was trained without the attention block")
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("reconstruct", help="autoencode a single image")
    p.add_argument("--model", required=True, help="AMFW weight file")
    p.add_argument("--image", required=True, help="input image (PGM or PNG)")
    p.add_argument("--out", required=True, help="output image (.pgm or .png)")
    p.add_argument("--side", type=int, default=None, help="center-crop the input to this side first")
    p.add_argument("--no-attention", action="store_true", help="model was trained without the attention block")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("eval", help="compute the nine fusion metrics for a directory of fused images")
    p.add_argument("--ir-dir", required=True, help="directory of infrared images")
    p.add_argument("--vis-dir", required=True, help="directory of visible images")
    p.add_argument("--fused-dir", required=True, help="directory of fused images named by pair stem")
    p.add_argument("--out", required=True, help="output report CSV")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: AMFUSE_THREADS)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("rank", help="normalized evaluation index over several reports")
    p.add_argument("--reports", required=True, help="comma-separated report CSVs")
    p.add_argument("--names", default=None, help="comma-separated method names (default: report file stems)")
    p.add_argument("--out", required=True, help="output ranking CSV")
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--step", type=float, default=DEFAULT_STEP, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="maximum relative error")
    p.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except AmfusionError as exc:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
