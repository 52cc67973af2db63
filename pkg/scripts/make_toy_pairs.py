#!/usr/bin/env python
"""
Make Toy Pairs Script

Writes registered synthetic infrared/visible pairs as ir/<stem> and
vis/<stem> images, ready for ``amfusion train`` and ``amfusion eval``.
Run from the repository root with PYTHONPATH=. so ``src`` is importable.
"""

import argparse
import logging
from pathlib import Path

from src.amfusion.dataio import save_gray
from src.amfusion.log import setup_logging
from src.amfusion.synthetic import blur, make_pair

logger = logging.getLogger("make_toy_pairs")


def parse_arguments():
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description="Write synthetic IR/VIS pairs for toy training")
    parser.add_argument("--count", type=int, default=4, help="Number of pairs to generate")
    parser.add_argument("--side", type=int, default=64, help="Image side in pixels")
    parser.add_argument("--seed", type=int, default=0, help="Seed of the first pair; later pairs count up")
    parser.add_argument("--blobs", type=int, default=3, help="Warm blobs per infrared frame")
    parser.add_argument("--format", default="pgm", choices=["pgm", "png"], help="Image file format")
    parser.add_argument("--out", default="data/toy", help="Output directory (gets ir/ and vis/)")
    parser.add_argument("--complementary", action="store_true",
                        help="Also write a pair made of one visible frame blurred on opposite halves")
    return parser.parse_args()


def write_pair(out: Path, stem: str, ir, vis, suffix: str):
    save_gray(ir, out / "ir" / f"{stem}.{suffix}")
    save_gray(vis, out / "vis" / f"{stem}.{suffix}")


def main():
    """Generate and save the pairs."""
    args = parse_arguments()
    setup_logging()
    out = Path(args.out)

    for i in range(args.count):
        ir, vis = make_pair(side=args.side, seed=args.seed + i, blobs=args.blobs)
        write_pair(out, f"toy{i:03d}", ir, vis, args.format)
    logger.info("wrote pairs=%d side=%d out=%s", args.count, args.side, out)

    if args.complementary:
        _, sharp = make_pair(side=args.side, seed=args.seed + args.count)
        soft = blur(sharp)
        half = args.side // 2
        left, right = sharp.copy(), sharp.copy()
        left[:, half:] = soft[:, half:]
        right[:, :half] = soft[:, :half]
        write_pair(out, "complementary", left, right, args.format)
        logger.info("wrote complementary pair out=%s", out)

    print(f"Generated {args.count} pairs under {out}")


if __name__ == "__main__":
    main()
