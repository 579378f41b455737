#!/usr/bin/env python
"""
Script to write a deterministic synthetic segmentation suite in the
convert-gt source layout, optionally converting it in the same run.

Usage:
    python scripts/build_synthetic_suite.py --out-dir OUT_DIR [--count COUNT] [--size SIZE] [--instances N] [--seed SEED] [--convert]
"""

import os
import sys
import argparse
import logging

# Add the parent directory to the path so we can import from the app
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config
from app.errors import PedError
from app.services.gt_convert import convert_dataset
from app.services.synthetic import SYNTHETIC_CATEGORIES, make_suite, write_suite

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)]
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Build a synthetic panoptic edge suite")
    parser.add_argument("--out-dir", required=True, help="Directory for the source rasters")
    parser.add_argument("--count", type=int, default=20, help="Number of scenes")
    parser.add_argument("--size", type=int, default=256, help="Square scene size in pixels")
    parser.add_argument("--instances", type=int, default=6, help="Instances per scene")
    parser.add_argument("--seed", type=int, default=config.SEED, help="Suite seed")
    parser.add_argument("--convert", action="store_true", help="Also convert into OUT_DIR/converted")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Logging level")
    args = parser.parse_args()

    logging.getLogger().setLevel(getattr(logging, args.log_level.upper(), logging.INFO))

    try:
        scenes = make_suite(args.count, args.seed, args.size, args.size, args.instances)
        write_suite(scenes, args.out_dir)
        if args.convert:
            out_root = os.path.join(args.out_dir, "converted")
            convert_dataset(args.out_dir, out_root, SYNTHETIC_CATEGORIES, config.BOUNDARY_RADIUS)
            logger.info(f"Converted suite written to {out_root}")
    except PedError as e:
        logger.error(f"Failed to build suite: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
