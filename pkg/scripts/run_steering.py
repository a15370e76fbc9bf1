"""Run the steering scenario with default settings and print the files written.

Usage: python scripts/run_steering.py [--seed N] [--out DIR] [--workers N] [--config PATH]
"""
import sys

from rfiqkd.cli import main

if __name__ == "__main__":
    sys.exit(main(["steering", "--out", "out/steering", *sys.argv[1:]]))
