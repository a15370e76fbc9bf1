"""Run the finite-key scenario with default settings and print the files written.

Usage: python scripts/run_finite_key.py [--seed N] [--out DIR] [--workers N] [--config PATH]
"""
import sys

from rfiqkd.cli import main

if __name__ == "__main__":
    sys.exit(main(["finite-key", "--out", "out/finite_key", *sys.argv[1:]]))
