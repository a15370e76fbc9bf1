"""Run the fig5 scenario with default settings and print the files written.

Usage: python scripts/run_fig5.py [--seed N] [--out DIR] [--workers N] [--config PATH]
"""
import sys

from rfiqkd.cli import main

if __name__ == "__main__":
    sys.exit(main(["fig5", "--out", "out/fig5", *sys.argv[1:]]))
