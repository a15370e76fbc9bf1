"""Run the fig4 scenario with default settings and print the files written.

Usage: python scripts/run_fig4.py [--seed N] [--out DIR] [--workers N] [--config PATH]
"""
import sys

from rfiqkd.cli import main

if __name__ == "__main__":
    sys.exit(main(["fig4", "--out", "out/fig4", *sys.argv[1:]]))
