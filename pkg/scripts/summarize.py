"""Print headline numbers from scenario CSVs in an output tree.

Usage: python scripts/summarize.py [OUT_ROOT]
"""
import csv
import sys
from pathlib import Path

import numpy as np


def read(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def main(root="out"):
    root = Path(root)
    if (p := root / "fig4" / "fig4.csv").exists():
        rows = read(p)
        rfi = np.array([float(r["rfi_fraction"]) for r in rows])
        bb = np.array([float(r["bb84_fraction"]) for r in rows])
        print(f"fig4: RFI {rfi.min():.3f}..{rfi.max():.3f}, BB84 {bb.min():.3f}..{bb.max():.3f}")
    if (p := root / "fig5" / "fig5.csv").exists():
        rows = [r for r in read(p) if "insufficient_data" not in r["flags"]]
        rate = np.array([float(r["asymptotic_rate_bps"]) for r in rows])
        print(f"fig5: {len(rows)} locked samples, median rate {np.median(rate) / 1e3:.1f} kb/s")
    if (p := root / "finite_key" / "finite_key.csv").exists():
        rows = {r["run"]: r for r in read(p)}
        print(f"finite-key: mean {float(rows['mean']['secure_rate_bps']) / 1e3:.1f} kb/s, sd {float(rows['std']['secure_rate_bps']) / 1e3:.1f} kb/s")
    if (p := root / "steering" / "steering_trace.csv").exists():
        rows = read(p)
        err = np.array([float(r["pointing_error_deg"]) for r in rows])
        eff = np.array([float(r["efficiency"]) for r in rows])
        print(f"steering: {np.mean(err < 0.1):.3f} of steps within 0.1 deg, mean coupling {eff.mean():.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
