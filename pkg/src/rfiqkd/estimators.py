"""Correlators, marginals, key-basis error rate and axial angle from a CountMatrix."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .linksim import CountMatrix
from .polarization import BASES

DEFAULT_MIN_COUNTS = 500
# receiver module sits rotated by 45 degrees, which offsets every branch
RECEIVER_OFFSET_DEG = 45.0


def _counts(m) -> np.ndarray:
    return np.asarray(m.counts if isinstance(m, CountMatrix) else m, dtype=float)


@dataclass(frozen=True)
class CorrelatorSet:
    """Nine correlators ``C[A][B]`` (A prepared, B detected) with counts and std devs.

    Entries whose four-cell total is zero are NaN and flagged in ``defined``.
    """

    values: np.ndarray
    counts: np.ndarray
    deltas: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.counts > 0

    def c(self, prep: str, det: str) -> float:
        return float(self.values[BASES.index(prep), BASES.index(det)])

    def n(self, prep: str, det: str) -> float:
        return float(self.counts[BASES.index(prep), BASES.index(det)])

    def delta(self, prep: str, det: str) -> float:
        return float(self.deltas[BASES.index(prep), BASES.index(det)])


def correlators(m) -> CorrelatorSet:
    q = _counts(m)
    values = np.full((3, 3), np.nan)
    counts = np.zeros((3, 3))
    deltas = np.full((3, 3), np.nan)
    for a in range(3):
        for b in range(3):
            blk = q[2 * a : 2 * a + 2, 2 * b : 2 * b + 2]
            n = blk.sum()
            counts[a, b] = n
            if n > 0:
                c = (blk[0, 0] + blk[1, 1] - blk[0, 1] - blk[1, 0]) / n
                values[a, b] = c
                deltas[a, b] = np.sqrt(max(0.0, 1.0 - c * c) / n)
    return CorrelatorSet(values, counts, deltas)


@dataclass(frozen=True)
class MarginalSet:
    """Empirical preparation and detection frequencies among all detections."""

    prep: np.ndarray
    det: np.ndarray
    prep_delta: np.ndarray
    det_delta: np.ndarray
    total: float


def marginals(m) -> MarginalSet:
    q = _counts(m)
    total = q.sum()
    if total <= 0:
        raise ValueError("no detections: marginals undefined")
    prep = q.sum(axis=1) / total
    det = q.sum(axis=0) / total
    return MarginalSet(
        prep,
        det,
        np.sqrt(prep * (1 - prep) / total),
        np.sqrt(det * (1 - det) / total),
        total,
    )


def zz_error_rate(m) -> tuple[float, float]:
    """Key-basis QBER and its standard deviation."""
    q = _counts(m)[4:6, 4:6]
    n = q.sum()
    if n <= 0:
        raise ValueError("no Z-prepared, Z-detected events: error rate undefined")
    e = (q[0, 1] + q[1, 0]) / n
    return float(e), float(np.sqrt(e * (1 - e) / n))


def transmission(m: CountMatrix, mean_photon_number: float) -> float:
    """Detected photons divided by emitted photons (mu times pulses)."""
    return float(m.counts.sum() / (mean_photon_number * m.emitted.sum()))


def wrap_deg(a):
    """Map angles to (-180, 180]."""
    out = -((-np.asarray(a, dtype=float) + 180.0) % 360.0 - 180.0)
    return float(out) if np.ndim(out) == 0 else out


def axial_branches(c: CorrelatorSet) -> np.ndarray:
    """The four single-combination estimates of the axial angle, in degrees."""
    xx, xy, yx, yy = c.c("X", "X"), c.c("X", "Y"), c.c("Y", "X"), c.c("Y", "Y")
    d = np.rad2deg
    return wrap_deg(
        np.array(
            [
                d(np.arctan2(xy, xx)) + RECEIVER_OFFSET_DEG,
                d(np.arctan2(yx, xx)) + RECEIVER_OFFSET_DEG,
                -d(np.arctan2(yx, yy)) - 180.0 + RECEIVER_OFFSET_DEG,
                -d(np.arctan2(xy, yy)) - 180.0 + RECEIVER_OFFSET_DEG,
            ]
        )
    )


def circular_median(angles_deg) -> float:
    """Median of angles on the circle.

    Angles are unwrapped around their circular mean before taking an ordinary
    median, so clusters straddling +-180 are handled.
    """
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    centre = np.arctan2(np.sin(a).mean(), np.cos(a).mean())
    rel = np.angle(np.exp(1j * (a - centre)))
    return wrap_deg(np.rad2deg(centre + np.median(rel)))


def axial_angle(c: CorrelatorSet, min_counts: float = DEFAULT_MIN_COUNTS) -> float | None:
    """Estimated axial angle in Poincaré degrees, or ``None`` for insufficient data.

    On an ideal link rotated physically by ``theta`` the estimate is
    ``45 + 2 * theta`` (see :func:`expected_axial_angle`).
    """
    for pair in (("X", "X"), ("X", "Y"), ("Y", "X"), ("Y", "Y")):
        if not c.n(*pair) >= min_counts or not np.isfinite(c.c(*pair)):
            return None
    return circular_median(axial_branches(c))


def expected_axial_angle(theta_physical: float) -> float:
    """Estimator reading for a known physical axial rotation on an ideal link."""
    return wrap_deg(RECEIVER_OFFSET_DEG + 2.0 * theta_physical)


def physical_axial_angle(omega: float) -> float:
    """Invert :func:`expected_axial_angle`; result in (-90, 90] since a 180 degree turn is invisible."""
    return wrap_deg(omega - RECEIVER_OFFSET_DEG) / 2.0


BLOCK_COLUMNS = (
    ["timestamp_s"]
    + [f"C_{a}{b}" for a in BASES for b in BASES]
    + [f"dC_{a}{b}" for a in BASES for b in BASES]
    + ["E_ZZ", "omega_deg", "flags"]
)


def block_row(timestamp: float, m: CountMatrix, min_counts: float = DEFAULT_MIN_COUNTS) -> list:
    c = correlators(m)
    flags = []
    try:
        e = zz_error_rate(m)[0]
    except ValueError:
        e = float("nan")
        flags.append("no_zz")
    omega = axial_angle(c, min_counts)
    if omega is None:
        flags.append("insufficient_data")
    return (
        [timestamp]
        + list(c.values.ravel())
        + list(c.deltas.ravel())
        + [e, float("nan") if omega is None else omega, "|".join(flags)]
    )


def blocks_to_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BLOCK_COLUMNS)
    for row in rows:
        w.writerow([f"{x:.10g}" if isinstance(x, float) else x for x in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text

