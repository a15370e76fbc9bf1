"""Faint-pulse source, free-space channel, background light and six-detector receiver.

Two backends produce a :class:`CountMatrix` with the same distribution:

``"aggregated"`` (default)
    multinomial/Poisson draws per (state, detector) cell;
``"per-pulse"``
    every pulse is drawn individually (slow, used to validate the former).

A block is cut into fixed slices of ``SLICE_PULSES`` pulses.  Slice ``k`` draws
from ``SeedSequence([seed, k])``, so the result does not depend on how many
workers process the slices.

Detections caused by background light or dark counts are attributed to
whichever state was being sent in that slot, exactly as a real receiver
would do, so ``counts`` holds *all* detections.  ``background`` records how
many of them per detector were background (known only to the simulator).
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polarization import (
    DETECTOR_VECTORS,
    STATE_LABELS,
    TX_STATE_VECTORS,
    axial_rotation,
    birefringence_rotation,
    equatorial_axis,
)

SLICE_PULSES = 1 << 22
_PER_PULSE_CHUNK = 1 << 20
BACKENDS = ("aggregated", "per-pulse")


@dataclass(frozen=True)
class SourceConfig:
    mean_photon_number: float = 0.07
    repetition_rate: float = 2.5e8
    pattern_seed: int = 0
    power_imbalance: tuple[float, ...] = (1.0,) * 6

    def __post_init__(self):
        if self.mean_photon_number <= 0:
            raise ValueError("mean_photon_number must be > 0")
        if self.repetition_rate <= 0:
            raise ValueError("repetition_rate must be > 0")
        if len(self.power_imbalance) != 6 or min(self.power_imbalance) <= 0:
            raise ValueError("power_imbalance needs 6 positive multipliers")

    @property
    def photon_rate(self) -> float:
        """Mean emitted photons per second."""
        return self.mean_photon_number * self.repetition_rate


@dataclass(frozen=True)
class ChannelState:
    """Static channel for one block.

    ``transmission`` is the end-to-end probability that an emitted photon is
    detected (coupling, filters and detector efficiency together).
    ``intrinsic_error_rate`` is the QBER of the key-basis receiver arm on an
    otherwise ideal link (residual ellipticity); ``linear_error_rate`` plays the
    same role for the X and Y arms.
    """

    axial_angle: float = 0.0
    birefringence_retardance: float = 0.0
    birefringence_axis: float = 0.0  # azimuth of the equatorial axis, Poincaré degrees
    transmission: float = 0.03
    duration: float = 0.5
    intrinsic_error_rate: float = 0.055
    linear_error_rate: float = 0.03

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError("transmission must lie in [0, 1]")
        for name in ("intrinsic_error_rate", "linear_error_rate"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5]")

    def rotation(self) -> np.ndarray:
        r = axial_rotation(self.axial_angle)
        if self.birefringence_retardance:
            b = birefringence_rotation(
                self.birefringence_retardance, equatorial_axis(self.birefringence_axis)
            )
            r = b @ r
        return r


@dataclass(frozen=True)
class BackgroundConfig:
    dark_rate: float = 370.0
    ambient_rate: float = 600.0
    beacon_rate: float = 570.0

    def __post_init__(self):
        if min(self.dark_rate, self.ambient_rate, self.beacon_rate) < 0:
            raise ValueError("background rates must be >= 0")

    @property
    def total_rate(self) -> float:
        """Background counts per second per detector."""
        return self.dark_rate + self.ambient_rate + self.beacon_rate


@dataclass
class CountMatrix:
    """Detections per (prepared state, detector) over ``duration`` seconds.

    Rows and columns follow ``STATE_LABELS``.  Arrays are integer for
    simulated data and float for analytic expectations.
    """

    counts: np.ndarray
    emitted: np.ndarray
    background: np.ndarray
    duration: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.emitted = np.asarray(self.emitted)
        self.background = np.asarray(self.background)
        if self.counts.shape != (6, 6) or self.emitted.shape != (6,) or self.background.shape != (6,):
            raise ValueError("CountMatrix needs a 6x6 counts array and 6-vectors")
        if (self.counts < 0).any() or (self.emitted < 0).any() or (self.background < 0).any():
            raise ValueError("counts must be non-negative")
        if np.issubdtype(self.counts.dtype, np.integer) and (self.counts.sum(axis=1) > self.emitted).any():
            raise ValueError("detections for a state exceed its emitted pulses")

    @property
    def total(self) -> float:
        return self.counts.sum()

    def cell(self, prep: str, det: str):
        return self.counts[STATE_LABELS.index(prep), STATE_LABELS.index(det)]

    def scaled(self, factor: float) -> "CountMatrix":
        return CountMatrix(
            self.counts * factor, self.emitted * factor, self.background * factor, self.duration * factor
        )

    def __add__(self, other: "CountMatrix") -> "CountMatrix":
        return CountMatrix(
            self.counts + other.counts,
            self.emitted + other.emitted,
            self.background + other.background,
            self.duration + other.duration,
        )

    def to_csv(self, path=None) -> str:
        """Serialize in the documented layout (see docs/file_formats.md)."""
        buf = io.StringIO()
        buf.write(f"# duration_s={self.duration!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "prep", "det", "count"])
        for i, a in enumerate(STATE_LABELS):
            for j, b in enumerate(STATE_LABELS):
                w.writerow(["signal", a, b, _fmt(self.counts[i, j])])
        for i, a in enumerate(STATE_LABELS):
            w.writerow(["emitted", a, "", _fmt(self.emitted[i])])
        for j, b in enumerate(STATE_LABELS):
            w.writerow(["background", "", b, _fmt(self.background[j])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "CountMatrix":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# duration_s="):
            raise ValueError("missing duration header line")
        duration = float(lines[0].split("=", 1)[1])
        counts = np.zeros((6, 6))
        emitted = np.zeros(6)
        background = np.zeros(6)
        rows = list(csv.DictReader(lines[1:]))
        if len(rows) != 48:
            raise ValueError(f"expected 48 data rows, got {len(rows)}")
        for row in rows:
            value = float(row["count"])
            if row["kind"] == "signal":
                counts[STATE_LABELS.index(row["prep"]), STATE_LABELS.index(row["det"])] = value
            elif row["kind"] == "emitted":
                emitted[STATE_LABELS.index(row["prep"])] = value
            elif row["kind"] == "background":
                background[STATE_LABELS.index(row["det"])] = value
            else:
                raise ValueError(f"unknown row kind {row['kind']!r}")
        if all(float(v).is_integer() for v in np.concatenate([counts.ravel(), emitted, background])):
            counts, emitted, background = counts.astype(np.int64), emitted.astype(np.int64), background.astype(np.int64)
        return cls(counts, emitted, background, duration)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) or float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def receiver_purity(ch: ChannelState) -> np.ndarray:
    """Contrast of each detector arm (1 = perfect polarizer)."""
    k_lin = 1.0 - 2.0 * ch.linear_error_rate
    k_z = 1.0 - 2.0 * ch.intrinsic_error_rate
    return np.array([k_lin, k_lin, k_lin, k_lin, k_z, k_z])


def click_probabilities(src: SourceConfig, ch: ChannelState) -> np.ndarray:
    """Per-pulse probability that a pulse in state A (row) clicks detector B (column).

    Linear in ``mu * eta`` as the receiver never sees more than one photon in
    this regime; each basis receives a third of the light.
    """
    out = TX_STATE_VECTORS @ ch.rotation().T
    born = 0.5 * (1.0 + receiver_purity(ch)[None, :] * (out @ DETECTOR_VECTORS.T))
    born = np.clip(born, 0.0, 1.0)
    p_detect = src.mean_photon_number * ch.transmission * np.asarray(src.power_imbalance)
    return p_detect[:, None] * born / 3.0


def expected_count_rates(src: SourceConfig, ch: ChannelState, bg: BackgroundConfig) -> CountMatrix:
    """Analytic expected counts per second (real-valued CountMatrix, duration 1 s)."""
    emitted = np.full(6, src.repetition_rate / 6.0)
    signal = emitted[:, None] * click_probabilities(src, ch)
    bg_rates = np.full(6, bg.total_rate)
    counts = signal + bg_rates[None, :] / 6.0
    return CountMatrix(counts, emitted, bg_rates, 1.0)


def _slices(n_pulses: int):
    k = 0
    start = 0
    while start < n_pulses:
        size = min(SLICE_PULSES, n_pulses - start)
        yield k, size
        k += 1
        start += size


def _simulate_slice(args):
    src, ch, bg, seed, index, n, backend = args
    rng_pattern = np.random.default_rng(np.random.SeedSequence([src.pattern_seed, index, 0]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    probs = click_probabilities(src, ch)
    t_slice = n / src.repetition_rate
    bg_counts = rng.poisson(bg.total_rate * t_slice, size=6)
    counts = np.zeros((6, 6), dtype=np.int64)
    if backend == "aggregated":
        emitted = rng_pattern.multinomial(n, np.full(6, 1.0 / 6.0))
        for a in range(6):
            p = np.append(probs[a], max(0.0, 1.0 - probs[a].sum()))
            counts[a] += rng.multinomial(emitted[a], p)[:6]
        for b in range(6):
            if bg_counts[b]:
                counts[:, b] += rng.multinomial(bg_counts[b], emitted / n)
    else:
        emitted = np.zeros(6, dtype=np.int64)
        cum = np.cumsum(probs, axis=1)
        done = 0
        bg_slots = [np.sort(rng.integers(0, n, size=c)) for c in bg_counts]
        while done < n:
            m = min(_PER_PULSE_CHUNK, n - done)
            states = rng_pattern.integers(0, 6, size=m)
            emitted += np.bincount(states, minlength=6)
            u = rng.random(m)
            det = (u[:, None] >= cum[states]).sum(axis=1)  # 6 means no click
            hit = det < 6
            np.add.at(counts, (states[hit], det[hit]), 1)
            for b in range(6):
                slots = bg_slots[b]
                sel = slots[(slots >= done) & (slots < done + m)] - done
                np.add.at(counts[:, b], states[sel], 1)
            done += m
    return counts, emitted, bg_counts


def simulate_block(
    src: SourceConfig,
    ch: ChannelState,
    bg: BackgroundConfig,
    seed: int,
    backend: str = "aggregated",
    workers: int = 1,
) -> CountMatrix:
    """Draw one block of detector counts.

    Deterministic for a given ``(seed, src.pattern_seed)`` regardless of
    ``workers``.
    """
    if ch.duration <= 0:
        raise ValueError("duration must be > 0")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    if backend == "aggregated" and src.mean_photon_number * ch.transmission * max(src.power_imbalance) > 1:
        raise ValueError("mu * eta exceeds 1; the aggregated backend needs a click probability")
    n_pulses = int(round(ch.duration * src.repetition_rate))
    if n_pulses < 1:
        raise ValueError("duration shorter than one pulse period")
    tasks = [(src, ch, bg, seed, k, n, backend) for k, n in _slices(n_pulses)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_slice, tasks))
    else:
        parts = [_simulate_slice(t) for t in tasks]
    counts = sum(p[0] for p in parts)
    emitted = sum(p[1] for p in parts)
    background = sum(p[2] for p in parts)
    return CountMatrix(counts, emitted, background, n_pulses / src.repetition_rate)


def multiphoton_fraction(mu: float) -> float:
    """P(n > 1 | n >= 1) for Poisson photon number of mean ``mu``.

    Equals ``mu / 2`` to first order; the exact value is returned.
    """
    if mu <= 0:
        raise ValueError("mean photon number must be > 0")
    # expm1 keeps precision for small mu
    p_nonvac = -np.expm1(-mu)
    p_multi = p_nonvac - mu * np.exp(-mu)
    return float(p_multi / p_nonvac)
