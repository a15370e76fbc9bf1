"""Hand motion, dual-beacon tracking loops and pointing-to-coupling map.

Hand tilt follows a mean-reverting (Ornstein-Uhlenbeck) process per axis
with occasional smoothed jerks and an optional slow sway, plus scripted
motion segments.  Each terminal runs its own loop: the PSD reports the
opposing beacon's angle (noisy, delayed), the controller clamps the target
to the mirror range and the mirror follows through a first-order lag.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

RECEIVER_FOV_DEG = 0.1
MIRROR_RANGE_DEG = 4.0
MAX_BIREFRINGENCE_QBER = 0.03


@dataclass(frozen=True)
class MotionSegment:
    """Linear ramp of the hand pose between ``start`` and ``end`` seconds (offsets in degrees)."""

    start: float
    end: float
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    axial: float = 0.0


@dataclass(frozen=True)
class HandMotionParams:
    mean_reversion: float = 2.0  # 1/s
    volatility: float = 0.06  # deg / sqrt(s)
    drift_amplitude: float = 0.2  # deg, slow sway
    drift_period: float = 6.0  # s
    jerk_rate: float = 0.4  # 1/s
    jerk_size: float = 0.12  # deg, per-axis std
    jerk_duration: float = 0.03  # s
    axial_volatility: float = 0.0  # deg / sqrt(s)
    segments: tuple[MotionSegment, ...] = ()
    dt: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mean_reversion < 0 or self.volatility < 0 or self.jerk_rate < 0 or self.jerk_size < 0:
            raise ValueError("rates and volatilities must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass
class HandTrace:
    t: np.ndarray
    tilt: np.ndarray  # (n, 2) degrees
    axial: np.ndarray  # (n,) physical degrees

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


def _ou(n, dt, kappa, sigma, drive, rng):
    """Exact OU recursion over ``n`` steps with an extra additive ``drive`` per step."""
    if kappa > 0:
        a = np.exp(-kappa * dt)
        step_sd = sigma * np.sqrt((1 - a * a) / (2 * kappa))
        x0 = rng.normal(0.0, sigma / np.sqrt(2 * kappa)) if sigma > 0 else 0.0
    else:
        a, step_sd, x0 = 1.0, sigma * np.sqrt(dt), 0.0
    u = rng.normal(0.0, 1.0, n) * step_sd + drive
    u[0] += x0
    return lfilter([1.0], [1.0, -a], u)


def simulate_hand_trace(duration: float, p: HandMotionParams) -> HandTrace:
    if duration <= 0:
        raise ValueError("duration must be > 0")
    n = int(round(duration / p.dt))
    t = np.arange(n) * p.dt
    rng = np.random.default_rng(np.random.SeedSequence([p.seed, 0x4A4D]))
    tilt = np.empty((n, 2))
    ramp = max(1, int(round(p.jerk_duration / p.dt)))
    for axis in range(2):
        drive = np.zeros(n)
        n_jerks = rng.poisson(p.jerk_rate * duration)
        for k0, size in zip(rng.integers(0, n, n_jerks), rng.normal(0.0, p.jerk_size, n_jerks)):
            drive[k0 : k0 + ramp] += size / ramp
        tilt[:, axis] = _ou(n, p.dt, p.mean_reversion, p.volatility, drive, rng)
        phase = rng.uniform(0, 2 * np.pi)
        if p.drift_amplitude and p.drift_period > 0:
            tilt[:, axis] += p.drift_amplitude * np.sin(2 * np.pi * t / p.drift_period + phase)
    axial = _ou(n, p.dt, p.mean_reversion, p.axial_volatility, np.zeros(n), rng) if p.axial_volatility else np.zeros(n)
    for seg in p.segments:
        frac = np.clip((t - seg.start) / max(seg.end - seg.start, p.dt), 0.0, 1.0)
        tilt[:, 0] += frac * seg.tilt_x
        tilt[:, 1] += frac * seg.tilt_y
        axial = axial + frac * seg.axial
    return HandTrace(t, tilt, axial)


def max_deviation(trace: HandTrace, window_s: float) -> np.ndarray:
    """Largest angular excursion from the window's starting pose, for every window start."""
    tilt = np.asarray(trace.tilt, dtype=float)
    n = len(tilt)
    if n == 0:
        raise ValueError("empty trace")
    w = int(round(window_s / trace.dt)) if n > 1 else 0
    if w >= n:
        raise ValueError("window must be shorter than the trace")
    starts = n - w
    best = np.zeros(starts)
    for k in range(1, w + 1):
        d = np.hypot(*(tilt[k : k + starts] - tilt[:starts]).T)
        np.maximum(best, d, out=best)
    return best


def ccdf_max_deviation(trace: HandTrace, window_s: float, angles=None):
    """Survival curve P(max deviation >= angle) over sliding windows.

    Returns ``(angles, ccdf)``; CCDF(0) is 1 by construction.
    """
    dev = np.sort(max_deviation(trace, window_s))
    if angles is None:
        angles = np.linspace(0.0, 0.5, 101)
    angles = np.asarray(angles, dtype=float)
    ccdf = 1.0 - np.searchsorted(dev, angles, side="left") / len(dev)
    return angles, ccdf


@dataclass(frozen=True)
class TrackingLoopConfig:
    period: float = 1e-3
    latency: float = 5e-3
    mirror_time_constant: float = 5e-3
    psd_noise: float = 0.01  # deg RMS per axis
    mirror_range: float = MIRROR_RANGE_DEG
    gain: float = 1.0
    rx_coupling: float = 0.5  # receiver line-of-sight change per degree of hand tilt
    lock_time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.period <= 0 or self.mirror_range <= 0:
            raise ValueError("period and mirror_range must be > 0")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")
        if self.latency < 0 or self.mirror_time_constant < 0 or self.psd_noise < 0:
            raise ValueError("latency, time constant and noise must be >= 0")


@dataclass
class SteeringTrace:
    t: np.ndarray
    tx_mirror: np.ndarray  # (n, 2)
    rx_mirror: np.ndarray  # (n, 2)
    pointing_error: np.ndarray  # (n, 2)
    axial: np.ndarray
    efficiency: np.ndarray
    locked: np.ndarray

    @property
    def error_magnitude(self) -> np.ndarray:
        return np.hypot(self.pointing_error[:, 0], self.pointing_error[:, 1])

    def window_efficiency(self, start: float, length: float) -> float:
        sel = (self.t >= start) & (self.t < start + length)
        if not sel.any():
            sel = np.argmin(np.abs(self.t - start))
        return float(np.mean(self.efficiency[sel]))

    COLUMNS = (
        "time_s",
        "tx_mirror_x_deg",
        "tx_mirror_y_deg",
        "rx_mirror_x_deg",
        "rx_mirror_y_deg",
        "pointing_error_deg",
        "axial_deg",
        "efficiency",
    )

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        err = self.error_magnitude
        for i in range(len(self.t)):
            w.writerow(
                [
                    f"{v:.10g}"
                    for v in (
                        self.t[i],
                        *self.tx_mirror[i],
                        *self.rx_mirror[i],
                        err[i],
                        self.axial[i],
                        self.efficiency[i],
                    )
                ]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def coupling_efficiency(pointing_error_deg, fov_deg: float = RECEIVER_FOV_DEG):
    """Gaussian acceptance whose FWHM equals the receiver field of view."""
    err = np.asarray(pointing_error_deg, dtype=float)
    if np.any(err < 0):
        raise ValueError("pointing error must be >= 0")
    out = np.exp(-4.0 * np.log(2.0) * (err / fov_deg) ** 2)
    return float(out) if out.ndim == 0 else out


def _loop(disturbance, cfg: TrackingLoopConfig, rng):
    n = len(disturbance)
    lag = int(round(cfg.latency / cfg.period))
    seen = np.vstack([np.repeat(disturbance[:1], lag, axis=0), disturbance])[:n] if lag else disturbance
    target = seen + rng.normal(0.0, cfg.psd_noise, seen.shape)
    target = np.clip(target, -cfg.mirror_range, cfg.mirror_range)
    g = cfg.gain
    command = lfilter([g], [1.0, -(1.0 - g)], target, axis=0)
    if cfg.mirror_time_constant > 0:
        alpha = 1.0 - np.exp(-cfg.period / cfg.mirror_time_constant)
        # first-order mirror, one-sample transport from command to motion
        mirror = lfilter([0.0, alpha], [1.0, -(1.0 - alpha)], command, axis=0)
    else:
        mirror = command
    return np.clip(mirror, -cfg.mirror_range, cfg.mirror_range)


def run_tracking(trace: HandTrace, cfg: TrackingLoopConfig) -> SteeringTrace:
    """Run transmitter and receiver loops over a hand trace sampled at ``cfg.period``."""
    if len(trace.t) > 1 and not np.isclose(trace.dt, cfg.period):
        raise ValueError("hand trace must be sampled at the loop period")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EAC]))
    d_tx = np.asarray(trace.tilt, dtype=float)
    d_rx = cfg.rx_coupling * d_tx
    locked = trace.t >= cfg.lock_time
    tx = _loop(d_tx, cfg, rng)
    rx = _loop(d_rx, cfg, rng)
    tx[~locked] = 0.0
    rx[~locked] = 0.0
    err = (d_tx - tx) + (d_rx - rx)
    eff = coupling_efficiency(np.hypot(err[:, 0], err[:, 1]))
    eff = np.where(locked, eff, 0.0)
    return SteeringTrace(trace.t.copy(), tx, rx, err, np.asarray(trace.axial, dtype=float).copy(), eff, locked)


def steering_birefringence(tx_mirror, rx_mirror=(0.0, 0.0), mirror_range: float = MIRROR_RANGE_DEG):
    """Residual retarder ``(retardance_deg, axis_azimuth_deg)`` left by the mirrors.

    Retardance grows quadratically with deflection and reaches the value that
    adds ``MAX_BIREFRINGENCE_QBER`` to the key-basis error when all four mirror
    angles sit at full range.
    """
    tx = np.asarray(tx_mirror, dtype=float)
    rx = np.asarray(rx_mirror, dtype=float)
    rho2 = (np.sum(tx**2, axis=-1) + np.sum(rx**2, axis=-1)) / (4.0 * mirror_range**2)
    rho2 = np.clip(rho2, 0.0, 1.0)
    delta_max = np.rad2deg(np.arccos(1.0 - 2.0 * MAX_BIREFRINGENCE_QBER))
    s = tx + rx
    azimuth = 2.0 * np.rad2deg(np.arctan2(s[..., 1], s[..., 0]))
    return delta_max * rho2, azimuth
