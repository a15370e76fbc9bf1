"""Independent reference computations used by the tests."""
from __future__ import annotations

import numpy as np

from rfiqkd.polarization import binary_entropy
from rfiqkd.security import DeviceModel, ConstraintSet, model_probabilities


def ideal_instance(lambda1, lambda2, n_total, rng):
    """Multinomial 6x6 counts drawn from the ideal-direction, unit-efficiency model."""
    q = model_probabilities(DeviceModel.ideal(lambda1, lambda2))
    return rng.multinomial(n_total, q.ravel()).reshape(6, 6).astype(float)


def grid_min_usable_entropy(cs: ConstraintSet, resolution: float = 0.005) -> float:
    """Smallest 1 - h((1 - t)/2) over a (lambda1, lambda2) grid with ideal directions.

    Ideal directions with equal efficiencies give C = diag(t, t, tz) and
    uniform 1/6 marginals, so feasibility reduces to interval checks.
    """
    g = np.arange(0.0, 1.0 + resolution / 2, resolution)
    l1, l2 = np.meshgrid(g, g, indexing="ij")
    ok = l1 + l2 <= 1.0 + 1e-12
    t, tz = l1 - l2, l1 + l2
    lo, hi = cs.lower, cs.upper
    pred = np.zeros((9,) + l1.shape)
    pred[0], pred[4], pred[8] = t, t, tz
    for k in range(9):
        ok &= (pred[k] >= lo[k]) & (pred[k] <= hi[k])
    marg_ok = np.all((lo[9:] <= 1 / 6) & (1 / 6 <= hi[9:]))
    if not ok.any() or not marg_ok:
        return float("nan")
    s = 1.0 - binary_entropy(np.clip((1.0 - t[ok]) / 2.0, 0.0, 1.0))
    return float(s.min())


def poisson_multiphoton(mu: float, terms: int = 60) -> float:
    """P(n >= 2) / P(n >= 1) by direct summation."""
    from math import exp, factorial

    p = [exp(-mu) * mu**n / factorial(n) for n in range(terms)]
    return sum(p[2:]) / sum(p[1:])


def random_scenario(rng):
    """A random (source, channel, background) triple inside the simulator's domain."""
    from rfiqkd.linksim import BackgroundConfig, ChannelState, SourceConfig

    src = SourceConfig(
        mean_photon_number=float(rng.uniform(0.02, 0.5)),
        repetition_rate=float(rng.choice([1e8, 2.5e8, 5e8])),
        pattern_seed=int(rng.integers(0, 2**31)),
        power_imbalance=tuple(rng.uniform(0.8, 1.2, 6)),
    )
    ch = ChannelState(
        axial_angle=float(rng.uniform(0, 360)),
        birefringence_retardance=float(rng.uniform(0, 40)),
        birefringence_axis=float(rng.uniform(0, 360)),
        transmission=float(rng.uniform(0.001, 0.2)),
        duration=float(rng.uniform(0.005, 0.05)),
        intrinsic_error_rate=float(rng.uniform(0, 0.1)),
        linear_error_rate=float(rng.uniform(0, 0.1)),
    )
    bg = BackgroundConfig(*rng.uniform(0, 5e4, 3))
    return src, ch, bg


def max_cell_z(m, src, ch, bg) -> float:
    """Largest |observed - expected| / sqrt(expected) over the 36 cells.

    The expectation is conditioned on the emitted pattern of the block.
    """
    from rfiqkd.linksim import click_probabilities

    signal = np.asarray(m.emitted, dtype=float)[:, None] * click_probabilities(src, ch)
    share = np.asarray(m.emitted, dtype=float) / np.sum(m.emitted)
    expected = signal + share[:, None] * bg.total_rate * m.duration
    sd = np.sqrt(np.maximum(expected, 1.0))
    return float(np.max(np.abs(m.counts - expected) / sd))
