"""Polarization algebra on the Poincaré sphere.

States and measurement directions are plain numpy 3-vectors ``(s1, s2, s3)``.
Protocol bases map onto the sphere as

    X± -> ±s1   (linear H/V)
    Y± -> ±s2   (linear diagonal/anti-diagonal)
    Z± -> ±s3   (circular, the key basis)

A physical axial rotation of the transmitter by ``theta`` is a rotation of
the sphere by ``2 * theta`` about s3, so the Z basis is untouched by it.

Link handedness
---------------
The transmitter prepares its Y states mirrored with respect to the receiver's
Y detectors (``TX_STATE_VECTORS`` has Y± -> ∓s2).  On an ideal link this makes
the X/Y correlator block a reflection ``[[cos w, sin w], [sin w, -cos w]]``
rather than a rotation, which is the form under which all four branches of
the axial-angle estimator agree (see ``estimators.axial_branches``).  This is
the only place the convention is set.
"""
from __future__ import annotations

import numpy as np

S1 = np.array([1.0, 0.0, 0.0])
S2 = np.array([0.0, 1.0, 0.0])
S3 = np.array([0.0, 0.0, 1.0])

BASES = ("X", "Y", "Z")
STATE_LABELS = ("X+", "X-", "Y+", "Y-", "Z+", "Z-")

# receiver detector directions, indexed like STATE_LABELS
DETECTOR_VECTORS = np.array([S1, -S1, S2, -S2, S3, -S3])
# transmitter states; Y mirrored, see module docstring
TX_STATE_VECTORS = np.array([S1, -S1, -S2, S2, S3, -S3])

_NORM_TOL = 1e-9


def state_index(label: str) -> int:
    """Index of a state label such as ``"Z+"`` in the canonical ordering."""
    return STATE_LABELS.index(label)


def canonical_vector(label: str) -> np.ndarray:
    """Receiver-frame Poincaré vector for a protocol label (``"X+"`` etc.)."""
    return DETECTOR_VECTORS[state_index(label)].copy()


def poincare_vector(s1: float, s2: float, s3: float, pure: bool = True) -> np.ndarray:
    v = np.array([s1, s2, s3], dtype=float)
    n = np.linalg.norm(v)
    if pure and abs(n - 1.0) > _NORM_TOL:
        raise ValueError(f"pure state must have unit norm, got {n}")
    if n > 1.0 + _NORM_TOL:
        raise ValueError(f"Poincaré vector norm exceeds 1: {n}")
    return v


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    return (
        r.shape == (3, 3)
        and np.allclose(r @ r.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
    )


def rotation_about(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Right-handed rotation matrix about ``axis`` (Rodrigues formula)."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * kx + (1.0 - np.cos(angle_rad)) * (kx @ kx)


def axial_rotation(theta_physical: float) -> np.ndarray:
    """Poincaré rotation for a physical axial rotation given in degrees.

    The sphere turns by twice the physical angle about s3.
    """
    w = 2.0 * np.deg2rad(theta_physical)
    c, s = np.cos(w), np.sin(w)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def birefringence_rotation(retardance: float, axis: np.ndarray) -> np.ndarray:
    """Retarder acting as a rotation by ``retardance`` degrees about an equatorial axis."""
    axis = np.asarray(axis, dtype=float)
    if abs(axis[2]) > _NORM_TOL:
        raise ValueError("birefringence axis must lie in the equatorial plane (s3 = 0)")
    if abs(np.linalg.norm(axis) - 1.0) > _NORM_TOL:
        raise ValueError("birefringence axis must be a unit vector")
    return rotation_about(axis, np.deg2rad(retardance))


def equatorial_axis(azimuth_deg: float) -> np.ndarray:
    a = np.deg2rad(azimuth_deg)
    return np.array([np.cos(a), np.sin(a), 0.0])


def detection_probability(prep, meas, channel=None) -> float | np.ndarray:
    """Born-rule click probability ``(1 + (R prep) . meas) / 2``.

    ``prep`` and ``meas`` may carry leading batch dimensions.
    """
    prep = np.asarray(prep, dtype=float)
    if channel is not None:
        prep = prep @ np.asarray(channel, dtype=float).T
    p = 0.5 * (1.0 + np.sum(prep * np.asarray(meas, dtype=float), axis=-1))
    return np.clip(p, 0.0, 1.0)


def binary_entropy(p):
    """Binary Shannon entropy in bits, with h(0) = h(1) = 0.

    Accepts scalars or arrays.  Values outside [0, 1] raise ``ValueError``.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
        raise ValueError(f"binary_entropy needs 0 <= p <= 1, got {p!r}")
    arr = np.clip(arr, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -arr * np.log2(arr) - (1.0 - arr) * np.log2(1.0 - arr)
    out = np.where((arr == 0.0) | (arr == 1.0), 0.0, out)
    return float(out) if out.ndim == 0 else out
