import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfiqkd.polarization import (
    DETECTOR_VECTORS,
    S1,
    S2,
    S3,
    STATE_LABELS,
    TX_STATE_VECTORS,
    axial_rotation,
    binary_entropy,
    birefringence_rotation,
    canonical_vector,
    detection_probability,
    equatorial_axis,
    is_rotation,
    poincare_vector,
    rotation_about,
)

angles = st.floats(-720.0, 720.0, allow_nan=False)


def test_binary_entropy_frozen_values():
    assert binary_entropy(0.06) == pytest.approx(0.327445, abs=1e-6)
    assert 1 - binary_entropy(0.06) == pytest.approx(0.672555, abs=1e-6)
    assert 1 - 2 * binary_entropy(0.06) == pytest.approx(0.345110, abs=1e-6)
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0


def test_binary_entropy_array_and_domain():
    out = binary_entropy(np.array([0.0, 0.11, 0.5]))
    assert out.shape == (3,)
    np.testing.assert_allclose(out, [0.0, 0.499916, 1.0], atol=1e-6)
    for bad in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            binary_entropy(bad)


@given(st.floats(0.0, 1.0))
def test_binary_entropy_symmetric_and_bounded(p):
    h = binary_entropy(p)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(binary_entropy(1.0 - p), abs=1e-12)


def test_canonical_vectors():
    assert np.array_equal(canonical_vector("X+"), S1)
    assert np.array_equal(canonical_vector("Y-"), -S2)
    assert np.array_equal(canonical_vector("Z-"), -S3)
    # transmitter Y states are mirrored, everything else agrees
    assert np.array_equal(TX_STATE_VECTORS[[0, 1, 4, 5]], DETECTOR_VECTORS[[0, 1, 4, 5]])
    assert np.array_equal(TX_STATE_VECTORS[2:4], -DETECTOR_VECTORS[2:4])
    assert len(STATE_LABELS) == 6


def test_poincare_vector_validation():
    assert np.allclose(poincare_vector(0.0, 0.6, 0.8), [0.0, 0.6, 0.8])
    assert np.allclose(poincare_vector(0.1, 0.0, 0.0, pure=False), [0.1, 0.0, 0.0])
    with pytest.raises(ValueError):
        poincare_vector(0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        poincare_vector(1.0, 1.0, 0.0, pure=False)


def test_axial_rotation_doubles_angle():
    r = axial_rotation(22.5)
    np.testing.assert_allclose(r @ S1, [np.sqrt(0.5), np.sqrt(0.5), 0.0], atol=1e-12)
    np.testing.assert_allclose(r @ S3, S3)
    np.testing.assert_allclose(axial_rotation(90.0) @ S1, -S1, atol=1e-12)
    np.testing.assert_allclose(axial_rotation(180.0), np.eye(3), atol=1e-12)


@given(angles, angles)
def test_axial_rotations_compose(a, b):
    np.testing.assert_allclose(axial_rotation(a) @ axial_rotation(b), axial_rotation(a + b), atol=1e-9)
    assert is_rotation(axial_rotation(a))


@settings(max_examples=50)
@given(st.floats(0.0, 180.0), st.floats(0.0, 360.0))
def test_birefringence_is_rotation_about_equator(ret, az):
    axis = equatorial_axis(az)
    r = birefringence_rotation(ret, axis)
    assert is_rotation(r)
    np.testing.assert_allclose(r @ axis, axis, atol=1e-12)
    # key-basis agreement drops to cos(retardance)
    assert (r @ S3) @ S3 == pytest.approx(np.cos(np.deg2rad(ret)), abs=1e-12)


def test_birefringence_axis_validation():
    with pytest.raises(ValueError):
        birefringence_rotation(10.0, np.array([0.0, 0.6, 0.8]))
    with pytest.raises(ValueError):
        birefringence_rotation(10.0, np.array([2.0, 0.0, 0.0]))


def test_detection_probability_born_rule():
    assert detection_probability(S1, S1) == 1.0
    assert detection_probability(S1, -S1) == 0.0
    assert detection_probability(S1, S2) == pytest.approx(0.5)
    assert detection_probability(S1, S1, axial_rotation(22.5)) == pytest.approx(0.5 * (1 + np.sqrt(0.5)))
    batch = detection_probability(DETECTOR_VECTORS[:, None, :], DETECTOR_VECTORS[None, :, :])
    assert batch.shape == (6, 6)
    np.testing.assert_allclose(batch.sum(axis=1), 3.0)


@settings(max_examples=50)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * np.pi))
def test_rotation_about_preserves_inner_products(x, y, z, ang):
    axis = np.array([x, y, z])
    if np.linalg.norm(axis) < 1e-3:
        axis = S3
    r = rotation_about(axis, ang)
    assert is_rotation(r)
    u, v = DETECTOR_VECTORS[0], DETECTOR_VECTORS[2]
    assert (r @ u) @ (r @ v) == pytest.approx(u @ v, abs=1e-12)
