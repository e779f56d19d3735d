import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from poisonlink import modem


def test_label_zero_maps_to_first_quadrant():
    np.testing.assert_allclose(modem.modulate(0), (1 + 1j) / np.sqrt(2))


def test_unit_modulus_and_bijection():
    pts = modem.modulate(np.arange(4))
    np.testing.assert_allclose(np.abs(pts), 1.0)
    np.testing.assert_array_equal(modem.demodulate_hard(pts), np.arange(4))


def test_modulate_rejects_out_of_range():
    with pytest.raises(ValueError):
        modem.modulate([0, 4])


def test_joint_positional_encoding():
    assert modem.joint_of([0, 0, 0, 0]) == 0
    assert modem.joint_of([1, 0, 0, 0]) == 1
    assert modem.joint_of([0, 1, 0, 0]) == 4


def test_joint_round_trip_exhaustive():
    tuples = np.array(list(itertools.product(range(4), repeat=4)))
    joints = modem.joint_of(tuples)
    assert sorted(joints.tolist()) == list(range(256))
    np.testing.assert_array_equal(modem.users_of(joints), tuples)
    with pytest.raises(ValueError):
        modem.users_of(256)


def test_marginal_map_folds_uniform_joint():
    m = modem.marginal_map(2)
    assert m.shape == (16, 8)
    np.testing.assert_allclose(np.full(16, 1 / 16) @ m, 0.25)


def test_real_features_layout():
    y = np.array([1 + 2j, 0, 0, 0])
    np.testing.assert_array_equal(modem.real_features(y), [1, 0, 0, 0, 2, 0, 0, 0])


@given(st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False),
                min_size=4, max_size=4))
def test_feature_round_trip(values):
    y = np.array(values)
    f = modem.real_features(y)
    assert f.shape == (8,)
    np.testing.assert_array_equal(modem.complex_from_features(f), y)
