import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tsattack.errors import ConfigError
from tsattack.targets import (AttackTargetSpec, ata_target, build_target, dta_target, tta_target,
                              untargeted_reference)

finite = arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10))


def test_dta_examples():
    np.testing.assert_array_equal(dta_target([1.0, 2.0], 1).values, [2, 4])
    np.testing.assert_array_equal(dta_target([1.0, 2.0], -1).values, [0, 0])
    np.testing.assert_array_equal(dta_target([-1.0], 1).values, [0])
    np.testing.assert_array_equal(dta_target([-1.0], -1).values, [-2])


@given(finite)
def test_dta_moves_in_the_requested_direction(y):
    assert (dta_target(y, 1).values >= y).all()
    assert (dta_target(y, -1).values <= y).all()


def test_dta_rejects_bad_direction():
    with pytest.raises(ConfigError):
        dta_target([1.0], 0)


def test_ata_upper_and_magnitude():
    y = np.array([0.5, 1.5, -2.0])
    np.testing.assert_array_equal(ata_target(y, 1.0).values, [0.5, 1.0, -2.0])
    np.testing.assert_array_equal(ata_target(y, 1.0, "magnitude").values, [0.5, 1.0, -1.0])
    with pytest.raises(ConfigError):
        ata_target(y, np.inf)


@given(finite, st.floats(-5, 5))
def test_ata_never_exceeds_tau(y, tau):
    out = ata_target(y, tau).values
    assert (out <= tau).all() and (out <= y).all()


def test_tta_identity_outside_window():
    y = np.arange(10.0)
    inner = AttackTargetSpec("DTA", 1)
    out = tta_target(y, (3, 6), inner).values
    np.testing.assert_array_equal(out[:3], y[:3])
    np.testing.assert_array_equal(out[6:], y[6:])
    np.testing.assert_array_equal(out[3:6], 2 * y[3:6])


def test_tta_window_must_fit():
    with pytest.raises(ConfigError, match="out of range"):
        tta_target(np.zeros(5), (2, 6), AttackTargetSpec("DTA", 1))


def test_untargeted_is_flagged_for_ascent():
    ref = untargeted_reference([0.2, 0.4])
    assert ref.ascend
    np.testing.assert_array_equal(ref.values, [0.2, 0.4])


def test_build_target_untargeted_prefers_truth():
    spec = AttackTargetSpec("UNTARGETED")
    np.testing.assert_array_equal(build_target(spec, [1.0], [3.0]).values, [3.0])
    np.testing.assert_array_equal(build_target(spec, [1.0]).values, [1.0])


def test_build_target_tta_amplitude():
    spec = AttackTargetSpec("TTA", tau=0.5, window=(1, 3), inner="ATA")
    out = build_target(spec, np.array([0.9, 0.9, 0.9, 0.9]))
    np.testing.assert_array_equal(out.values, [0.9, 0.5, 0.5, 0.9])
    assert not out.ascend


@pytest.mark.parametrize("kwargs", [
    dict(kind="XYZ"),
    dict(kind="DTA", direction=2),
    dict(kind="ATA"),
    dict(kind="ATA", tau=0.5, clip="lower"),
    dict(kind="TTA", direction=1, inner="DTA"),
    dict(kind="TTA", direction=1, inner="DTA", window=(5, 5)),
    dict(kind="TTA", direction=1, inner="UNTARGETED", window=(0, 5)),
])
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        AttackTargetSpec(**kwargs)


def test_labels():
    assert AttackTargetSpec("DTA", -1).label == "dta-down"
    assert AttackTargetSpec("TTA", 1, window=(0, 2), inner="DTA").label == "tta-up"
    assert AttackTargetSpec("TTA", tau=1.0, window=(0, 2), inner="ATA").label == "tta-amp"
    assert AttackTargetSpec("UNTARGETED").untargeted
    assert AttackTargetSpec("ATA", tau=0.3).to_dict()["tau"] == 0.3


def test_dta_spec_examples():
    np.testing.assert_allclose(dta_target([0.5, -0.2], 1).values, [1.0, 0.0])
    np.testing.assert_array_equal(dta_target([0.5], -1).values, [0.0])
    assert dta_target([0.0], 1).values[0] == 0 and dta_target([0.0], -1).values[0] == 0
