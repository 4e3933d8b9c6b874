import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simclock.errors import DegenerateStateError, DomainError
from simclock.spin import (SpinMoments, apply_contrast, make_css, make_polarized, rotate,
                           rotation_matrix, squeezing_parameter, transverse_axis)

angles = st.floats(-10.0, 10.0, allow_nan=False)
unit_axes = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.asarray(v) / np.linalg.norm(v))


def test_css_empty_ensemble():
    s = make_css(0)
    assert np.all(s.mean == 0) and np.all(s.cov == 0)


def test_css_four_atoms():
    s = make_css(4)
    assert s.mean.tolist() == [2.0, 0.0, 0.0]
    assert s.var_jz == 1.0


def test_css_projection_variance_at_working_point():
    assert make_css(1.2e5).var_jz == 3e4


def test_css_negative_atoms_rejected():
    with pytest.raises(DomainError):
        make_css(-1)


def test_spin_moments_rejects_asymmetric_and_indefinite():
    with pytest.raises(DomainError):
        SpinMoments([0, 0, 0], [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(DomainError):
        SpinMoments([0, 0, 0], np.diag([1.0, -1.0, 1.0]))


def test_check_length():
    make_css(10).check_length(10)
    with pytest.raises(DomainError):
        SpinMoments([6, 0, 0], np.zeros((3, 3))).check_length(10)


def test_rotation_about_symmetry_axis_keeps_mean():
    s = rotate(make_css(100), (1, 0, 0), 1.234)
    np.testing.assert_allclose(s.mean, [50, 0, 0], atol=1e-12)


def test_rotation_about_z_quarter_turn():
    s = rotate(make_css(100), (0, 0, 1), math.pi / 2)
    np.testing.assert_allclose(s.mean, [0, 50, 0], atol=1e-12)


def test_quarter_turn_about_x_swaps_jy_jz():
    s0 = SpinMoments([50, 0, 0], np.diag([0.0, 7.0, 3.0]))
    s = rotate(s0, (1, 0, 0), math.pi / 2)
    assert s.var_jy == pytest.approx(3.0) and s.var_jz == pytest.approx(7.0)


def test_rotation_is_right_handed():
    np.testing.assert_allclose(rotation_matrix((0, 0, 1), math.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_non_unit_axis_rejected():
    with pytest.raises(DomainError):
        rotate(make_css(4), (1, 1, 0), 0.1)


def test_contrast_examples():
    s = make_css(1.2e5)
    assert apply_contrast(s, 1.0) == s
    c = apply_contrast(s, 0.86)
    assert c.length == pytest.approx(0.86 * 6e4, rel=1e-15)
    assert c.var_jz == 3e4
    z = apply_contrast(s, 0.0)
    assert z.length == 0 and np.array_equal(z.cov, s.cov)
    with pytest.raises(DomainError):
        apply_contrast(s, 1.1)


def test_squeezing_parameter_examples():
    n = 1.2e5
    assert squeezing_parameter(make_css(n), n) == pytest.approx(1.0, abs=1e-12)
    s = SpinMoments([0.86 * n / 2, 0, 0], np.diag([0, n / 4, n / 4 / 2.6]))
    xi = squeezing_parameter(s, n)
    assert xi == pytest.approx(1 / (0.86**2 * 2.6), rel=1e-12)
    assert 10 * math.log10(xi) == pytest.approx(-2.84, abs=0.005)
    s = SpinMoments([0.5 * n / 2, 0, 0], np.diag([0, n / 4, n / 4]))
    assert squeezing_parameter(s, n) == pytest.approx(4.0)


def test_squeezing_parameter_zero_mean():
    with pytest.raises(DegenerateStateError):
        squeezing_parameter(apply_contrast(make_css(10), 0.0), 10)


def test_polarized_default_is_lower_state():
    s = make_polarized(8)
    np.testing.assert_allclose(s.mean, [0, 0, -4])
    np.testing.assert_allclose(np.diag(s.cov), [2, 2, 0])


def test_transverse_axis():
    np.testing.assert_allclose(transverse_axis([3.0, 0, 0]), [0, 1, 0])
    assert transverse_axis([0, 0, 2.0]) is None


@given(unit_axes, angles, st.floats(1, 1e6))
@settings(max_examples=60, deadline=None)
def test_rotation_preserves_spectrum_and_length(axis, angle, n):
    s = SpinMoments([n / 2, 0.1 * n, -0.05 * n], np.diag([0.1 * n, n / 4, n / 7]))
    r = rotate(s, axis, angle)
    np.testing.assert_allclose(np.linalg.eigvalsh(r.cov), np.linalg.eigvalsh(s.cov), rtol=1e-9, atol=1e-9 * n)
    assert r.length == pytest.approx(s.length, rel=1e-12)
    assert np.linalg.det(r.cov) == pytest.approx(np.linalg.det(s.cov), rel=1e-8, abs=1e-6 * n**3)


@given(st.floats(0, 1), st.floats(0, 1))
def test_contrast_composes(f1, f2):
    s = make_css(1000)
    a = apply_contrast(apply_contrast(s, f2), f1)
    b = apply_contrast(s, f1 * f2)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-14, atol=1e-300)


@given(unit_axes, angles, angles, st.floats(0.05, 1.0), st.floats(10, 1e6))
@settings(max_examples=60, deadline=None)
def test_squeezing_invariant_about_mean_axis(axis, tilt, angle, h, n):
    # var(Jz) is a lab-frame quantity, so the invariance holds for states whose
    # covariance is isotropic transverse to the mean (coherent and decohered states)
    s = rotate(apply_contrast(make_css(n), h), axis, tilt)
    spun = rotate(s, s.mean / s.length, angle)
    assert squeezing_parameter(spun, n) == pytest.approx(squeezing_parameter(s, n), rel=1e-9, abs=1e-12)


@given(st.floats(1, 1e7))
def test_css_saturates_wineland(n):
    assert abs(squeezing_parameter(make_css(n), n) - 1.0) < 1e-12
