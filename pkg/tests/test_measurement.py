import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simclock.errors import DomainError
from simclock.measurement import (DecoherenceModel, PhaseOutcome, ProbeCalibration, ProbePulse,
                                  alpha_for_eta, chi_for_kappa_squared, condition, decoherence_eta,
                                  kappa_squared, measure_atom_number, readout_variance, sample_outcome,
                                  sample_phases, shot_variance)
from simclock.spin import SpinMoments, make_css

CHI = 1.4907119849998597e-06      # kappa^2 = 1.6 at N = 1.2e5, n = 6e6, unit law


class ZeroRng:
    def standard_normal(self, size=None):
        return 0.0 if size is None else np.zeros(size)


def test_shot_variance_examples():
    unit = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    assert shot_variance(ProbePulse(6e6), unit) == pytest.approx(1.667e-7, rel=1e-3)
    eq5 = ProbeCalibration(CHI)
    assert shot_variance(ProbePulse(6e6), eq5) == pytest.approx(8.974e-8, rel=1e-3)
    big = ProbeCalibration(CHI, beta=1e8)
    assert shot_variance(ProbePulse(6e6), big) == pytest.approx(1 / 12e6, rel=1e-12)
    with pytest.raises(DomainError):
        shot_variance(ProbePulse(0.0), unit)


def test_decoherence_examples():
    assert decoherence_eta(0, DecoherenceModel(2.39e-8)) == 0
    assert decoherence_eta(5.9e6, DecoherenceModel(2.39e-8)) == pytest.approx(0.1316, abs=1e-4)
    assert alpha_for_eta(0.135, 7.1e6) == pytest.approx(2.042e-8, rel=1e-3)
    with pytest.raises(DomainError):
        DecoherenceModel(-1e-8)


def test_kappa_squared_examples():
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    assert kappa_squared(ProbePulse(6e6), cal, 1.2e5) == pytest.approx(1.6, rel=1e-12)
    assert kappa_squared(ProbePulse(12e6), cal, 1.2e5) == pytest.approx(3.2, rel=1e-12)
    assert chi_for_kappa_squared(1.6, 1.2e5, 6e6) == pytest.approx(1.49e-6, rel=1e-3)
    assert chi_for_kappa_squared(0.0, 1.2e5, 6e6) == 0.0


def test_calibration_invariants():
    with pytest.raises(DomainError):
        ProbeCalibration(0.0)
    with pytest.raises(DomainError):
        ProbeCalibration(CHI, chi_bar_ratio=1.06)
    with pytest.raises(DomainError):
        ProbeCalibration(CHI, shot_prefactor_mode="other")


def test_sample_outcome_examples():
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    p = ProbePulse(6e6)
    assert sample_outcome(0.0, 1.2e5, p, cal, 0.0, ZeroRng()).phi == 0.0
    out = sample_outcome(math.sqrt(1.2e5 / 4), 1.2e5, p, cal, 0.0, ZeroRng())
    assert out.phi == pytest.approx(5.16e-4, rel=1e-3)


def test_sample_outcome_ensemble_variance(rng):
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    n = 1.2e5
    jz = rng.normal(0, math.sqrt(n / 4), 100_000)
    phi = sample_phases(jz, n, ProbePulse(6e6), cal, 0.0, rng)
    assert phi.var() == pytest.approx(1 / 6e6 + CHI**2 * n, rel=0.02)


def test_generative_consistency_with_imbalance(rng):
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit", var_delta_chi=1e-22)
    n, V = 1e5, 4e4
    jz = rng.normal(0, math.sqrt(V), 100_000)
    dchi = rng.normal(0, math.sqrt(cal.var_delta_chi), jz.size)
    phi = sample_phases(jz, n, ProbePulse(6e6), cal, dchi, rng)
    expect = 4 * CHI**2 * V + 1 / 6e6 + cal.var_delta_chi * n**2
    assert phi.var() == pytest.approx(expect, rel=0.02)


def test_atom_number_measurement():
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    p = ProbePulse(6e6)
    assert measure_atom_number(1.2e5, p, cal, ZeroRng()).phi / CHI == pytest.approx(1.2e5, rel=1e-14)
    assert measure_atom_number(0, p, cal, ZeroRng()).phi == 0.0
    biased = ProbeCalibration(CHI, chi_bar_ratio=1.04, shot_prefactor_mode="unit")
    assert measure_atom_number(1e5, p, biased, ZeroRng()).phi / CHI == pytest.approx(1.04e5)
    assert measure_atom_number(1e5, p, cal, ZeroRng()).kind == "atom_number"


def test_condition_examples():
    n = 1.2e5
    p = ProbePulse(6e6)
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    post = condition(make_css(n), PhaseOutcome(0.0, p), p, cal)
    assert post.var_jz == pytest.approx(3e4 / 2.6, rel=1e-12)
    assert 10 * math.log10(post.var_jz / 3e4) == pytest.approx(-4.15, abs=0.005)
    weak = ProbePulse(1e-9)
    s0 = make_css(n)
    s1 = condition(s0, PhaseOutcome(1e-3, weak), weak, cal)
    np.testing.assert_allclose(s1.cov, s0.cov, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(s1.mean, s0.mean, rtol=1e-12, atol=1e-9)


def test_condition_mean_gain():
    n = 1.2e5
    p = ProbePulse(6e6)
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit", excess_backaction=0)
    phi = 2e-4
    post = condition(make_css(n), PhaseOutcome(phi, p), p, cal)
    assert post.jz == pytest.approx(1.6 / 2.6 * phi / (2 * CHI), rel=1e-12)


def test_condition_backaction_default_excess():
    n = 1.2e5
    p = ProbePulse(6e6)
    cal = ProbeCalibration(CHI, shot_prefactor_mode="unit")
    post = condition(make_css(n), PhaseOutcome(0.0, p), p, cal)
    kraus = (n / 2) ** 2 / 4 * (1 / post.var_jz - 1 / 3e4)
    assert post.var_jy == pytest.approx(n / 4 + 10 * kraus, rel=1e-12)
    assert post.var_jy * post.var_jz >= (post.length / 2) ** 2


def test_condition_rejects_zero_prior():
    p = ProbePulse(6e6)
    cal = ProbeCalibration(CHI)
    s = SpinMoments([1, 0, 0], np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(DomainError):
        condition(s, PhaseOutcome(0.0, p), p, cal)


def test_condition_matches_grid_integration():
    """Brute-force 2-D Gaussian integral of var(Jz | phi) on a small instance."""
    V, chi, n_ph = 25.0, 0.02, 2000.0
    cal = ProbeCalibration(chi, shot_prefactor_mode="unit", excess_backaction=0)
    p = ProbePulse(n_ph)
    s = SpinMoments([50, 0, 0], np.diag([0.0, V, V]))
    phi = 0.13
    post = condition(s, PhaseOutcome(phi, p), p, cal)
    jz = np.linspace(-60, 60, 24001)
    w = np.exp(-0.5 * jz**2 / V) * np.exp(-0.5 * (phi - 2 * chi * jz) ** 2 * n_ph)
    w /= w.sum()
    mu = (w * jz).sum()
    assert post.var_jz == pytest.approx((w * (jz - mu) ** 2).sum(), rel=1e-8)
    assert post.jz == pytest.approx(mu, rel=1e-8)


@given(st.floats(1e-9, 1e-3), st.floats(1e3, 1e8), st.floats(-1e-2, 1e-2), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_condition_monotone_and_psd(chi, photons, phi, repeats):
    cal = ProbeCalibration(chi, shot_prefactor_mode="unit")
    p = ProbePulse(photons)
    s = make_css(1e5)
    prev = s.var_jz
    for _ in range(repeats):
        s = condition(s, PhaseOutcome(phi, p), p, cal)
        assert s.var_jz <= prev * (1 + 1e-12)
        assert np.linalg.eigvalsh(s.cov).min() >= -1e-9 * np.abs(s.cov).max()
        prev = s.var_jz


def test_readout_variance_adds_imbalance():
    cal = ProbeCalibration(CHI, var_delta_chi=1e-20, extra_variance=1e-9)
    p = ProbePulse(6e6)
    assert readout_variance(p, cal, 1e5) == pytest.approx(shot_variance(p, cal) + 1e-9 + 1e-10)
