import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simclock.errors import DomainError, StructuralError
from simclock.measurement import DecoherenceModel, ProbeCalibration, ProbePulse
from simclock.noise import ContrastModel, NoiseModels
from simclock.sequencer import (MwPulse, Probe, QuantizationRule, Sequence, Wait, build_ear_sequence,
                                build_ramsey_sequence, build_squeezing_sequence, from_text, quantize,
                                run_sequence, schedule, simulate_shots, to_text, with_atom_number_probe)

P6 = ProbePulse(6e6)
CAL = ProbeCalibration(1.49e-6, shot_prefactor_mode="unit")


def test_squeezing_sequence_structure():
    seq = build_squeezing_sequence(P6, [P6])
    assert len(seq) == 3
    assert [type(e).__name__ for e in seq.events] == ["MwPulse", "Probe", "Probe"]
    with pytest.raises(StructuralError):
        build_squeezing_sequence(P6, [])


def test_squeezing_sequence_timing():
    seq = build_squeezing_sequence(P6, [P6, P6])
    np.testing.assert_allclose(seq.probe_centers(), [22e-6, 42e-6, 62e-6], atol=1e-15)
    assert all(e.pulse.duration == 10e-6 and e.pulse.photons_total == 6e6 for _, e in seq.probes)


def test_ear_sequence_phases_and_order():
    seq = build_ear_sequence(10e-6, P6, P6)
    kinds = [type(e).__name__ for e in seq.events]
    assert kinds == ["MwPulse", "Probe", "MwPulse", "Wait", "MwPulse", "Probe"]
    assert [e.phase for e in seq.events if isinstance(e, MwPulse)] == [math.pi / 2, 0.0, math.pi]
    assert seq.events[3].duration == 10e-6
    ramsey = build_ramsey_sequence(10e-6, P6)
    assert [type(e).__name__ for e in ramsey.events] == ["MwPulse", "Wait", "MwPulse", "Probe"]
    with pytest.raises(StructuralError):
        build_ear_sequence(0.0, P6, P6)


def test_timestamps_strictly_increasing():
    seq = with_atom_number_probe(build_ear_sequence(50e-6, P6, [P6, P6]), P6)
    assert np.all(np.diff(seq.starts) > 0)
    with pytest.raises(StructuralError):
        Sequence((Wait(1e-6), Wait(1e-6)), (0.0, 0.5e-6))


def test_event_validation():
    with pytest.raises(StructuralError):
        MwPulse(0.0)
    with pytest.raises(StructuralError):
        MwPulse(7.0)
    with pytest.raises(StructuralError):
        Wait(0.0)
    with pytest.raises(StructuralError):
        Probe(P6, "bogus")


def test_quantize_examples():
    rule = QuantizationRule()
    assert rule.phase(math.pi / 2) == 16384 * 2 * math.pi / 65536
    assert rule.time(7e-6) / 4e-9 == pytest.approx(1750, abs=1e-9)
    assert rule.time(10.001e-6) == pytest.approx(2500 * 4e-9, rel=1e-15)
    seq = schedule([MwPulse(math.pi / 2, 0.3, 7e-6), Probe(ProbePulse(6e6, 10.001e-6))])
    q = quantize(seq)
    assert q.events[1].duration == pytest.approx(10e-6, rel=1e-15)
    with pytest.raises(StructuralError):
        quantize(schedule([MwPulse(math.pi / 2, 0.0, 1e-9)]))


@given(st.lists(st.tuples(st.floats(0.0, 2 * math.pi), st.floats(1e-8, 1e-3)), min_size=1, max_size=6),
       st.floats(1e-8, 1e-3))
@settings(max_examples=80, deadline=None)
def test_quantize_idempotent_and_on_grid(pulses, wait):
    events = [MwPulse(math.pi / 2, ph, d) for ph, d in pulses] + [Wait(wait), Probe(P6)]
    q = quantize(schedule(events))
    assert quantize(q) == q
    for t, e in q:
        assert abs(t / 4e-9 - round(t / 4e-9)) < 1e-6
        assert abs(e.duration / 4e-9 - round(e.duration / 4e-9)) < 1e-6
        if isinstance(e, MwPulse):
            assert abs(e.phase / (2 * math.pi / 65536) - round(e.phase / (2 * math.pi / 65536))) < 1e-9


def test_text_round_trip():
    seq = quantize(with_atom_number_probe(build_ear_sequence(123e-6, P6, [P6, ProbePulse(3e6)]), P6))
    text = to_text(seq)
    back = from_text(text)
    assert back == seq
    assert to_text(back) == text
    with pytest.raises(StructuralError):
        from_text("teleport start=0\n")
    with pytest.raises(StructuralError):
        from_text("wait start=0\n")


@pytest.mark.parametrize("delta,T", [(0.0, 10e-6), (200.0, 10e-6), (-350.0, 150e-6), (1234.5, 300e-6)])
def test_ear_mean_follows_sine_law(delta, T, rng):
    n = 1e5
    seq = build_ear_sequence(T, P6, P6)
    from simclock.noise import CycleNoise
    rec = run_sequence(n, seq, CAL, NoiseModels(), DecoherenceModel(0.0), rng, cycle=CycleNoise(delta))
    assert rec.final_state.jz == pytest.approx(n / 2 * math.sin(2 * math.pi * delta * T), abs=1e-9 * n)


def test_ear_mean_with_decoherence(rng):
    from simclock.noise import CycleNoise
    n, T, delta, alpha = 1e5, 50e-6, 900.0, 2.39e-8
    rec = run_sequence(n, build_ear_sequence(T, P6, P6), CAL, NoiseModels(), DecoherenceModel(alpha),
                       rng, cycle=CycleNoise(delta))
    eta1 = 1 - math.exp(-alpha * 6e6)
    # mean before the readout probe carries one probe's worth of decoherence;
    # the record is taken after both probes
    expect = (1 - eta1) ** 2 * n / 2 * math.sin(2 * math.pi * delta * T)
    assert rec.final_state.jz == pytest.approx(expect, rel=1e-12)


def test_microwave_rotations_preserve_population_difference(rng):
    seq = build_ear_sequence(10e-6, P6, P6)
    batch = simulate_shots(seq, np.full(2000, 1e5), CAL, rng=rng)
    # at zero detuning the two transfer pulses cancel, so without correlation
    # decay both probes read the same latent Jz
    np.testing.assert_allclose(batch.latent_jz[:, 1], batch.latent_jz[:, 0], rtol=0, atol=1e-9 * 1e5)


def test_ramsey_fringe_shape(rng):
    n, T = 1e5, 100e-6
    noise = NoiseModels(contrast=ContrastModel(tau_inh=200e-6))
    h = math.exp(-T**2 / (2 * (200e-6) ** 2))
    for deg in (0, 45, 90, 180, 270):
        th = math.radians(deg)
        rec = run_sequence(n, build_ramsey_sequence(T, P6, final_phase=th), CAL, noise, None, rng)
        jz_before_probe = rec.final_state.jz
        # reported convention: fringe amplitude h N/2, maximum at 90 degrees
        assert jz_before_probe == pytest.approx(n / 2 * h * math.sin(th), abs=1e-9 * n)


def test_probe_before_pulse_rejected(rng):
    seq = schedule([Probe(P6, "first_qnd"), Wait(1e-6)])
    with pytest.raises(StructuralError):
        simulate_shots(seq, [1e5], CAL, rng=rng)


def test_run_sequence_rejects_state(rng):
    from simclock.spin import make_css
    with pytest.raises(DomainError):
        run_sequence(make_css(10), build_squeezing_sequence(P6, [P6]), CAL, rng=rng)


def test_conditional_state_variance_below_unconditional(rng):
    rec = run_sequence(1e5, build_squeezing_sequence(P6, [P6]), CAL, rng=rng)
    assert rec.conditional_state.var_jz < rec.final_state.var_jz
    assert len(rec.outcomes) == 2 and rec.sub_outcomes == (rec.phi2,)
