"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Seeds are fixed in advance (2010 for every stochastic campaign) and never
tuned. Run directly with ``python3 tests/test_acceptance.py`` for the
summary lines alone.
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from simclock import analysis as an
from simclock import config as cfgmod
from simclock.cli import main as cli_main
from simclock.engine import differential_subtract, estimate, EstimationContext, run_campaign
from simclock.measurement import DecoherenceModel, ProbeCalibration, ProbePulse, decoherence_eta
from simclock.noise import CycleNoise, DriftModel
from simclock.oracle import oracle_comparison
from simclock.presets import PRESETS, build_campaign, run_preset, squeezing_sequence
from simclock.sequencer import (MwPulse, QuantizationRule, build_ear_sequence, quantize, run_sequence,
                                to_text)

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:                      # direct execution
    ACCEPTANCE_LINES = []

SEED = 2010


def report(number, title, ok, detail):
    line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def preset(name, *sets):
    return cfgmod.resolve(PRESETS[name], None, [f"campaign.seed={SEED}", *sets])


def within(x, lo, hi):
    return x is not None and lo <= x <= hi


def test_criterion_1_formula():
    xi = an.xi_lin(0.14, 1.6)
    db = an.to_db(xi)
    report(1, "linear-model squeezing formula", abs(xi - 0.520) < 5e-4 and abs(db - (-2.8)) <= 0.1,
           f"xi_lin = {xi:.4f} = {db:.2f} dB; target 0.520, -2.8 dB +/- 0.1")


def test_criterion_2_decoherence():
    eta = decoherence_eta(5.9e6, DecoherenceModel(2.39e-8))
    report(2, "decoherence calibration", abs(eta - 0.131) <= 0.002,
           f"eta = {100 * eta:.2f}%; target 13.1% +/- 0.2%")


def test_criterion_3_squeezing_campaign():
    out = run_preset("squeeze-scan", preset("squeeze-scan"))
    s = out.summary
    red, xi = s["projection_reduction_db"], s["xi_db"]
    ok = within(red, -4.5, -3.5) and within(xi, -3.2, -2.2)
    report(3, "squeezing campaign", ok,
           f"conditional projection reduction {red} dB (target -4.0 +/- 0.5), "
           f"xi {xi} dB (target -2.7 +/- 0.5), {s['estimate']['n_samples']} differential samples")


def test_criterion_4_linear_scaling():
    # 4800 trials cannot resolve a1 to 5% (its standard error is about 14 chi^2);
    # the campaign is enlarged and the atom-number axis widened (see README)
    out = run_preset("squeeze-scan", preset("squeeze-scan", "campaign.n_cycles=60000",
                                            "atoms.retention=0.6", "analysis.reference_bin=true"))
    s = out.summary
    r, r_err, sig2 = s["a1_over_chi_sq"], s["a1_over_chi_sq_err"], s["a2_significance"]
    ok = sig2 is not None and sig2 <= 2.0 and abs(r - 1.0) <= 0.05
    report(4, "linear noise scaling", ok,
           f"a1/chi^2 = {r:.4f} +/- {r_err:.4f} (target 1 +/- 0.05), |a2|/sigma = {sig2:.2f} (target <= 2)")


def test_criterion_5_correlation_decay():
    s = run_preset("pulse-count-scan", preset("pulse-count-scan")).summary
    tau, inj = s["tau_fit"], s["tau_injected"]
    ok = tau is not None and abs(tau - inj) <= 0.1 * inj
    tau_txt = "none" if tau is None else f"{tau * 1e6:.0f} us"
    report(5, "correlation decay", ok,
           f"exponential-approach tau = {tau_txt}, injected {inj * 1e6:.0f} us +/- 10%; "
           f"kernel-model tau = {s['tau_kernel'] * 1e6:.0f} us")


def test_criterion_6_clock_squeezing():
    s = run_preset("clock-squeeze", preset("clock-squeeze")).summary
    xi, z = s["xi_db"], s["classical_zeroed"]["xi_lin_db"]
    ok = within(xi, -1.6, -0.6) and within(z, -2.5, -1.9)
    report(6, "clock squeezing", ok,
           f"xi {xi} dB (target -1.1 +/- 0.5), var2/var1 = {s['var_phi2_over_var_phi1']:.2f}; "
           f"classical zeroed xi_lin {z} dB (target -2.2 +/- 0.3)")


def test_criterion_7_classical_scaling():
    s = run_preset("clock-noise-budget", preset("clock-noise-budget")).summary
    sd, tc = s["sigma_delta_hz"], s["t_cross_ideal"]
    ok = abs(sd - 7.5) <= 0.8 and tc is not None and abs(tc - 90e-6) <= 20e-6
    tc_txt = "none" if tc is None else f"{tc * 1e6:.1f} us"
    report(7, "classical-noise scaling", ok,
           f"sqrt var(Delta) = {sd:.2f} Hz (target 7.5 +/- 0.8); idealised crossing {tc_txt} "
           f"(target 90 +/- 20 us)")


def test_criterion_8_oracle():
    rows = oracle_comparison((100, 400, 1000), (0.5, 1.6, 4.0), n_draws=10_000, seed=SEED)
    worst = max(max(r.rel_error, r.rel_error_draws) for r in rows if r.n_atoms <= 400)
    decreasing = all(
        all(a.rel_error > b.rel_error for a, b in zip(sub, sub[1:]))
        for sub in ([r for r in rows if r.kappa_sq == k] for k in (0.5, 1.6, 4.0)))
    from simclock.oracle import dicke_moments, run_dicke_sequence
    p = ProbePulse(6e6)
    ear_err = 0.0
    for det, T in ((0.0, 10e-6), (1234.5, 10e-6), (-400.0, 150e-6), (3e3, 300e-6)):
        st, _ = run_dicke_sequence(100, build_ear_sequence(T, p, p), det)
        ear_err = max(ear_err, abs(dicke_moments(st)[0][2] - 50 * math.sin(2 * math.pi * det * T)))
    ok = worst < 0.05 and decreasing and ear_err < 1e-10
    report(8, "oracle equivalence", ok,
           f"max relative error {worst:.1e} at N <= 400 (target < 5%), decreasing in N: {decreasing}; "
           f"EAR |dJz| = {ear_err:.1e} (target < 1e-10)")


def test_criterion_9_protocol(tmp_path):
    cfg = preset("squeeze-scan")
    camp = build_campaign(cfg, squeezing_sequence(cfg))
    res = run_campaign(camp)
    rep = estimate(differential_subtract(res), EstimationContext.from_config(camp))
    zeta_ok = rep.zeta_is_optimal

    drifted = run_campaign(replace(camp, noise=replace(camp.noise, drift=DriftModel(pulse_area_drift_rate=3e-6))))
    raw = np.var(drifted.phi1) / np.var(res.phi1) - 1
    d0, d1 = differential_subtract(res), differential_subtract(drifted)
    drift_rel = max(abs(np.var(d1.phi1) / np.var(d0.phi1) - 1), abs(np.var(d1.phi2) / np.var(d0.phi2) - 1))

    rule = QuantizationRule()
    q = quantize(build_ear_sequence(123.4567e-6, ProbePulse(6e6, 10.001e-6), ProbePulse(6e6)))
    idem = quantize(q) == q
    on_grid = all(abs(t / 4e-9 - round(t / 4e-9)) < 1e-6 and abs(e.duration / 4e-9 - round(e.duration / 4e-9)) < 1e-6
                  for t, e in q) and all(
        e.phase / rule.phase_step == round(e.phase / rule.phase_step) for e in q.events if isinstance(e, MwPulse))

    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        cli_main(["squeeze-scan", "--seed", str(SEED), "--out", str(d), "--set", "campaign.n_cycles=50"])
        outs.append({f: (d / f).read_bytes() for f in ("records.csv", "summary.json", "budget.csv")})
    identical = outs[0] == outs[1]

    ok = zeta_ok and drift_rel <= 0.02 and idem and on_grid and identical
    report(9, "protocol properties", ok,
           f"zeta grid-optimal: {zeta_ok}; drift raises raw var(phi1) by {100 * raw:.0f}%, "
           f"differential change {100 * drift_rel:.2f}% (target <= 2%); quantize idempotent: {idem}, "
           f"on grid: {on_grid}; byte-identical reruns: {identical}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
