"""Pulse sequences: construction, DDS-style quantisation and execution.

Microwave pulses are instantaneous rotations. A pulse with phase ``theta``
rotates (right-handed) by its area about ``(-cos theta, -sin theta, 0)``,
so a pi/2 pulse at 90 degrees takes the lower clock state to ``+x``.
Free evolution ``Wait(T)`` rotates about ``z`` by ``2 pi Delta T`` and
scales the transverse mean by the fringe contrast ``h(T)``.

Two execution paths share one shot kernel, :func:`simulate_shots`:
a vectorised generative path used by the campaign engine, and
:func:`run_sequence`, which additionally tracks the per-trial Gaussian
moments (unconditional and conditioned on the outcomes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import measurement as meas
from .errors import DomainError, StructuralError
from .measurement import DecoherenceModel, PhaseOutcome, ProbeCalibration, ProbePulse
from .noise import NoiseModels, ar1_unit, fringe_contrast
from .spin import SpinMoments, make_polarized, rotation_matrix, transverse_axis

TAU_HALF_PI = 7e-6
DEFAULT_GAP = 10e-6
ROLES = ("first_qnd", "second_qnd", "atom_number", "reference")
ATOMIC_ROLES = ("first_qnd", "second_qnd")


@dataclass(frozen=True)
class MwPulse:
    area: float = math.pi / 2
    phase: float = 0.0
    duration: float = TAU_HALF_PI
    detuning: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.area <= 2 * math.pi:
            raise StructuralError(f"pulse area must lie in (0, 2 pi], got {self.area}")
        if not self.duration > 0:
            raise StructuralError("microwave pulse duration must be positive")

    @property
    def axis(self):
        return np.array([-math.cos(self.phase), -math.sin(self.phase), 0.0])


@dataclass(frozen=True)
class Probe:
    pulse: ProbePulse
    role: str = "first_qnd"

    def __post_init__(self):
        if self.role not in ROLES:
            raise StructuralError(f"unknown probe role {self.role!r}")
        if not self.pulse.duration > 0:
            raise StructuralError("probe duration must be positive")

    @property
    def duration(self):
        return self.pulse.duration


@dataclass(frozen=True)
class Wait:
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise StructuralError("wait duration must be positive")


Event = Union[MwPulse, Probe, Wait]


@dataclass(frozen=True)
class Sequence:
    """Immutable event timeline with explicit start times (seconds)."""

    events: tuple
    starts: tuple
    name: str = ""

    def __post_init__(self):
        if len(self.events) != len(self.starts):
            raise StructuralError("events and starts differ in length")
        if len(self.events) == 0:
            raise StructuralError("empty sequence")
        for k in range(1, len(self.starts)):
            prev_end = self.starts[k - 1] + self.events[k - 1].duration
            if self.starts[k] <= self.starts[k - 1] or self.starts[k] < prev_end - 1e-15:
                raise StructuralError("events overlap or timestamps are not increasing")

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(zip(self.starts, self.events))

    @property
    def probes(self):
        return [(t, e) for t, e in self if isinstance(e, Probe)]

    @property
    def end(self):
        return self.starts[-1] + self.events[-1].duration

    def probe_centers(self, roles=ATOMIC_ROLES):
        return np.array([t + 0.5 * e.duration for t, e in self.probes if e.role in roles])


def schedule(events, gap=DEFAULT_GAP, name=""):
    """Lay events end to end with ``gap`` between them, none next to a Wait."""
    starts, t = [], 0.0
    for k, ev in enumerate(events):
        if k > 0 and not isinstance(ev, Wait) and not isinstance(events[k - 1], Wait):
            t += gap
        starts.append(t)
        t += ev.duration
    return Sequence(tuple(events), tuple(starts), name)


def _stamp(probe, t):
    return Probe(replace(probe.pulse, timestamp=t), probe.role)


def _restamp(seq):
    events = tuple(_stamp(e, t) if isinstance(e, Probe) else e for t, e in seq)
    return Sequence(events, seq.starts, seq.name)


def build_squeezing_sequence(probe1, probe2_pulses, gap=DEFAULT_GAP, tau_half_pi=TAU_HALF_PI):
    """pi/2 pulse, first QND probe, then the pulses of the second measurement."""
    probe2_pulses = list(probe2_pulses)
    if not probe2_pulses:
        raise StructuralError("second measurement needs at least one probe pulse")
    events = [MwPulse(math.pi / 2, math.pi / 2, tau_half_pi), Probe(probe1, "first_qnd")]
    events += [Probe(p, "second_qnd") for p in probe2_pulses]
    return _restamp(schedule(events, gap, "squeezing"))


def build_ear_sequence(T, probe1, probe2, final_phase=math.pi, gap=DEFAULT_GAP, tau_half_pi=TAU_HALF_PI):
    """Entanglement-assisted Ramsey sequence.

    ``pi/2(90) . probe1 . pi/2(0) . Wait(T) . pi/2(final_phase) . probe2``.
    With ``probe1=None`` this degenerates to a plain Ramsey sequence.
    """
    if not T > 0:
        raise StructuralError("interrogation time must be positive")
    events = [MwPulse(math.pi / 2, math.pi / 2, tau_half_pi)]
    if probe1 is not None:
        events += [Probe(probe1, "first_qnd"), MwPulse(math.pi / 2, 0.0, tau_half_pi)]
    events += [Wait(T), MwPulse(math.pi / 2, final_phase, tau_half_pi)]
    probe2 = probe2 if isinstance(probe2, (list, tuple)) else [probe2]
    events += [Probe(p, "second_qnd") for p in probe2]
    return _restamp(schedule(events, gap, "ear" if probe1 is not None else "ramsey"))


def build_ramsey_sequence(T, probe, final_phase=math.pi, gap=DEFAULT_GAP, tau_half_pi=TAU_HALF_PI):
    """Standard Ramsey sequence; the first pulse sits at 90 degrees."""
    return build_ear_sequence(T, None, probe, final_phase, gap, tau_half_pi)


def with_atom_number_probe(seq, pulse, gap=DEFAULT_GAP):
    """Append the destructive atom-number measurement at the end of ``seq``."""
    events = list(seq.events) + [Probe(pulse, "atom_number")]
    return _restamp(schedule_like(seq, events, gap))


def schedule_like(seq, events, gap):
    starts = list(seq.starts)
    starts.append(seq.end + gap)
    return Sequence(tuple(events), tuple(starts), seq.name)


# ---------------------------------------------------------------- quantisation

@dataclass(frozen=True)
class QuantizationRule:
    time_step: float = 4e-9
    phase_step: float = 2 * math.pi * 2.0**-16

    def __post_init__(self):
        if not (self.time_step > 0 and self.phase_step > 0):
            raise DomainError("quantisation steps must be positive")

    def time(self, t):
        return round(t / self.time_step) * self.time_step

    def phase(self, p):
        return round(p / self.phase_step) * self.phase_step


def quantize(seq, rule=QuantizationRule()):
    """Round durations, start times and pulse phases to the DDS grid.

    Work is done in integer grid steps; a start that would round onto the
    tail of the previous event is pushed to that event's end.
    """
    step = rule.time_step
    events, starts = [], []
    free = None
    for t, ev in seq:
        kd = round(ev.duration / step)
        if kd <= 0:
            raise StructuralError(f"{type(ev).__name__} duration rounds to zero")
        ks = round(t / step)
        if free is not None:
            ks = max(ks, free)
        free = ks + kd
        start, d = ks * step, kd * step
        if isinstance(ev, MwPulse):
            new = replace(ev, duration=d, phase=rule.phase(ev.phase))
        elif isinstance(ev, Wait):
            new = Wait(d)
        else:
            new = Probe(replace(ev.pulse, duration=d, timestamp=start), ev.role)
        events.append(new)
        starts.append(start)
    return Sequence(tuple(events), tuple(starts), seq.name)


# -------------------------------------------------------------- serialisation

def to_text(seq):
    """One event per line, SI units, shortest round-trip floats."""
    lines = [f"# sequence {seq.name}".rstrip()]
    for t, ev in seq:
        if isinstance(ev, MwPulse):
            lines.append(f"mw start={t!r} area={ev.area!r} phase={ev.phase!r} "
                         f"duration={ev.duration!r} detuning={ev.detuning!r}")
        elif isinstance(ev, Wait):
            lines.append(f"wait start={t!r} duration={ev.duration!r}")
        else:
            lines.append(f"probe start={t!r} role={ev.role} photons={ev.pulse.photons_total!r} "
                         f"duration={ev.duration!r}")
    return "\n".join(lines) + "\n"


def from_text(text):
    name, events, starts = "", [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if parts and parts[0] == "sequence":
                name = parts[1] if len(parts) > 1 else ""
            continue
        kind, *fields = line.split()
        try:
            kv = dict(f.split("=", 1) for f in fields)
            t = float(kv.pop("start"))
            if kind == "mw":
                ev = MwPulse(float(kv["area"]), float(kv["phase"]), float(kv["duration"]), float(kv["detuning"]))
            elif kind == "wait":
                ev = Wait(float(kv["duration"]))
            elif kind == "probe":
                ev = Probe(ProbePulse(float(kv["photons"]), float(kv["duration"]), t), kv["role"])
            else:
                raise StructuralError(f"unknown event kind {kind!r}")
        except (KeyError, ValueError) as exc:
            if isinstance(exc, StructuralError):
                raise
            raise StructuralError(f"malformed sequence line: {raw!r}") from exc
        events.append(ev)
        starts.append(t)
    return Sequence(tuple(events), tuple(starts), name)


# ------------------------------------------------------------------ execution

@dataclass
class ShotBatch:
    """Outcomes of ``S`` independent shots of one sequence."""

    phases: np.ndarray        # (S, P) one column per probe event
    latent_jz: np.ndarray     # (S, P) Jz read by each probe (diagnostic)
    roles: tuple
    photons: np.ndarray       # (P,)
    centers: np.ndarray       # (P,)
    final_mean: np.ndarray    # (S, 3)
    eta_total: float


def _axes_rotations(axis, angles):
    """Batched right-handed rotations about a fixed unit axis."""
    n = np.asarray(axis, dtype=float)
    k = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _transverse(mean):
    v = np.stack([-mean[:, 1], mean[:, 0], np.zeros(len(mean))], axis=1)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), 0.0)


def simulate_shots(seq, n_atoms, cal, noise=None, decoherence=None, rng=None,
                   detuning=None, area_scale=None, delta_chi=None):
    """Generative simulation of ``len(n_atoms)`` shots of ``seq``.

    Per-shot classical inputs (``detuning`` in Hz, ``area_scale`` and a
    cycle-scope ``delta_chi``) broadcast against ``n_atoms``. Quantum
    fluctuations of the initial spin are carried as ``L u(t)``, with ``u`` a
    three-component unit AR(1) process in the initial frame sampled at the
    probe centres, mapped through the composite rotation of each probe.
    Backaction noise accumulates in a separate vector in the current frame.
    """
    noise = noise or NoiseModels()
    decoherence = decoherence or DecoherenceModel(0.0)
    rng = rng if rng is not None else np.random.default_rng()
    N = np.atleast_1d(np.asarray(n_atoms, dtype=float))
    S = N.size
    det = np.broadcast_to(np.asarray(0.0 if detuning is None else detuning, dtype=float), (S,))
    area = np.broadcast_to(np.asarray(1.0 if area_scale is None else area_scale, dtype=float), (S,))
    cycle_dchi = None
    if delta_chi is not None:
        cycle_dchi = np.broadcast_to(np.asarray(delta_chi, dtype=float), (S,))
        if np.all(np.isnan(cycle_dchi)):
            cycle_dchi = None

    probe_events = [e for _, e in seq if isinstance(e, Probe)]
    atomic = [e for e in probe_events if e.role in ATOMIC_ROLES]
    if atomic and not any(isinstance(e, MwPulse) for _, e in seq):
        raise StructuralError("atomic probes need at least one microwave pulse")
    P = len(probe_events)
    centers = np.array([e.pulse.center for e in probe_events])
    u = ar1_unit(seq.probe_centers(), noise.correlation.tau_decay, rng, (S, 3))

    mean = np.zeros((S, 3))
    mean[:, 2] = -N / 2
    sd0 = np.sqrt(N / 4)
    M = np.broadcast_to(np.eye(3), (S, 3, 3)).copy()
    cc = np.zeros((S, 3, 3))
    cc[:, 0, 0] = cc[:, 1, 1] = N / 4
    back = np.zeros((S, 3))
    phases = np.zeros((S, P))
    latent = np.zeros((S, P))
    eta_keep = 1.0
    sd_dchi = math.sqrt(cal.var_delta_chi)
    j = p = 0

    def turn(R):
        nonlocal mean, M, cc, back
        mean = np.einsum("sij,sj->si", R, mean)
        M = R @ M
        cc = R @ cc @ np.swapaxes(R, 1, 2)
        back = np.einsum("sij,sj->si", R, back)

    for t, ev in seq:
        if isinstance(ev, MwPulse):
            turn(_axes_rotations(ev.axis, ev.area * area))
        elif isinstance(ev, Wait):
            turn(_axes_rotations((0.0, 0.0, 1.0), 2 * math.pi * det * ev.duration))
            mean[:, :2] *= fringe_contrast(ev.duration, noise.contrast)
        elif ev.role in ATOMIC_ROLES:
            fluct = M[:, 2, 0] * sd0 * u[:, 0, j] + M[:, 2, 1] * sd0 * u[:, 1, j]
            jz = mean[:, 2] + fluct + back[:, 2]
            dchi = cycle_dchi if cycle_dchi is not None else sd_dchi * rng.standard_normal(S)
            latent[:, p] = jz
            phases[:, p] = meas.sample_phases(jz, N, ev.pulse, cal, dchi, rng)
            # backaction onto the transverse quadrature
            sig = meas.readout_variance(ev.pulse, cal, N) / (4.0 * cal.chi**2)
            prior = cc[:, 2, 2]
            col = cc[:, :, 2]
            cc = cc - col[:, :, None] * col[:, None, :] / (prior + sig)[:, None, None]
            post = cc[:, 2, 2]
            length = np.linalg.norm(mean, axis=1)
            inc = meas.backaction_increment(length, prior, post, cal.excess_backaction)
            a = _transverse(mean)
            back = back + (np.sqrt(inc) * rng.standard_normal(S))[:, None] * a
            cc = cc + inc[:, None, None] * a[:, :, None] * a[:, None, :]
            keep = math.exp(-decoherence.alpha * ev.pulse.photons_total)
            mean = mean * keep
            eta_keep *= keep
            j += 1
        elif ev.role == "atom_number":
            phases[:, p] = _atom_number_phases(N, ev.pulse, cal, rng)
            latent[:, p] = N
        else:
            sd = math.sqrt(meas.shot_variance(ev.pulse, cal) + cal.extra_variance)
            phases[:, p] = sd * rng.standard_normal(S)
        if isinstance(ev, Probe):
            p += 1
    return ShotBatch(phases, latent, tuple(e.role for e in probe_events),
                     np.array([e.pulse.photons_total for e in probe_events]),
                     centers, mean, 1.0 - eta_keep)


def _atom_number_phases(N, pulse, cal, rng):
    sd = math.sqrt(meas.shot_variance(pulse, cal) + cal.extra_variance)
    return cal.chi * cal.chi_bar_ratio * N + sd * rng.standard_normal(N.shape)


def combine_second(phases, roles, photons):
    """phi1 and the photon-weighted mean of the second-measurement pulses."""
    roles = np.asarray(roles)
    i1 = np.flatnonzero(roles == "first_qnd")
    i2 = np.flatnonzero(roles == "second_qnd")
    phi1 = phases[:, i1[0]] if i1.size else np.full(phases.shape[0], np.nan)
    if i2.size:
        w = photons[i2] / photons[i2].sum()
        phi2 = phases[:, i2] @ w
    else:
        phi2 = np.full(phases.shape[0], np.nan)
    return phi1, phi2


@dataclass
class TrialRecord:
    """One atomic experiment: outcomes plus diagnostic ground truth."""

    cycle_index: int
    experiment_index: int
    n_atoms: float
    n_atoms_measured: float
    phi1: float
    phi2: float
    sub_outcomes: tuple
    timestamps: tuple
    latent_jz: tuple = ()
    outcomes: tuple = ()
    final_state: Optional[SpinMoments] = None
    conditional_state: Optional[SpinMoments] = None


def _moments_step(state, ev, det, area_scale, noise):
    if isinstance(ev, MwPulse):
        R = rotation_matrix(ev.axis, ev.area * area_scale)
        return SpinMoments(R @ state.mean, R @ state.cov @ R.T)
    R = rotation_matrix((0.0, 0.0, 1.0), 2 * math.pi * det * ev.duration)
    m = R @ state.mean
    m[:2] *= fringe_contrast(ev.duration, noise.contrast)
    return SpinMoments(m, R @ state.cov @ R.T)


def run_sequence(n_atoms, seq, cal, noise=None, decoherence=None, rng=None,
                 cycle=None, cycle_index=0, experiment_index=0):
    """Execute one trial and track its Gaussian moments.

    ``final_state`` is the unconditional state after the sequence,
    including backaction and contrast loss. ``conditional_state`` is the
    same state conditioned on every atomic outcome by :func:`condition`.
    ``cycle`` is an optional :class:`~simclock.noise.CycleNoise`.
    """
    if isinstance(n_atoms, SpinMoments):
        raise DomainError("run_sequence starts from the lower clock state; pass the atom number")
    noise = noise or NoiseModels()
    decoherence = decoherence or DecoherenceModel(0.0)
    rng = rng if rng is not None else np.random.default_rng()
    det = cycle.detuning if cycle is not None else noise.detuning.mean_detuning
    area = cycle.area_scale if cycle is not None else 1.0
    dchi = cycle.delta_chi if cycle is not None else None
    batch = simulate_shots(seq, [n_atoms], cal, noise, decoherence, rng, det, area, dchi)

    state = make_polarized(n_atoms)
    cond = state
    outcomes, p = [], 0
    for t, ev in seq:
        if not isinstance(ev, Probe):
            state = _moments_step(state, ev, det, area, noise)
            cond = _moments_step(cond, ev, det, area, noise)
            continue
        phi = float(batch.phases[0, p])
        kind = {"atom_number": "atom_number", "reference": "empty_reference"}.get(ev.role, "atomic")
        out = PhaseOutcome(phi, ev.pulse, kind)
        outcomes.append(out)
        p += 1
        if ev.role not in ATOMIC_ROLES:
            continue
        keep = math.exp(-decoherence.alpha * ev.pulse.photons_total)
        if cond.var_jz > 0:
            prior = cond.var_jz
            sig = meas.readout_variance(ev.pulse, cal, n_atoms) / (4.0 * cal.chi**2)
            inc = float(meas.backaction_increment(cond.length, prior, prior * sig / (prior + sig),
                                                  cal.excess_backaction))
            cond = meas.condition(cond, out, ev.pulse, cal, n_atoms)
            a = transverse_axis(state.mean)
            if a is not None:
                state = SpinMoments(state.mean, state.cov + inc * np.outer(a, a))
        state = SpinMoments(state.mean * keep, state.cov)
        cond = SpinMoments(cond.mean * keep, cond.cov)

    phi1, phi2 = combine_second(batch.phases, batch.roles, batch.photons)
    roles = np.asarray(batch.roles)
    ia = np.flatnonzero(roles == "atom_number")
    n_meas = float(meas.atom_number_from_phase(batch.phases[0, ia[0]], cal)) if ia.size else float("nan")
    sub = tuple(float(x) for x, r in zip(batch.phases[0], roles) if r == "second_qnd")
    return TrialRecord(cycle_index, experiment_index, float(n_atoms), n_meas,
                       float(phi1[0]), float(phi2[0]), sub, tuple(batch.centers.tolist()),
                       tuple(batch.latent_jz[0].tolist()), tuple(outcomes), state, cond)

