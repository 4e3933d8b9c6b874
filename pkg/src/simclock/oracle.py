"""Exact small-N collective spin in the symmetric Dicke basis.

Used as ground truth for the Gaussian moment engine: rotations, weak
Gaussian-Kraus QND measurements and the conditional variance they leave.
States are dense amplitude vectors over ``m = -j .. j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm
from scipy.special import gammaln

from . import measurement as meas
from .errors import DomainError
from .sequencer import MwPulse, Probe, Wait

MAX_ATOMS = 2000


@dataclass(frozen=True, eq=False)
class DickeState:
    j: float
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != (int(round(2 * self.j)) + 1,):
            raise DomainError("amplitude vector must have dimension 2j + 1")
        if abs(np.vdot(a, a).real - 1.0) > 1e-10:
            raise DomainError("Dicke state is not normalised")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_atoms(self):
        return int(round(2 * self.j))

    @property
    def m(self):
        return np.arange(-self.j, self.j + 1.0)

    @property
    def probabilities(self):
        return np.abs(self.amplitudes) ** 2


def _check_n(n):
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= MAX_ATOMS):
        raise DomainError(f"atom number must be an integer in 1..{MAX_ATOMS}")


def _normalised(j, a):
    return DickeState(j, a / np.linalg.norm(a))


def dicke_css(n):
    """Coherent spin state along +x: amplitudes ``sqrt(C(2j, j+m)) / 2^j``."""
    _check_n(n)
    k = np.arange(n + 1)
    logc = 0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)) - 0.5 * n * math.log(2.0)
    return _normalised(n / 2, np.exp(logc))


def dicke_eigenstate(n, m):
    """Jz eigenstate ``|j, m>``."""
    _check_n(n)
    j = n / 2
    k = m + j
    if abs(k - round(k)) > 1e-9 or not 0 <= round(k) <= n:
        raise DomainError(f"m = {m} is not allowed for j = {j}")
    a = np.zeros(n + 1, dtype=complex)
    a[int(round(k))] = 1.0
    return DickeState(j, a)


def spin_operators(j):
    """Dense ``(Jx, Jy, Jz)`` in the ``m = -j .. j`` basis."""
    m = np.arange(-j, j + 1.0)
    up = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))      # <m+1| J+ |m>
    jp = np.diag(up, -1).astype(complex)
    jm = jp.conj().T
    return (jp + jm) / 2, (jp - jm) / (2j), np.diag(m).astype(complex)


def dicke_rotate(state, axis, angle):
    """Apply ``exp(-i angle (axis . J))``; right-handed on expectation values."""
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise DomainError("rotation axis must be a unit 3-vector")
    if n[0] == 0.0 and n[1] == 0.0:
        phase = np.exp(-1j * angle * n[2] * state.m)
        return _normalised(state.j, phase * state.amplitudes)
    jx, jy, jz = spin_operators(state.j)
    U = expm(-1j * angle * (n[0] * jx + n[1] * jy + n[2] * jz))
    return _normalised(state.j, U @ state.amplitudes)


def dicke_moments(state):
    """Exact mean vector and symmetrised covariance of ``(Jx, Jy, Jz)``."""
    a = state.amplitudes
    ops = spin_operators(state.j)
    mean = np.array([np.vdot(a, op @ a).real for op in ops])
    cov = np.empty((3, 3))
    for p in range(3):
        for q in range(p, 3):
            sym = 0.5 * (ops[p] @ ops[q] + ops[q] @ ops[p])
            cov[p, q] = cov[q, p] = np.vdot(a, sym @ a).real - mean[p] * mean[q]
    return mean, cov


def _readout_sigma(pulse, cal):
    return math.sqrt(meas.shot_variance(pulse, cal) + cal.extra_variance)


def kraus_update(state, phi, pulse, cal):
    """Posterior after observing ``phi``; amplitudes times sqrt of the likelihood."""
    sigma = _readout_sigma(pulse, cal)
    logw = -0.25 * ((phi - 2 * cal.chi * state.m) / sigma) ** 2
    a = state.amplitudes * np.exp(logw - logw.max())
    if np.linalg.norm(a) == 0:
        raise DomainError("outcome has vanishing likelihood")
    return _normalised(state.j, a)


def dicke_weak_measure(state, pulse, cal, rng):
    """Sample ``phi`` from the mixture ``sum_m |c_m|^2 N(2 chi m, sigma^2)`` and condition."""
    sigma = _readout_sigma(pulse, cal)
    p = state.probabilities
    k = rng.choice(p.size, p=p / p.sum())
    phi = 2 * cal.chi * state.m[k] + sigma * rng.standard_normal()
    return float(phi), kraus_update(state, phi, pulse, cal)


def _posterior_var_on_grid(prob, m, sx, x):
    """Posterior var(Jz) at readout values ``x`` (in Jz units) for noise ``sx``."""
    logl = -0.5 * ((x[:, None] - m[None, :]) / sx) ** 2
    logl -= logl.max(axis=1, keepdims=True)
    w = prob[None, :] * np.exp(logl)
    w /= w.sum(axis=1, keepdims=True)
    mu = w @ m
    return w @ (m * m) - mu * mu


def mean_posterior_variance(state, pulse, cal, points=6001, width=10.0):
    """Outcome-averaged posterior var(Jz), by quadrature over the readout."""
    prob = state.probabilities
    m = state.m
    sx = _readout_sigma(pulse, cal) / (2 * cal.chi)
    mu = prob @ m
    sd = math.sqrt(prob @ (m - mu) ** 2 + sx * sx)
    x = np.linspace(mu - width * sd, mu + width * sd, points)
    px = (prob[None, :] * np.exp(-0.5 * ((x[:, None] - m[None, :]) / sx) ** 2)).sum(axis=1)
    px /= sx * math.sqrt(2 * math.pi)
    pv = _posterior_var_on_grid(prob, m, sx, x)
    return float(trapezoid(px * pv, x) / trapezoid(px, x))


def mean_posterior_variance_draws(state, pulse, cal, rng, n_draws=10_000):
    """Monte Carlo average of posterior var(Jz) over sampled outcomes."""
    prob = state.probabilities
    m = state.m
    sx = _readout_sigma(pulse, cal) / (2 * cal.chi)
    k = rng.choice(prob.size, size=n_draws, p=prob / prob.sum())
    x = m[k] + sx * rng.standard_normal(n_draws)
    return float(_posterior_var_on_grid(prob, m, sx, x).mean())


def run_dicke_sequence(n, seq, detuning=0.0, cal=None, rng=None):
    """Exact evolution through ``seq`` from the lower clock state.

    Probes are skipped unless both ``cal`` and ``rng`` are given, in which
    case atomic probes perform a weak measurement. Returns the final state
    and the list of outcomes.
    """
    st = dicke_eigenstate(n, -n / 2)
    outcomes = []
    for _, ev in seq:
        if isinstance(ev, MwPulse):
            st = dicke_rotate(st, ev.axis, ev.area)
        elif isinstance(ev, Wait):
            st = dicke_rotate(st, (0.0, 0.0, 1.0), 2 * math.pi * detuning * ev.duration)
        elif isinstance(ev, Probe) and cal is not None and rng is not None \
                and ev.role in ("first_qnd", "second_qnd"):
            phi, st = dicke_weak_measure(st, ev.pulse, cal, rng)
            outcomes.append(phi)
    return st, outcomes


@dataclass(frozen=True)
class OracleRow:
    n_atoms: int
    kappa_sq: float
    gaussian: float
    exact: float
    exact_draws: float

    @property
    def rel_error(self):
        return abs(self.gaussian - self.exact) / self.exact

    @property
    def rel_error_draws(self):
        return abs(self.gaussian - self.exact_draws) / self.exact_draws


def oracle_comparison(n_values=(100, 400), kappas=(0.5, 1.6, 4.0), n_draws=10_000, seed=0,
                      photons=6e6):
    """Gaussian-engine vs exact mean posterior var(Jz) after one QND probe on a CSS."""
    from .spin import make_css

    rows = []
    rng = np.random.default_rng(seed)
    pulse = meas.ProbePulse(photons)
    for n in n_values:
        css = dicke_css(int(n))
        for k2 in kappas:
            chi = meas.chi_for_kappa_squared(k2, n, photons, 1.0)
            cal = meas.ProbeCalibration(chi, shot_prefactor_mode="unit", excess_backaction=0.0)
            g = meas.condition(make_css(n), meas.PhaseOutcome(0.0, pulse), pulse, cal).var_jz
            rows.append(OracleRow(int(n), k2, g, mean_posterior_variance(css, pulse, cal),
                                  mean_posterior_variance_draws(css, pulse, cal, rng, n_draws)))
    return rows
