"""Dual-colour dispersive QND measurement of the population difference.

A probe pulse with ``n`` photons in total returns the phase

    phi = w + chi * dN + dchi * N_A,     dN = 2 Jz,

where ``w`` is optical shot noise of variance ``s / n`` and ``dchi`` is the
per-shot coupling imbalance between the two probe colours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError
from .spin import SpinMoments, transverse_axis

ShotMode = Literal["eq5", "unit"]

SQRT13 = math.sqrt(13.0)


@dataclass(frozen=True)
class ProbeCalibration:
    """Coupling and noise constants of the dispersive probe.

    ``shot_prefactor_mode`` selects the shot-noise law: ``"eq5"`` uses the
    interferometer prefactor ``(beta^2 + 1) / (2 beta^2)``, ``"unit"`` uses 1.
    ``excess_backaction`` scales the anti-squeezing added to the transverse
    quadrature by each measurement (1 is the Kraus minimum).
    ``delta_chi_scope`` is ``"shot"`` or ``"cycle"``.
    """

    chi: float
    beta: float = SQRT13
    chi_bar_ratio: float = 1.0
    var_delta_chi: float = 0.0
    shot_prefactor_mode: ShotMode = "eq5"
    excess_backaction: float = 10.0
    extra_variance: float = 0.0
    delta_chi_scope: str = "shot"

    def __post_init__(self):
        if not self.chi > 0:
            raise DomainError(f"chi must be positive, got {self.chi}")
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if self.var_delta_chi < 0:
            raise DomainError("var_delta_chi must be non-negative")
        if abs(self.chi_bar_ratio - 1.0) > 0.05:
            raise DomainError("chi_bar_ratio must stay within 5% of 1")
        if self.shot_prefactor_mode not in ("eq5", "unit"):
            raise DomainError(f"unknown shot_prefactor_mode {self.shot_prefactor_mode!r}")
        if self.excess_backaction < 0 or self.extra_variance < 0:
            raise DomainError("excess_backaction and extra_variance must be non-negative")
        if self.delta_chi_scope not in ("shot", "cycle"):
            raise DomainError(f"unknown delta_chi_scope {self.delta_chi_scope!r}")

    @property
    def shot_prefactor(self):
        if self.shot_prefactor_mode == "unit":
            return 1.0
        b2 = self.beta**2
        return (b2 + 1.0) / (2.0 * b2)


@dataclass(frozen=True)
class ProbePulse:
    """A bichromatic probe pulse; ``timestamp`` is its start within the sequence."""

    photons_total: float
    duration: float = 10e-6
    timestamp: float = 0.0

    def __post_init__(self):
        if self.photons_total < 0:
            raise DomainError("photons_total must be non-negative")
        if self.photons_total > 0 and not self.duration > 0:
            raise DomainError("a pulse carrying photons needs a positive duration")

    @property
    def center(self):
        return self.timestamp + 0.5 * self.duration


@dataclass(frozen=True)
class DecoherenceModel:
    """Spontaneous-scattering loss of contrast, ``eta = 1 - exp(-alpha * n)``."""

    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainError("alpha is a magnitude and must be non-negative")


@dataclass(frozen=True)
class PhaseOutcome:
    phi: float
    pulse: ProbePulse
    kind: Literal["atomic", "atom_number", "empty_reference"] = "atomic"

    def __post_init__(self):
        if not math.isfinite(self.phi):
            raise DomainError("phase outcome must be finite")


def shot_variance(pulse, cal):
    """Optical shot-noise variance of one pulse, ``s / n``."""
    if not pulse.photons_total > 0:
        raise DomainError("shot noise variance is infinite for a pulse without photons")
    return cal.shot_prefactor / pulse.photons_total


def readout_variance(pulse, cal, n_atoms=0.0):
    """Total additive noise in phi: shot, detector floor and coupling imbalance."""
    return shot_variance(pulse, cal) + cal.extra_variance + cal.var_delta_chi * n_atoms**2


def decoherence_eta(photons, model):
    if photons < 0:
        raise DomainError("photon number must be non-negative")
    return -math.expm1(-model.alpha * photons)


def alpha_for_eta(eta, photons):
    """Scattering coefficient that shortens the spin by ``eta`` after ``photons``."""
    if not 0.0 <= eta < 1.0 or not photons > 0:
        raise DomainError("need 0 <= eta < 1 and a positive photon number")
    return -math.log1p(-eta) / photons


def kappa_squared(pulse, cal, n_atoms):
    """Projection noise over shot noise for a single measurement, ``chi^2 N n / s``."""
    if not pulse.photons_total > 0:
        raise DomainError("kappa^2 needs a pulse with photons")
    return cal.chi**2 * n_atoms * pulse.photons_total / cal.shot_prefactor


def chi_for_kappa_squared(kappa_sq, n_atoms, photons, shot_prefactor=1.0):
    """Invert :func:`kappa_squared` for the coupling constant."""
    if kappa_sq < 0 or not n_atoms > 0 or not photons > 0:
        raise DomainError("need kappa^2 >= 0 and positive atom and photon numbers")
    return math.sqrt(kappa_sq * shot_prefactor / (n_atoms * photons))


def sample_phases(latent_jz, n_atoms, pulse, cal, delta_chi_sample, rng):
    """Vectorised outcome draw; returns an array broadcast over the inputs."""
    latent_jz, n_atoms, delta_chi_sample = np.broadcast_arrays(
        np.asarray(latent_jz, dtype=float),
        np.asarray(n_atoms, dtype=float),
        np.asarray(delta_chi_sample, dtype=float),
    )
    sd = math.sqrt(shot_variance(pulse, cal) + cal.extra_variance)
    w = sd * rng.standard_normal(latent_jz.shape)
    return w + 2.0 * cal.chi * latent_jz + delta_chi_sample * n_atoms


def sample_outcome(latent_jz, n_atoms, pulse, cal, delta_chi_sample, rng):
    phi = sample_phases(latent_jz, n_atoms, pulse, cal, delta_chi_sample, rng)
    return PhaseOutcome(float(phi), pulse, "atomic")


def measure_atom_number(n_atoms, pulse, cal, rng):
    """Probe after pumping every atom into the upper level: ``phi = chi_bar * N``."""
    sd = math.sqrt(shot_variance(pulse, cal) + cal.extra_variance)
    phi = cal.chi * cal.chi_bar_ratio * n_atoms + sd * rng.standard_normal()
    return PhaseOutcome(float(phi), pulse, "atom_number")


def atom_number_from_phase(phi, cal):
    """Atom number inferred from an atom-number outcome, assuming ``chi_bar = chi``."""
    return np.asarray(phi) / cal.chi


def backaction_increment(length, var_prior, var_post, excess):
    """Variance added to the transverse quadrature by one Jz measurement.

    For a minimum-uncertainty prior the Kraus limit is ``|<J>|^2 / 4`` times
    the change in ``1 / var(Jz)``; ``excess`` multiplies that amount.
    """
    var_prior = np.asarray(var_prior, dtype=float)
    var_post = np.asarray(var_post, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = excess * 0.25 * np.asarray(length) ** 2 * (1.0 / var_post - 1.0 / var_prior)
    return np.where(np.isfinite(inc) & (inc > 0), inc, 0.0)


def condition(state: SpinMoments, outcome: PhaseOutcome, pulse, cal, n_atoms=None):
    """Kalman update of the spin moments on one phase outcome.

    The outcome is treated as a measurement of Jz with noise variance
    ``readout_variance / (4 chi^2)``. The transverse quadrature is then
    inflated by :func:`backaction_increment`.
    """
    prior = state.var_jz
    if not prior > 0:
        raise DomainError("conditioning needs a positive prior var(Jz)")
    noise = readout_variance(pulse, cal, 0.0 if n_atoms is None else n_atoms)
    sigma_sq = noise / (4.0 * cal.chi**2)
    col = state.cov[:, 2]
    total = prior + sigma_sq
    innovation = outcome.phi / (2.0 * cal.chi) - state.jz
    mean = state.mean + col * innovation / total
    cov = state.cov - np.outer(col, col) / total
    posterior = prior * sigma_sq / total
    axis = transverse_axis(mean)
    if axis is not None and cal.excess_backaction > 0:
        inc = float(backaction_increment(np.linalg.norm(mean), prior, posterior, cal.excess_backaction))
        cov = cov + inc * np.outer(axis, axis)
    return SpinMoments(mean, cov)
