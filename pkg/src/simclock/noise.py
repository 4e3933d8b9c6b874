"""Classical noise and slow decay processes.

Cycle-to-cycle detuning jitter, Ramsey contrast decay ``h(T)``, the loss of
readout correlation from atomic motion through the probe profile, and slow
drifts of microwave pulse area and trap intensity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, ExtrapolationError


@dataclass(frozen=True)
class DetuningModel:
    """Microwave detuning ``Delta`` in Hz, redrawn once per MOT cycle."""

    mean_detuning: float = 0.0
    std_per_cycle: float = 0.0

    def __post_init__(self):
        if self.std_per_cycle < 0:
            raise DomainError("detuning std must be non-negative")


@dataclass(frozen=True)
class ContrastModel:
    """Ramsey fringe contrast ``h(T)``.

    ``parametric`` is a Gaussian dephasing law with scale ``tau_inh``;
    ``table`` interpolates linearly between ``(T, h)`` knots.
    """

    mode: str = "parametric"
    tau_inh: float = math.inf
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.mode == "parametric":
            if not self.tau_inh > 0:
                raise DomainError("tau_inh must be positive")
        elif self.mode == "table":
            if self.table is None:
                raise DomainError("table mode needs (T, h) pairs")
            t, h = _table_arrays(self.table)
            if t.size < 2 or t[0] != 0.0 or h[0] != 1.0:
                raise DomainError("contrast table must start at (0, 1) and have at least two knots")
            if np.any(np.diff(t) <= 0):
                raise DomainError("contrast table times must be strictly increasing")
            if np.any(np.diff(h) > 0) or h.min() < 0 or h.max() > 1:
                raise DomainError("contrast table must be non-increasing within [0, 1]")
            object.__setattr__(self, "table", tuple(zip(t.tolist(), h.tolist())))
        else:
            raise DomainError(f"unknown contrast mode {self.mode!r}")


def _table_arrays(table):
    arr = np.asarray(table, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("contrast table must be a sequence of (T, h) pairs")
    return arr[:, 0], arr[:, 1]


def load_contrast_table(path):
    """Read a two-column text file of ``T_seconds h`` into a table-mode model."""
    data = np.loadtxt(path, dtype=float, ndmin=2)
    return ContrastModel(mode="table", table=tuple(map(tuple, data)))


@dataclass(frozen=True)
class CorrelationModel:
    """Exponential loss of probe-readout correlation, timescale ``tau_decay``.

    ``fit_amplitude`` holds the fitted ``B`` once a pulse-count scan has been
    analysed; it is never an input to the simulation.
    """

    tau_decay: float = math.inf
    fit_amplitude: Optional[float] = None

    def __post_init__(self):
        if not self.tau_decay > 0:
            raise DomainError("tau_decay must be positive (inf disables the decay)")


@dataclass(frozen=True)
class DriftModel:
    """Slow fractional drifts of pulse area and trap intensity.

    Both follow an AR(1) process across cycles with correlation time
    ``drift_correlation_time``. ``pulse_area_drift_rate`` adds a linear
    ramp of fractional area per cycle. Trap intensity changes enter the
    detuning through ``trap_light_shift`` (Hz at nominal intensity).
    """

    pulse_area_drift_std: float = 0.0
    trap_intensity_drift_std: float = 0.0
    drift_correlation_time: float = 600.0
    pulse_area_drift_rate: float = 0.0
    trap_light_shift: float = -1700.0

    def __post_init__(self):
        if self.pulse_area_drift_std < 0 or self.trap_intensity_drift_std < 0:
            raise DomainError("drift stds must be non-negative")
        if not self.drift_correlation_time > 0:
            raise DomainError("drift_correlation_time must be positive")


@dataclass(frozen=True)
class NoiseModels:
    detuning: DetuningModel = field(default_factory=DetuningModel)
    contrast: ContrastModel = field(default_factory=ContrastModel)
    correlation: CorrelationModel = field(default_factory=CorrelationModel)
    drift: DriftModel = field(default_factory=DriftModel)
    cycle_time: float = 5.0
    var_delta_chi: float = 0.0
    delta_chi_scope: str = "shot"


@dataclass(frozen=True)
class CycleNoise:
    """Classical parameters shared by every experiment in one MOT cycle."""

    detuning: float
    area_offset: float = 0.0
    intensity_offset: float = 0.0
    delta_chi: Optional[float] = None

    @property
    def area_scale(self):
        return 1.0 + self.area_offset


def _ar1_coefficient(dt, tau):
    if math.isinf(tau):
        return 1.0
    return math.exp(-dt / tau)


def sample_cycle_noise(models, cycle_index, rng, previous=None):
    """Draw the classical noise of one cycle.

    ``previous`` is the :class:`CycleNoise` of the preceding cycle; the
    stationary distribution is used when it is ``None``.
    """
    d = models.drift
    r = _ar1_coefficient(models.cycle_time, d.drift_correlation_time)
    innov = math.sqrt(max(0.0, 1.0 - r * r))
    z = rng.standard_normal(4)
    ramp = d.pulse_area_drift_rate * cycle_index
    if previous is None:
        area = d.pulse_area_drift_std * z[1]
        intensity = d.trap_intensity_drift_std * z[2]
    else:
        area = r * (previous.area_offset - d.pulse_area_drift_rate * (cycle_index - 1)) \
            + innov * d.pulse_area_drift_std * z[1]
        intensity = r * previous.intensity_offset + innov * d.trap_intensity_drift_std * z[2]
    detuning = models.detuning.mean_detuning + models.detuning.std_per_cycle * z[0] \
        + d.trap_light_shift * intensity
    dchi = None
    if models.delta_chi_scope == "cycle":
        dchi = math.sqrt(models.var_delta_chi) * z[3]
    return CycleNoise(float(detuning), float(area + ramp), float(intensity), dchi)


def _ar1_series(n, r, std, rng):
    """Stationary AR(1) series of length ``n`` with marginal std ``std``."""
    z = rng.standard_normal(n)
    if n == 0:
        return z
    if r >= 1.0:
        return np.full(n, std * z[0])
    e = z * std * math.sqrt(1.0 - r * r)
    e[0] = z[0] * std
    return lfilter([1.0], [1.0, -r], e)


def sample_cycle_noise_series(models, n_cycles, rng):
    """Vectorised :func:`sample_cycle_noise` for cycles ``0 .. n_cycles-1``.

    Returns a dict of arrays: ``detuning``, ``area_scale``, ``intensity`` and
    ``delta_chi`` (NaN when the imbalance is drawn per shot).
    """
    d = models.drift
    r = _ar1_coefficient(models.cycle_time, d.drift_correlation_time)
    det = models.detuning.mean_detuning + models.detuning.std_per_cycle * rng.standard_normal(n_cycles)
    area = _ar1_series(n_cycles, r, d.pulse_area_drift_std, rng)
    area = area + d.pulse_area_drift_rate * np.arange(n_cycles)
    intensity = _ar1_series(n_cycles, r, d.trap_intensity_drift_std, rng)
    det = det + d.trap_light_shift * intensity
    if models.delta_chi_scope == "cycle":
        dchi = math.sqrt(models.var_delta_chi) * rng.standard_normal(n_cycles)
    else:
        dchi = np.full(n_cycles, np.nan)
    return {"detuning": det, "area_scale": 1.0 + area, "intensity": intensity, "delta_chi": dchi}


def fringe_contrast(T, model):
    """Ramsey contrast after free evolution ``T`` (seconds); accepts arrays."""
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < 0):
        raise DomainError("interrogation time must be non-negative")
    if model.mode == "parametric":
        if math.isinf(model.tau_inh):
            h = np.ones_like(T_arr)
        else:
            h = np.exp(-(T_arr**2) / (2.0 * model.tau_inh**2))
    else:
        t, hk = _table_arrays(model.table)
        if np.any(T_arr > t[-1]):
            raise ExtrapolationError(f"T beyond contrast table range (max {t[-1]} s)")
        h = np.interp(T_arr, t, hk)
    return float(h) if h.ndim == 0 else h


def ar1_unit(times, tau, rng, shape=()):
    """Unit-variance Gaussian process with kernel ``exp(-|dt| / tau)``.

    Returns an array of shape ``shape + (len(times),)``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise DomainError("times must be one-dimensional")
    if np.any(np.diff(times) < 0):
        raise DomainError("times must be sorted ascending")
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    z = rng.standard_normal(shape + (times.size,))
    if times.size == 0:
        return z
    if math.isinf(tau):
        r = np.ones(times.size - 1)
    else:
        r = np.exp(-np.diff(times) / tau)
    out = np.empty_like(z)
    out[..., 0] = z[..., 0]
    for k in range(1, times.size):
        out[..., k] = r[k - 1] * out[..., k - 1] + math.sqrt(max(0.0, 1.0 - r[k - 1] ** 2)) * z[..., k]
    return out


def latent_jz_process(prior_var, times, model, rng, size=None):
    """Latent probe-weighted Jz at each probe time.

    Stationary with variance ``prior_var`` and covariance
    ``prior_var * exp(-|t_i - t_j| / tau_decay)``.
    """
    if prior_var < 0:
        raise DomainError("prior variance must be non-negative")
    shape = () if size is None else size
    return math.sqrt(prior_var) * ar1_unit(times, model.tau_decay, rng, shape)
