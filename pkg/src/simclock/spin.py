"""Gaussian moments of the collective pseudo-spin.

The state of ``N_A`` two-level atoms is summarised by the mean Bloch vector
``(<Jx>, <Jy>, <Jz>)`` and the 3x3 covariance of the spin components, in
units where hbar = 1 and a single atom carries spin 1/2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStateError, DomainError

_AXIS_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpinMoments:
    """Mean spin vector and covariance matrix of a Gaussian collective spin."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (3,) or cov.shape != (3, 3):
            raise DomainError("SpinMoments needs a 3-vector mean and a 3x3 covariance")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise DomainError("SpinMoments entries must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9 * scale):
            raise DomainError("covariance matrix is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() < -1e-9 * scale:
            raise DomainError("covariance matrix is not positive semidefinite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))

    @property
    def jx(self):
        return float(self.mean[0])

    @property
    def jy(self):
        return float(self.mean[1])

    @property
    def jz(self):
        return float(self.mean[2])

    @property
    def var_jz(self):
        return float(self.cov[2, 2])

    @property
    def var_jy(self):
        return float(self.cov[1, 1])

    @property
    def length(self):
        """Length of the mean spin vector, ``|<J>|``."""
        return float(np.linalg.norm(self.mean))

    def check_length(self, n_atoms, rtol=1e-9):
        """Raise if ``|<J>|`` exceeds ``n_atoms / 2`` by more than ``rtol * n_atoms``."""
        if self.length > n_atoms / 2 + rtol * max(n_atoms, 1.0):
            raise DomainError(f"|<J>| = {self.length} exceeds N/2 for N = {n_atoms}")

    def __eq__(self, other):
        if not isinstance(other, SpinMoments):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def __repr__(self):
        return f"SpinMoments(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


@dataclass(frozen=True)
class AtomSample:
    """One atomic ensemble inside a MOT loading cycle."""

    n_atoms: float
    experiment_index: int = 0
    cycle_index: int = 0

    def __post_init__(self):
        if not self.n_atoms > 0:
            raise DomainError(f"n_atoms must be positive, got {self.n_atoms}")
        if not 0 <= self.experiment_index <= 3:
            raise DomainError("experiment_index must lie in 0..3")


def make_css(n_atoms):
    """Coherent spin state polarised along +x.

    Leading-order Holstein-Primakoff moments: the variance along the mean
    direction is zero and each transverse variance is ``n_atoms / 4``.
    """
    if n_atoms < 0:
        raise DomainError(f"n_atoms must be non-negative, got {n_atoms}")
    n = float(n_atoms)
    return SpinMoments(np.array([n / 2, 0.0, 0.0]), np.diag([0.0, n / 4, n / 4]))


def make_polarized(n_atoms, direction=(0.0, 0.0, -1.0)):
    """Coherent spin state along an arbitrary unit ``direction``.

    The default is every atom in the lower clock level, the starting point
    of all pulse sequences.
    """
    if n_atoms < 0:
        raise DomainError(f"n_atoms must be non-negative, got {n_atoms}")
    d = _unit(direction)
    n = float(n_atoms)
    transverse = np.eye(3) - np.outer(d, d)
    return SpinMoments(d * n / 2, transverse * n / 4)


def _unit(axis):
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,):
        raise DomainError("axis must be a 3-vector")
    norm = np.linalg.norm(axis)
    if abs(norm - 1.0) > _AXIS_TOL:
        raise DomainError(f"rotation axis must be a unit vector (|axis| = {norm!r})")
    return axis


def rotation_matrix(axis, angle):
    """Right-handed rotation by ``angle`` about the unit vector ``axis``."""
    n = _unit(axis)
    k = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_matrices(axis, angles):
    """Stack of rotations about one axis, shape ``(len(angles), 3, 3)``."""
    n = _unit(axis)
    angles = np.asarray(angles, dtype=float)
    k = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rotate(state, axis, angle):
    """Rotate both moments: ``mean -> R mean`` and ``cov -> R cov R^T``."""
    r = rotation_matrix(axis, angle)
    return SpinMoments(r @ state.mean, r @ state.cov @ r.T)


def apply_contrast(state, factor):
    """Shorten the mean spin by ``factor``; fluctuations are left untouched."""
    if not 0.0 <= factor <= 1.0:
        raise DomainError(f"contrast factor must lie in [0, 1], got {factor}")
    return SpinMoments(state.mean * factor, state.cov)


def squeezing_parameter(state, n_atoms):
    """Wineland parameter ``var(Jz) * N / |<J>|^2``; below 1 witnesses entanglement."""
    length_sq = float(state.mean @ state.mean)
    if length_sq == 0.0:
        raise DegenerateStateError("squeezing parameter undefined for a zero mean spin")
    return state.var_jz * n_atoms / length_sq


def transverse_axis(mean):
    """Unit vector perpendicular to both the mean spin and z.

    This is the quadrature that absorbs measurement backaction when Jz is
    read out. Returns ``None`` when the mean is parallel to z or zero.
    """
    v = np.cross([0.0, 0.0, 1.0], mean)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return None
    return v / norm
