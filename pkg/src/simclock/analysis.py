"""Fits, phase normalisation and noise budgets.

Estimators follow the scikit-learn conventions (``fit`` returns ``self``,
learned attributes end in ``_``, ``get_params`` works) so they compose with
the usual tooling. Thin functional wrappers return :class:`FitResult`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .errors import DomainError, FitError, NotConvergedError


# ------------------------------------------------------------------ decibels

def to_db(ratio):
    r = np.asarray(ratio, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("decibel conversion needs a positive ratio")
    out = 10.0 * np.log10(r)
    return float(out) if out.ndim == 0 else out


def from_db(db):
    out = 10.0 ** (np.asarray(db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def xi_lin(eta, kappa_sq):
    """Squeezing expected from a linear Gaussian model, ``[(1-eta)^2 (1+kappa^2)]^-1``."""
    if not 0.0 <= eta < 1.0 or kappa_sq <= -1.0:
        raise DomainError("need 0 <= eta < 1 and kappa^2 > -1")
    return 1.0 / ((1.0 - eta) ** 2 * (1.0 + kappa_sq))


def kappa_sq_for_xi_lin(xi_lin_db, eta):
    """Invert :func:`xi_lin` for ``kappa^2`` given the target in dB."""
    return 1.0 / (from_db(xi_lin_db) * (1.0 - eta) ** 2) - 1.0


def conditional_reduction(kappa_sq, rho=1.0):
    """Conditional projection noise over CSS projection noise.

    For two Jz readouts whose atomic parts have correlation ``rho`` and a
    first readout with projection-to-shot ratio ``kappa_sq``.
    """
    g = kappa_sq / (1.0 + kappa_sq)
    return 1.0 - np.asarray(rho) ** 2 * g


# --------------------------------------------------------------- containers

@dataclass
class FitResult:
    coefficients: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int = 1
    names: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if not (np.all(np.isfinite(self.coefficients)) and np.isfinite(self.residual_norm)):
            raise FitError("fit produced non-finite coefficients")

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def __getitem__(self, name):
        return self.coefficients[self.names.index(name)]

    def to_dict(self):
        d = {"names": list(self.names), "coefficients": self.coefficients.tolist(),
             "stderr": self.stderr.tolist(), "residual_norm": self.residual_norm,
             "iterations": self.iterations}
        d.update(self.extra)
        return d


@dataclass(frozen=True)
class NoiseBudget:
    """Variance split into shot, projection and classical parts."""

    shot: float
    projection: float
    classical: float
    total: Optional[float] = None

    def __post_init__(self):
        for k in ("shot", "projection", "classical"):
            if getattr(self, k) < 0:
                raise DomainError(f"{k} noise component is negative")
        if self.total is None:
            object.__setattr__(self, "total", self.shot + self.projection + self.classical)

    def to_dict(self):
        return {"shot": self.shot, "projection": self.projection,
                "classical": self.classical, "total": self.total}


def _sigma(y, sigma):
    if sigma is None:
        return np.ones_like(y)
    s = column_or_1d(np.asarray(sigma, dtype=float))
    if s.shape != y.shape or np.any(~(s > 0)):
        raise DomainError("sigma must be positive and match the data")
    return s


# ------------------------------------------------------- quadratic variance

class QuadraticVarianceRegressor(RegressorMixin, BaseEstimator):
    """Weighted fit of ``var = a0 + a1 N + a2 N^2``.

    ``sample_weight`` is taken as ``1 / sigma^2``; with per-bin variance
    errors use ``sigma = var * sqrt(2 / (m - 1))``.
    """

    def __init__(self, rcond=1e-12):
        self.rcond = rcond

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_min_samples=3)
        y = column_or_1d(np.asarray(y, dtype=float))
        n = X[:, 0]
        w = np.ones_like(y) if sample_weight is None else column_or_1d(np.asarray(sample_weight, float))
        if np.any(w < 0):
            raise DomainError("weights must be non-negative")
        scale = max(float(np.abs(n).max()), 1.0)
        x = n / scale
        A = np.column_stack([np.ones_like(x), x, x * x])
        sw = np.sqrt(w)
        Aw, yw = A * sw[:, None], y * sw
        sv = np.linalg.svd(Aw, compute_uv=False)
        if sv.size < 3 or sv[-1] <= self.rcond * sv[0]:
            raise FitError("rank-deficient design for the quadratic variance fit")
        coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
        resid = yw - Aw @ coef
        dof = max(len(y) - 3, 1)
        cov_s = np.linalg.inv(Aw.T @ Aw)
        if sample_weight is None:
            cov_s = cov_s * float(resid @ resid) / dof
        D = np.diag([1.0, 1.0 / scale, 1.0 / scale**2])
        self.coef_ = D @ coef
        self.covariance_ = D @ cov_s @ D
        self.residual_norm_ = float(np.linalg.norm(resid))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        n = check_array(X)[:, 0]
        a0, a1, a2 = self.coef_
        return a0 + a1 * n + a2 * n * n

    def decompose(self, n_atoms):
        """Budget at ``n_atoms`` with negative fitted parts clipped to zero."""
        check_is_fitted(self, "coef_")
        a0, a1, a2 = self.coef_
        return NoiseBudget(max(a0, 0.0), max(a1 * n_atoms, 0.0), max(a2 * n_atoms**2, 0.0))


def quadratic_variance_fit(n_atoms, var, sigma=None):
    """Functional form of :class:`QuadraticVarianceRegressor`."""
    var = column_or_1d(np.asarray(var, dtype=float))
    w = None if sigma is None else 1.0 / _sigma(var, sigma) ** 2
    reg = QuadraticVarianceRegressor().fit(np.asarray(n_atoms, dtype=float).reshape(-1, 1), var, w)
    return FitResult(reg.coef_, reg.covariance_, reg.residual_norm_, 1, ("a0", "a1", "a2"))


# ------------------------------------------------------ exponential approach

class ExpApproachRegressor(RegressorMixin, BaseEstimator):
    """``y = 1 - B exp(-t / tau)`` by damped Gauss-Newton.

    The initial ``tau`` comes from a straight-line fit to ``log(1 - y)``.
    Iteration stops when the relative parameter step falls below ``tol``;
    reaching ``max_iter`` raises :class:`NotConvergedError` with the best
    iterate attached.
    """

    def __init__(self, tol=1e-8, max_iter=200):
        self.tol = tol
        self.max_iter = max_iter

    @staticmethod
    def _model(t, B, tau):
        return 1.0 - B * np.exp(-t / tau)

    def _init(self, t, y):
        d = 1.0 - y
        ok = d > 0
        if ok.sum() < 2 or np.ptp(t[ok]) == 0:
            raise FitError("cannot initialise: need two points with y < 1 at distinct t")
        slope, icpt = np.polyfit(t[ok], np.log(d[ok]), 1)
        if not slope < 0:
            raise FitError("data do not approach unity; exponential fit is degenerate")
        return np.array([math.exp(icpt), -1.0 / slope])

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_min_samples=3)
        t = X[:, 0]
        y = column_or_1d(np.asarray(y, dtype=float))
        if not np.all(np.isfinite(y)):
            raise DomainError("y values must be finite")
        w = np.ones_like(y) if sample_weight is None else column_or_1d(np.asarray(sample_weight, float))
        sw = np.sqrt(w)
        p = self._init(t, y)

        def resid(q):
            return (y - self._model(t, *q)) * sw

        cost = float(resid(p) @ resid(p))
        best = p.copy()
        for it in range(1, self.max_iter + 1):
            B, tau = p
            e = np.exp(-t / tau)
            J = np.column_stack([-e, -B * t * e / tau**2]) * sw[:, None]   # d model / d params
            r = resid(p)
            step, *_ = np.linalg.lstsq(J, r, rcond=None)
            lam = 1.0
            while lam > 1e-10:
                q = p + lam * step
                if q[1] > 0:
                    c = float(resid(q) @ resid(q))
                    if c <= cost:
                        break
                lam *= 0.5
            else:
                q, c = p, cost
            rel = np.max(np.abs(q - p) / np.maximum(np.abs(q), 1e-300))
            p, cost = q, c
            best = p.copy()
            if rel < self.tol:
                break
        else:
            raise NotConvergedError(f"no convergence after {self.max_iter} iterations", best=best)
        B, tau = p
        e = np.exp(-t / tau)
        J = np.column_stack([-e, -B * t * e / tau**2]) * sw[:, None]
        JTJ = J.T @ J
        if np.linalg.cond(JTJ) > 1e14:
            raise FitError("singular Jacobian: parameters are not identifiable")
        cov = np.linalg.inv(JTJ)
        if sample_weight is None:
            cov = cov * cost / max(len(y) - 2, 1)
        self.B_, self.tau_ = float(B), float(tau)
        self.covariance_ = cov
        self.residual_norm_ = math.sqrt(cost)
        self.n_iter_ = it
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "tau_")
        return self._model(check_array(X)[:, 0], self.B_, self.tau_)


def exp_approach_fit(t, y, sigma=None, tol=1e-8, max_iter=200):
    y = column_or_1d(np.asarray(y, dtype=float))
    w = None if sigma is None else 1.0 / _sigma(y, sigma) ** 2
    reg = ExpApproachRegressor(tol, max_iter).fit(np.asarray(t, float).reshape(-1, 1), y, w)
    return FitResult([reg.B_, reg.tau_], reg.covariance_, reg.residual_norm_, reg.n_iter_, ("B", "tau"))


# -------------------------------------------------- multi-pulse correlation

def multipulse_ratio(tau, first_center, second_centers, kappa_sq):
    """Conditional over unconditional projection noise of a combined readout.

    The second measurement averages equal-photon pulses at
    ``second_centers``; atomic readouts decorrelate as ``exp(-|dt| / tau)``.
    """
    tc = np.asarray(second_centers, dtype=float)
    r12 = np.exp(-(tc - first_center) / tau).mean()
    r22 = np.exp(-np.abs(tc[:, None] - tc[None, :]) / tau).mean()
    return 1.0 - kappa_sq / (1.0 + kappa_sq) * r12**2 / r22


def kernel_tau_fit(first_center, centers_list, ratios, kappa_sq, sigma=None):
    """Fit ``tau`` of the exponential kernel to multi-pulse ratio data."""
    ratios = np.asarray(ratios, dtype=float)
    s = np.ones_like(ratios) if sigma is None else np.asarray(sigma, dtype=float)

    def cost(log_tau):
        tau = math.exp(log_tau)
        pred = np.array([multipulse_ratio(tau, first_center, c, kappa_sq) for c in centers_list])
        return float((((ratios - pred) / s) ** 2).sum())

    from scipy.optimize import minimize_scalar
    res = minimize_scalar(cost, bounds=(math.log(1e-6), math.log(1.0)), method="bounded",
                          options={"xatol": 1e-10})
    return FitResult([math.exp(res.x)], np.zeros((1, 1)), math.sqrt(res.fun), int(res.nfev), ("tau",))


# ------------------------------------------------------ classical T^2 term

class QuadraticInTRegressor(RegressorMixin, BaseEstimator):
    """One-parameter weighted fit ``y = c T^2``.

    In normalised phase units ``c = (2 pi)^2 var(Delta)``, so
    ``sigma_delta_ = sqrt(c) / (2 pi)`` is the detuning jitter in Hz.
    """

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_min_samples=2)
        T = X[:, 0]
        y = column_or_1d(np.asarray(y, dtype=float))
        w = np.ones_like(y) if sample_weight is None else column_or_1d(np.asarray(sample_weight, float))
        s4 = float(np.sum(w * T**4))
        if s4 == 0:
            raise FitError("all interrogation times are zero")
        c = float(np.sum(w * T**2 * y)) / s4
        resid = (y - c * T**2) * np.sqrt(w)
        var_c = 1.0 / s4 if sample_weight is not None else float(resid @ resid) / max(len(y) - 1, 1) / s4
        if c < 0:
            raise FitError(f"fitted classical coefficient is negative ({c:.3g})")
        self.coef_ = c
        self.coef_var_ = var_c
        self.residual_norm_ = float(np.linalg.norm(resid))
        self.sigma_delta_ = math.sqrt(c) / (2 * math.pi)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.coef_ * check_array(X)[:, 0] ** 2


def classical_vs_T_fit(T, classical, sigma=None):
    classical = column_or_1d(np.asarray(classical, dtype=float))
    w = None if sigma is None else 1.0 / _sigma(classical, sigma) ** 2
    reg = QuadraticInTRegressor().fit(np.asarray(T, float).reshape(-1, 1), classical, w)
    sd = reg.sigma_delta_
    sd_err = math.sqrt(reg.coef_var_) / (8 * math.pi**2 * sd) if sd > 0 else float("inf")
    return FitResult([reg.coef_], [[reg.coef_var_]], reg.residual_norm_, 1, ("c",),
                     {"sigma_delta_hz": sd, "sigma_delta_hz_err": sd_err})


# ------------------------------------------------------ phase normalisation

def signal_slope(chi, eta, h, n_atoms):
    """``A(T) = chi (1 - eta) h(T) N``: phase per radian of atomic phase."""
    A = chi * (1.0 - eta) * h * n_atoms
    if not np.all(np.asarray(A) > 0):
        raise DomainError("normalisation slope must be positive (h(T) = 0?)")
    return A


class ConditionalNoiseEstimator(TransformerMixin, BaseEstimator):
    """Learns ``zeta = cov(phi1, phi2) / var(phi1)``; transforms to ``phi2 - zeta phi1``."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=3)
        if X.shape[1] != 2:
            raise DomainError("expected two columns (phi1, phi2)")
        c = np.cov(X, rowvar=False)
        if not c[0, 0] > 0:
            raise DomainError("var(phi1) must be positive")
        self.zeta_ = c[0, 1] / c[0, 0]
        self.conditional_variance_ = c[1, 1] - c[0, 1] * self.zeta_
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "zeta_")
        X = check_array(X)
        return (X[:, 1] - self.zeta_ * X[:, 0]).reshape(-1, 1)


class PhaseNormalizer(TransformerMixin, BaseEstimator):
    """Map ``(phi1, phi2)`` to atomic-phase units ``(phi2 / A, (phi2 - zeta phi1) / A)``.

    ``zeta`` is learned in ``fit`` unless given.
    """

    def __init__(self, chi=1.0, eta=0.0, h=1.0, n_atoms=1.0, zeta=None):
        self.chi = chi
        self.eta = eta
        self.h = h
        self.n_atoms = n_atoms
        self.zeta = zeta

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        self.slope_ = signal_slope(self.chi, self.eta, self.h, self.n_atoms)
        if self.zeta is None:
            self.zeta_ = ConditionalNoiseEstimator().fit(X).zeta_
        else:
            self.zeta_ = float(self.zeta)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X)
        return np.column_stack([X[:, 1], X[:, 1] - self.zeta_ * X[:, 0]]) / self.slope_


def normalize_phase(phi1, phi2, chi, eta, h, n_atoms, zeta=None):
    """Return ``(tilde_phi2, tilde_phi21, zeta)``."""
    X = np.column_stack([np.asarray(phi1, float), np.asarray(phi2, float)])
    pn = PhaseNormalizer(chi, eta, h, n_atoms, zeta).fit(X)
    out = pn.transform(X)
    return out[:, 0], out[:, 1], pn.zeta_


# ------------------------------------------------------- Wineland crossing

@dataclass(frozen=True)
class CrossingResult:
    t_cross: Optional[float]
    t_ideal: Optional[float]
    level: float

    @property
    def found(self):
        return self.t_cross is not None


def _first_crossing(T, y, level):
    T = np.asarray(T, dtype=float)
    d = np.asarray(y, dtype=float) - level
    if d[0] > 0:
        return None
    hits = np.flatnonzero(d == 0)
    for k in range(len(T) - 1):
        if d[k] == 0 and (k == 0 or d[k + 1] >= 0):
            return float(T[k])
        if d[k] < 0 < d[k + 1]:
            return float(brentq(lambda x: np.interp(x, T, d), T[k], T[k + 1], xtol=1e-15, rtol=1e-14))
    if hits.size and hits[-1] == len(T) - 1:
        return float(T[-1])
    return None


def wineland_crossing(T, curve, n_atoms, ideal_curve=None):
    """Smallest ``T`` at which a normalised conditional variance reaches ``1 / N``.

    ``curve`` is ``var(tilde phi21)`` on the grid ``T`` (ascending). The
    optional ``ideal_curve`` is the same quantity with classical noise
    removed. Missing crossings are reported as ``None``.
    """
    T = column_or_1d(np.asarray(T, dtype=float))
    if np.any(np.diff(T) <= 0):
        raise DomainError("T grid must be strictly increasing")
    level = 1.0 / n_atoms
    tc = _first_crossing(T, curve, level)
    ti = _first_crossing(T, ideal_curve, level) if ideal_curve is not None else None
    return CrossingResult(tc, ti, level)


def calibrate_contrast_for_crossing(t_cross, eta, kappa_sq, tau_decay=math.inf, lag_offset=44e-6):
    """Gaussian dephasing scale that puts the idealised crossing at ``t_cross``.

    Without shot and classical noise the normalised conditional variance is
    ``r(T) / ((1 - eta)^2 h(T)^2 N)`` where ``r`` is the conditional
    reduction at the probe lag ``lag_offset + T``. Setting this equal to
    ``1 / N`` fixes ``h(t_cross)``.
    """
    rho = math.exp(-(lag_offset + t_cross) / tau_decay) if math.isfinite(tau_decay) else 1.0
    r = float(conditional_reduction(kappa_sq, rho))
    h2 = r / (1.0 - eta) ** 2
    if not 0 < h2 < 1:
        raise DomainError("no Gaussian contrast law yields a crossing at that time")
    return t_cross / math.sqrt(-math.log(h2))


# ---------------------------------------------------------------- fringes

def fit_fringe(theta, signal):
    """Least-squares ``a cos(theta - theta_hat) + c``; returns ``(a, theta_hat, c)``."""
    theta = np.asarray(theta, dtype=float)
    A = np.column_stack([np.cos(theta), np.sin(theta), np.ones_like(theta)])
    (p, q, c), *_ = np.linalg.lstsq(A, np.asarray(signal, dtype=float), rcond=None)
    return math.hypot(p, q), math.atan2(q, p), c
