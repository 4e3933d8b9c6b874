"""Monte Carlo campaign runner and ensemble estimators.

A campaign reproduces the acquisition protocol: MOT loading cycles, each
with up to four recycled atomic experiments and a few reference shots on
the empty interferometer. Trials are simulated in fixed blocks of cycles,
each with its own seeded stream, so results do not depend on the number
of worker processes.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import measurement as meas
from .errors import ConfigError, DegenerateStateError, DomainError, PairingError
from .measurement import DecoherenceModel, ProbeCalibration, ProbePulse
from .noise import NoiseModels, fringe_contrast, sample_cycle_noise_series
from .sequencer import (ATOMIC_ROLES, MwPulse, Probe, Sequence, TrialRecord, Wait,
                        combine_second, simulate_shots, with_atom_number_probe)

BLOCK_CYCLES = 256


@dataclass(frozen=True)
class AtomNumberLaw:
    """Initial atom number per cycle and its loss across recycled experiments.

    ``retention[k]`` multiplies the atom number between experiment ``k``
    and ``k + 1``. The initial number is Normal(``mean``, ``rel_std * mean``)
    truncated to positive values.
    """

    mean: float = 1.2e5
    rel_std: float = 0.10
    retention: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.mean > 0 or self.rel_std < 0:
            raise ConfigError("atom number mean must be positive and rel_std non-negative")
        r = tuple(float(x) for x in np.atleast_1d(self.retention))
        if any(not 0.0 < x <= 1.0 for x in r):
            raise ConfigError("retention factors must lie in (0, 1]")
        object.__setattr__(self, "retention", r)

    def factors(self, experiments):
        r = list(self.retention)
        if len(r) == 1:
            r = r * max(experiments - 1, 0)
        if len(r) < experiments - 1:
            raise ConfigError("not enough retention factors for the experiments per cycle")
        return np.cumprod([1.0] + r[: experiments - 1])

    def sample_initial(self, n_cycles, rng):
        n0 = self.mean * (1.0 + self.rel_std * rng.standard_normal(n_cycles))
        bad = n0 <= 0
        while np.any(bad):
            n0[bad] = self.mean * (1.0 + self.rel_std * rng.standard_normal(int(bad.sum())))
            bad = n0 <= 0
        return n0


@dataclass(frozen=True)
class CampaignConfig:
    sequence: Sequence
    calibration: ProbeCalibration
    n_cycles: int = 1200
    experiments_per_cycle: int = 4
    reference_shots: int = 3
    cycle_time: float = 5.0
    atoms: AtomNumberLaw = field(default_factory=AtomNumberLaw)
    noise: NoiseModels = field(default_factory=NoiseModels)
    decoherence: DecoherenceModel = field(default_factory=DecoherenceModel)
    atom_number_pulse: Optional[ProbePulse] = field(default_factory=lambda: ProbePulse(6e6))
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_cycles < 2:
            raise ConfigError("n_cycles must be at least 2 for differential subtraction")
        if not 1 <= self.experiments_per_cycle <= 4:
            raise ConfigError("experiments_per_cycle must lie in 1..4")
        if self.reference_shots < 0 or self.workers < 1:
            raise ConfigError("reference_shots must be >= 0 and workers >= 1")
        if not self.cycle_time > 0:
            raise ConfigError("cycle_time must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        self.atoms.factors(self.experiments_per_cycle)
        if not any(isinstance(e, Probe) and e.role in ATOMIC_ROLES for e in self.sequence.events):
            raise ConfigError("sequence has no atomic probe")

    @property
    def full_sequence(self):
        if self.atom_number_pulse is None:
            return self.sequence
        return with_atom_number_probe(self.sequence, self.atom_number_pulse)


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _run_block(config, seq, block, n_atoms, detuning, area, dchi):
    """Simulate one block of cycles; arrays are indexed by cycle within the block."""
    rng = _stream(config.seed, 1, block)
    C, E, R = n_atoms.shape[0], config.experiments_per_cycle, config.reference_shots
    rep = lambda x: np.repeat(x, E)
    b = simulate_shots(seq, n_atoms.ravel(), config.calibration, config.noise, config.decoherence,
                       rng, rep(detuning), rep(area), rep(dchi))
    ref = None
    if R:
        rb = simulate_shots(seq, np.zeros(C * R), config.calibration, config.noise,
                            config.decoherence, rng)
        ref = rb.phases.reshape(C, R, -1)
    return b.phases, b.latent_jz, ref, b


def run_campaign(config: CampaignConfig):
    """Simulate every cycle of ``config``; deterministic in the seed."""
    seq = config.full_sequence
    noise = replace(config.noise, cycle_time=config.cycle_time)
    config = replace(config, noise=noise)
    C, E = config.n_cycles, config.experiments_per_cycle
    crng = _stream(config.seed, 0)
    n0 = config.atoms.sample_initial(C, crng)
    series = sample_cycle_noise_series(noise, C, crng)
    n_atoms = n0[:, None] * config.atoms.factors(E)[None, :]

    blocks = range(math.ceil(C / BLOCK_CYCLES))
    args = []
    for blk in blocks:
        s = slice(blk * BLOCK_CYCLES, min(C, (blk + 1) * BLOCK_CYCLES))
        args.append((config, seq, blk, n_atoms[s], series["detuning"][s],
                     series["area_scale"][s], series["delta_chi"][s]))
    if config.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            out = list(pool.map(_run_block_star, args))
    else:
        out = [_run_block_star(a) for a in args]

    phases = np.concatenate([o[0] for o in out])
    latent = np.concatenate([o[1] for o in out])
    ref = np.concatenate([o[2] for o in out]) if config.reference_shots else None
    first = out[0][3]
    return CampaignResult(
        config=config,
        sequence=seq,
        cycle=np.repeat(np.arange(C), E),
        experiment=np.tile(np.arange(E), C),
        n_atoms=n_atoms.ravel(),
        phases=phases,
        latent_jz=latent,
        reference=ref,
        roles=first.roles,
        photons=first.photons,
        centers=first.centers,
        detuning=series["detuning"],
    )


def _run_block_star(a):
    return _run_block(*a)


@dataclass
class CampaignResult:
    """Columnar campaign output; indexing yields :class:`TrialRecord` objects."""

    config: CampaignConfig
    sequence: Sequence
    cycle: np.ndarray
    experiment: np.ndarray
    n_atoms: np.ndarray
    phases: np.ndarray
    latent_jz: np.ndarray
    reference: Optional[np.ndarray]
    roles: tuple
    photons: np.ndarray
    centers: np.ndarray
    detuning: np.ndarray

    def __len__(self):
        return self.cycle.size

    def _col(self, role):
        return np.flatnonzero(np.asarray(self.roles) == role)

    @property
    def phi1(self):
        return combine_second(self.phases, self.roles, self.photons)[0]

    @property
    def phi2(self):
        return combine_second(self.phases, self.roles, self.photons)[1]

    @property
    def sub_outcomes(self):
        return self.phases[:, self._col("second_qnd")]

    @property
    def n_atoms_measured(self):
        ia = self._col("atom_number")
        if ia.size == 0:
            return self.n_atoms.copy()
        return meas.atom_number_from_phase(self.phases[:, ia[0]], self.config.calibration)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        i = range(len(self))[i]
        row = self.phases[i:i + 1]
        phi1, phi2 = combine_second(row, self.roles, self.photons)
        ia = self._col("atom_number")
        n_meas = (float(meas.atom_number_from_phase(row[0, ia[0]], self.config.calibration))
                  if ia.size else float(self.n_atoms[i]))
        pulses = [e.pulse for e in self.sequence.events if isinstance(e, Probe)]
        kinds = {"atom_number": "atom_number", "reference": "empty_reference"}
        outcomes = tuple(meas.PhaseOutcome(float(v), p, kinds.get(r, "atomic"))
                         for v, p, r in zip(row[0], pulses, self.roles))
        return TrialRecord(int(self.cycle[i]), int(self.experiment[i]), float(self.n_atoms[i]),
                           n_meas, float(phi1[0]), float(phi2[0]),
                           tuple(row[0, self._col("second_qnd")].tolist()), tuple(self.centers.tolist()),
                           tuple(self.latent_jz[i].tolist()), outcomes)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def columns(self):
        """Estimator inputs only; latent ground truth is excluded."""
        return {"cycle": self.cycle, "experiment": self.experiment,
                "n_atoms": self.n_atoms_measured, "phi1": self.phi1, "phi2": self.phi2,
                "sub": self.sub_outcomes}


# ------------------------------------------------------------- differencing

@dataclass
class PairedDifferences:
    cycle: np.ndarray
    experiment: np.ndarray
    n_atoms: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    sub: np.ndarray

    def __len__(self):
        return self.phi1.size

    def columns(self):
        return {"cycle": self.cycle, "experiment": self.experiment, "n_atoms": self.n_atoms,
                "phi1": self.phi1, "phi2": self.phi2, "sub": self.sub}


def _as_columns(records):
    if hasattr(records, "columns"):
        return records.columns()
    if isinstance(records, dict):
        return records
    recs = list(records)
    if not recs:
        raise PairingError("no records")
    return {"cycle": np.array([r.cycle_index for r in recs]),
            "experiment": np.array([r.experiment_index for r in recs]),
            "n_atoms": np.array([r.n_atoms_measured for r in recs], dtype=float),
            "phi1": np.array([r.phi1 for r in recs], dtype=float),
            "phi2": np.array([r.phi2 for r in recs], dtype=float),
            "sub": np.array([r.sub_outcomes for r in recs], dtype=float)}


def differential_subtract(records):
    """Difference trial ``k`` of cycle ``c`` against trial ``k`` of cycle ``c + 1``.

    Pairs are disjoint, ``(0, 1), (2, 3), ...``; a trailing odd cycle is
    dropped. Differences are divided by sqrt(2) so their variance is a
    single-trial variance; the paired atom number is the mean of the two.
    """
    col = _as_columns(records)
    cyc = np.asarray(col["cycle"], dtype=int)
    exp = np.asarray(col["experiment"], dtype=int)
    if np.unique(cyc).size < 2:
        raise PairingError("differential subtraction needs at least two cycles")
    index = {}
    for i, key in enumerate(zip(cyc.tolist(), exp.tolist())):
        if key in index:
            raise PairingError(f"duplicate record for cycle/experiment {key}")
        index[key] = i
    last = cyc.max()
    a, b = [], []
    for (c, k), i in sorted(index.items()):
        if c % 2 or (c == last):
            continue
        j = index.get((c + 1, k))
        if j is None:
            if any(cc == c + 1 for cc, _ in index):
                raise PairingError(f"cycle {c + 1} lacks experiment {k}")
            continue
        a.append(i)
        b.append(j)
    for (c, k) in index:
        if c % 2 and (c - 1, k) not in index and any(cc == c - 1 for cc, _ in index):
            raise PairingError(f"cycle {c - 1} lacks experiment {k}")
    if not a:
        raise PairingError("no complete cycle pairs")
    a, b = np.array(a), np.array(b)
    d = lambda x: (np.asarray(x)[a] - np.asarray(x)[b]) / math.sqrt(2.0)
    n = np.asarray(col["n_atoms"], dtype=float)
    sub = np.asarray(col["sub"], dtype=float)
    return PairedDifferences(cyc[a], exp[a], 0.5 * (n[a] + n[b]), d(col["phi1"]), d(col["phi2"]),
                             d(sub) if sub.size else sub)


# --------------------------------------------------------------- statistics

@dataclass
class SufficientStats:
    """Count, mean and centred cross-product matrix of a set of columns.

    Merging follows the pairwise update of Chan, Golub and LeVeque, so
    partial statistics from different workers combine in any order.
    """

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_data(cls, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mu = x.mean(axis=0)
        xc = x - mu
        return cls(x.shape[0], mu, xc.T @ xc)

    def merge(self, other):
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * self.count * other.count / n
        return SufficientStats(n, mean, m2)

    @property
    def cov(self):
        if self.count < 2:
            raise DegenerateStateError("need at least two samples for a covariance")
        return self.m2 / (self.count - 1)


def merged_stats(x, chunk=4096):
    st = SufficientStats(0, np.zeros(x.shape[1]), np.zeros((x.shape[1],) * 2))
    for s in range(0, x.shape[0], chunk):
        st = st.merge(SufficientStats.from_data(x[s:s + chunk]))
    return st


@dataclass(frozen=True)
class EstimationContext:
    """Model constants needed to turn variances into squeezing figures.

    ``shot1`` and ``shot2`` are the readout-noise variances of the first and
    (combined) second measurement, ``eta`` the spin shortening caused by
    the first measurement and ``h`` the Ramsey contrast at the interrogation
    time (1 without free evolution).
    """

    chi: float
    shot1: float
    shot2: float
    eta: float = 0.0
    h: float = 1.0

    @classmethod
    def from_config(cls, config):
        seq, cal = config.sequence, config.calibration
        first = [e.pulse for e in seq.events if isinstance(e, Probe) and e.role == "first_qnd"]
        second = [e.pulse for e in seq.events if isinstance(e, Probe) and e.role == "second_qnd"]
        n2 = np.array([p.photons_total for p in second])
        w = n2 / n2.sum()
        shot2 = cal.shot_prefactor / n2.sum() + cal.extra_variance * float(w @ w)
        shot1 = meas.shot_variance(first[0], cal) + cal.extra_variance if first else float("nan")
        eta = meas.decoherence_eta(first[0].photons_total, config.decoherence) if first else 0.0
        T = sum(e.duration for e in seq.events if isinstance(e, Wait))
        h = fringe_contrast(T, config.noise.contrast) if T > 0 else 1.0
        return cls(cal.chi, shot1, shot2, eta, float(h))


@dataclass
class EstimatorReport:
    n_samples: int
    n_atoms_mean: float
    zeta: float
    var_phi1: float
    var_phi2: float
    cov_phi12: float
    conditional_variance: float
    conditional_variance_err: float
    zeta_is_optimal: bool
    projection_reduction: float
    kappa_sq_inferred: float
    xi: float
    xi_lin: float
    bins: Optional[list] = None

    @property
    def projection_reduction_db(self):
        return _db(self.projection_reduction)

    @property
    def xi_db(self):
        return _db(self.xi)

    @property
    def xi_lin_db(self):
        return _db(self.xi_lin)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "n_samples", "n_atoms_mean", "zeta", "var_phi1", "var_phi2", "cov_phi12",
            "conditional_variance", "conditional_variance_err", "zeta_is_optimal",
            "projection_reduction", "kappa_sq_inferred", "xi", "xi_lin")}
        for k in ("projection_reduction_db", "xi_db", "xi_lin_db"):
            v = getattr(self, k)
            d[k] = None if v is None else round(v, 2)
        if self.bins is not None:
            d["bins"] = self.bins
        return d


def _db(x):
    return 10.0 * math.log10(x) if x is not None and x > 0 else None


def zeta_grid_check(v1, v2, c12, zeta, rel=1e-6, span=0.5, points=201):
    """True when no ``z`` on a grid around ``zeta`` beats it by more than ``rel``."""
    z = zeta + np.linspace(-span, span, points) * max(abs(zeta), 1e-3)
    cond = lambda zz: v2 - 2 * zz * c12 + zz * zz * v1
    best = cond(zeta)
    return bool(np.all(cond(z) >= best * (1.0 - rel)))


def estimate(records, context: EstimationContext, n_bins=None):
    """Sample moments, optimal ``zeta``, conditional variance and squeezing.

    ``xi`` follows the Wineland definition with the shot noise of the
    second measurement removed:
    ``(var(phi2 - zeta phi1) - shot2) / (chi^2 N (1 - eta)^2 h^2)``.
    """
    col = _as_columns(records)
    x = np.column_stack([col["phi1"], col["phi2"], col["n_atoms"]])
    if x.shape[0] < 3:
        raise DegenerateStateError("estimate needs at least three samples")
    st = merged_stats(x)
    cov = st.cov
    v1, v2, c12 = cov[0, 0], cov[1, 1], cov[0, 1]
    if not (v1 > 0 and v2 > 0):
        raise DegenerateStateError("phase variances must be positive")
    zeta = c12 / v1
    cond = v2 - c12**2 / v1
    m = st.count
    nbar = float(st.mean[2])
    proj = context.chi**2 * nbar
    reduction = (cond - context.shot2) / proj
    k2 = (v1 - context.shot1) / context.shot1
    xi = reduction / ((1.0 - context.eta) ** 2 * context.h**2)
    xi_lin = 1.0 / ((1.0 - context.eta) ** 2 * (1.0 + k2)) if k2 > -1 else float("nan")
    bins = None
    if n_bins:
        bins = [b.to_dict() for b in bin_by_atom_number(col, n_bins)]
    return EstimatorReport(m, nbar, zeta, v1, v2, c12, cond, cond * math.sqrt(2.0 / (m - 1)),
                           zeta_grid_check(v1, v2, c12, zeta), reduction, k2, xi, xi_lin, bins)


@dataclass
class BinStats:
    n_atoms: float
    count: int
    var_phi1: float
    var_phi2: float
    cov_phi12: float
    zeta: float
    conditional_variance: float

    @property
    def var_phi2_err(self):
        return self.var_phi2 * math.sqrt(2.0 / (self.count - 1))

    @property
    def var_phi1_err(self):
        return self.var_phi1 * math.sqrt(2.0 / (self.count - 1))

    @property
    def conditional_variance_err(self):
        return self.conditional_variance * math.sqrt(2.0 / (self.count - 1))

    def to_dict(self):
        return {"n_atoms": self.n_atoms, "count": self.count, "var_phi1": self.var_phi1,
                "var_phi2": self.var_phi2, "var_phi2_err": self.var_phi2_err,
                "cov_phi12": self.cov_phi12, "zeta": self.zeta,
                "conditional_variance": self.conditional_variance,
                "conditional_variance_err": self.conditional_variance_err}


def bin_by_atom_number(records, n_bins=10):
    """Equal-population bins along the measured atom number."""
    col = _as_columns(records)
    n = np.asarray(col["n_atoms"], dtype=float)
    if n_bins < 1 or n.size < 2 * n_bins:
        raise DomainError(f"{n.size} records cannot fill {n_bins} bins of at least two")
    order = np.argsort(n, kind="stable")
    out = []
    for idx in np.array_split(order, n_bins):
        x = np.column_stack([np.asarray(col["phi1"])[idx], np.asarray(col["phi2"])[idx]])
        c = np.cov(x, rowvar=False)
        v1, v2, c12 = c[0, 0], c[1, 1], c[0, 1]
        z = c12 / v1 if v1 > 0 else 0.0
        out.append(BinStats(float(n[idx].mean()), idx.size, v1, v2, c12, z,
                            v2 - c12 * z))
    return out


def reference_bin(result, differential=True):
    """Pure shot-noise bin at zero atoms built from the reference shots."""
    if result.reference is None:
        raise DomainError("campaign has no reference shots")
    ref = result.reference
    phi1, phi2 = combine_second(ref.reshape(-1, ref.shape[-1]), result.roles, result.photons)
    C, R = ref.shape[:2]
    phi1, phi2 = phi1.reshape(C, R), phi2.reshape(C, R)
    if differential:
        m = C - C % 2
        phi1 = (phi1[0:m:2] - phi1[1:m:2]) / math.sqrt(2.0)
        phi2 = (phi2[0:m:2] - phi2[1:m:2]) / math.sqrt(2.0)
    x = np.column_stack([phi1.ravel(), phi2.ravel()])
    c = np.cov(x, rowvar=False)
    z = c[0, 1] / c[0, 0] if np.isfinite(c[0, 0]) and c[0, 0] > 0 else 0.0
    return BinStats(0.0, x.shape[0], c[0, 0], c[1, 1], c[0, 1], z, c[1, 1] - z * c[0, 1])


# ------------------------------------------------------------------ writers

def write_records_csv(results, path):
    """One row per trial, SI units, shortest round-trip floats.

    ``results`` is a :class:`CampaignResult` or a list of ``(label, result)``
    pairs from a scan; the label goes into the ``scan_point`` column.
    """
    if isinstance(results, CampaignResult):
        results = [("", results)]
    K = max(r.sub_outcomes.shape[1] for _, r in results)
    P = max(len(r.roles) for _, r in results)
    header = (["scan_point", "kind", "cycle", "experiment", "t_cycle_s", "n_atoms_measured",
               "phi1", "phi2"] + [f"phi2_{k + 1}" for k in range(K)]
              + [f"t_probe_{p + 1}_s" for p in range(P)] + ["n_atoms_true"])
    f = lambda v: repr(float(v))
    pad = lambda row, n: row + [""] * (n - len(row))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for label, result in results:
            tc = result.config.cycle_time
            centers = pad([f(t) for t in result.centers], P)
            phi1, phi2 = result.phi1, result.phi2
            nm, sub = result.n_atoms_measured, result.sub_outcomes
            for i in range(len(result)):
                c = int(result.cycle[i])
                w.writerow([label, "atomic", c, int(result.experiment[i]), f(c * tc), f(nm[i]),
                            f(phi1[i]), f(phi2[i])] + pad([f(v) for v in sub[i]], K)
                           + centers + [f(result.n_atoms[i])])
            if result.reference is not None:
                ref = result.reference
                Pr = ref.shape[-1]
                r1, r2 = combine_second(ref.reshape(-1, Pr), result.roles, result.photons)
                rs = ref.reshape(-1, Pr)[:, np.asarray(result.roles) == "second_qnd"]
                R = ref.shape[1]
                for i in range(r1.size):
                    c = i // R
                    w.writerow([label, "reference", c, i % R, f(c * tc), "", f(r1[i]), f(r2[i])]
                               + pad([f(v) for v in rs[i]], K) + centers + ["0.0"])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
