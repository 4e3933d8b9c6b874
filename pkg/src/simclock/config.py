"""Layered run configuration.

Resolution order is built-in defaults, then preset overrides, then an INI
file, then ``--set section.key=value`` pairs. Every dimensional value must
carry a unit suffix; values are stored internally in SI units.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass

from .errors import ConfigError

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3}
ANGLE_UNITS = {"rad": 1.0, "deg": math.pi / 180.0}


@dataclass(frozen=True)
class Key:
    kind: str          # time | freq | angle | float | int | bool | str | floats | times
    default: object
    help: str = ""


SCHEMA = {
    "campaign.n_cycles": Key("int", 1200, "MOT loading cycles"),
    "campaign.experiments_per_cycle": Key("int", 4),
    "campaign.reference_shots": Key("int", 3, "empty-interferometer shots per cycle"),
    "campaign.cycle_time": Key("time", 5.0),
    "campaign.seed": Key("int", 0),
    "campaign.workers": Key("int", 1),
    "atoms.mean": Key("float", 1.2e5, "mean initial atom number"),
    "atoms.rel_std": Key("float", 0.10),
    "atoms.retention": Key("floats", (1.0,), "retention factor(s) between recycled experiments"),
    "probe.chi": Key("str", "auto", "rad per atom, or auto to derive from kappa_sq"),
    "probe.kappa_sq": Key("float", 1.6),
    "probe.kappa_atoms": Key("float", 1.2e5, "atom number at which kappa_sq is quoted"),
    "probe.beta": Key("float", math.sqrt(13.0)),
    "probe.chi_bar_ratio": Key("float", 1.0),
    "probe.var_delta_chi": Key("float", 0.0, "rad^2 per atom^2"),
    "probe.delta_chi_scope": Key("str", "shot"),
    "probe.shot_mode": Key("str", "eq5"),
    "probe.excess_backaction": Key("float", 10.0),
    "probe.extra_variance": Key("float", 0.0, "rad^2"),
    "sequence.photons1": Key("float", 6e6),
    "sequence.photons2": Key("float", 6e6, "photons per second-measurement pulse"),
    "sequence.pulses2": Key("int", 2),
    "sequence.probe_duration": Key("time", 10e-6),
    "sequence.gap": Key("time", 10e-6),
    "sequence.tau_half_pi": Key("time", 7e-6),
    "sequence.interrogation_time": Key("time", 10e-6),
    "sequence.final_phase": Key("angle", math.pi),
    "sequence.atom_number_photons": Key("float", 6e6, "0 disables the atom-number probe"),
    "sequence.quantize": Key("bool", True),
    "decoherence.alpha": Key("float", 2.5137e-8, "per photon"),
    "noise.detuning_mean": Key("freq", 0.0),
    "noise.detuning_std": Key("freq", 0.0),
    "noise.tau_decay": Key("time", 670e-6),
    "noise.tau_inh": Key("str", "inf", "time with unit, inf, or auto (crossing calibration)"),
    "noise.contrast_table": Key("str", "", "path to a two-column T_seconds h file"),
    "noise.area_drift_std": Key("float", 0.0),
    "noise.area_drift_rate": Key("float", 0.0, "fractional area change per cycle"),
    "noise.intensity_drift_std": Key("float", 0.0),
    "noise.drift_time": Key("time", 600.0),
    "noise.trap_light_shift": Key("freq", -1700.0),
    "analysis.n_bins": Key("int", 10),
    "analysis.differential": Key("bool", True),
    "analysis.reference_bin": Key("bool", False),
    "analysis.crossing_target": Key("time", 90e-6),
    "scan.pulses_max": Key("int", 20),
    "scan.t_start": Key("time", 10e-6),
    "scan.t_stop": Key("time", 310e-6),
    "scan.t_step": Key("time", 20e-6),
    "scan.t_values": Key("times", (10e-6, 50e-6, 100e-6, 150e-6, 200e-6, 300e-6)),
    "scan.phase_points": Key("int", 24),
    "scan.classical_zeroed": Key("bool", True),
    "oracle.n_values": Key("floats", (100.0, 400.0, 1000.0)),
    "oracle.kappas": Key("floats", (0.5, 1.6, 4.0)),
    "oracle.draws": Key("int", 10_000),
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf"


def _with_unit(text, units, key):
    m = re.fullmatch(rf"\s*({_NUM})\s*([A-Za-z]+)\s*", text)
    if not m:
        if re.fullmatch(rf"\s*{_NUM}\s*", text):
            raise ConfigError(f"{key}: unit suffix required (one of {', '.join(units)})")
        raise ConfigError(f"{key}: cannot parse {text!r}")
    value, unit = m.groups()
    if unit not in units:
        raise ConfigError(f"{key}: unit {unit!r} not allowed here (use one of {', '.join(units)})")
    return float(value) * units[unit]


def parse_value(key, text):
    """Convert one textual value for ``key`` into its SI representation."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = SCHEMA[key].kind
    text = str(text).strip()
    try:
        if kind == "time":
            if text == "inf":
                return math.inf
            return _with_unit(text, TIME_UNITS, key)
        if kind == "freq":
            return _with_unit(text, FREQ_UNITS, key)
        if kind == "angle":
            return _with_unit(text, ANGLE_UNITS, key)
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "floats":
            return tuple(float(x) for x in text.split(",") if x.strip())
        if kind == "times":
            return tuple(_with_unit(x, TIME_UNITS, key) for x in text.split(",") if x.strip())
        return text
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid value {text!r}") from exc


def format_value(key, value):
    """Inverse of :func:`parse_value`, using SI suffixes and round-trip floats."""
    kind = SCHEMA[key].kind
    if kind == "time":
        return "inf" if math.isinf(value) else f"{value!r} s"
    if kind == "freq":
        return f"{value!r} Hz"
    if kind == "angle":
        return f"{value!r} rad"
    if kind == "bool":
        return "true" if value else "false"
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "times":
        return ", ".join(f"{float(v)!r} s" for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def defaults():
    return {k: v.default for k, v in SCHEMA.items()}


def apply_overrides(cfg, overrides, parsed=False):
    out = dict(cfg)
    for k, v in overrides.items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown configuration key {k!r}")
        out[k] = v if parsed else parse_value(k, v)
    return out


def read_ini(path):
    """Flatten an INI file to ``{"section.key": text}``; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path!r}: {exc}") from exc
    flat = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            key = f"{sec}.{k}"
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            flat[key] = v
    return flat


def parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(preset_overrides=None, path=None, sets=None):
    """Defaults, then preset, then file, then command-line overrides."""
    cfg = defaults()
    cfg = apply_overrides(cfg, preset_overrides or {}, parsed=True)
    if path:
        cfg = apply_overrides(cfg, read_ini(path))
    cfg = apply_overrides(cfg, parse_set(sets))
    return cfg


def to_ini(cfg):
    sections = {}
    for k in SCHEMA:
        sec, name = k.split(".", 1)
        sections.setdefault(sec, []).append(f"{name} = {format_value(k, cfg[k])}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())
