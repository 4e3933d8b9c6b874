import math

import pytest

from simclock import config as cfgmod
from simclock.errors import ConfigError
from simclock.presets import PRESETS, build_campaign, squeezing_sequence


def test_unit_suffixes():
    assert cfgmod.parse_value("sequence.gap", "10 us") == pytest.approx(10e-6)
    assert cfgmod.parse_value("sequence.gap", "0.01ms") == pytest.approx(10e-6)
    assert cfgmod.parse_value("noise.detuning_std", "7.5 Hz") == 7.5
    assert cfgmod.parse_value("sequence.final_phase", "180 deg") == pytest.approx(math.pi)
    with pytest.raises(ConfigError, match="unit suffix required"):
        cfgmod.parse_value("sequence.gap", "10")
    with pytest.raises(ConfigError, match="not allowed"):
        cfgmod.parse_value("sequence.gap", "10 Hz")


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="campaign.n_cylces"):
        cfgmod.resolve({}, None, ["campaign.n_cylces=10"])


def test_layering(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[campaign]\nn_cycles = 20\nseed = 3\n[sequence]\ngap = 12 us\n")
    cfg = cfgmod.resolve(PRESETS["squeeze-scan"], str(ini), ["campaign.n_cycles=10"])
    assert cfg["campaign.n_cycles"] == 10 and cfg["campaign.seed"] == 3
    assert cfg["sequence.gap"] == pytest.approx(12e-6)
    assert cfg["probe.shot_mode"] == "unit"
    bad = tmp_path / "bad.ini"
    bad.write_text("[campaign]\nn_cycels = 20\n")
    with pytest.raises(ConfigError, match="n_cycels"):
        cfgmod.resolve({}, str(bad))
    with pytest.raises(ConfigError):
        cfgmod.resolve({}, str(tmp_path / "missing.ini"))


def test_ini_round_trip():
    cfg = cfgmod.resolve(PRESETS["clock-squeeze"])
    text = cfgmod.to_ini(cfg)
    path_cfg = {}
    import configparser
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    for sec in cp.sections():
        for k, v in cp.items(sec):
            path_cfg[f"{sec}.{k}"] = v
    assert cfgmod.apply_overrides(cfgmod.defaults(), path_cfg) == cfg


def test_squeeze_scan_defaults():
    cfg = cfgmod.resolve(PRESETS["squeeze-scan"])
    camp = build_campaign(cfg, squeezing_sequence(cfg))
    assert camp.n_cycles == 1200 and camp.experiments_per_cycle == 4
    probes = [e.pulse for _, e in camp.sequence.probes]
    assert probes[0].photons_total == 6e6 and probes[0].duration == pytest.approx(10e-6)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_resolves(name):
    cfg = cfgmod.resolve(PRESETS[name])
    assert set(cfg) == set(cfgmod.SCHEMA)
