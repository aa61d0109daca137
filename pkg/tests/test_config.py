import math

import pytest
import yaml

from ionanneal.config import build_config, load_config, parse_frequency, parse_time
from ionanneal.errors import ConfigError

TWO_PI = 2 * math.pi


def test_defaults():
    cfg = build_config()
    sp = cfg.spectrum
    assert sp.n_modes == 4
    assert sp.frequencies[-1] == pytest.approx(TWO_PI * 2655e3, rel=1e-10)
    assert cfg.schedule.omega_L == pytest.approx(sp.frequencies[0] - 2900e3)
    assert cfg.schedule.tau == pytest.approx(0.35e-3)
    assert cfg.spin_z == -1.0
    assert cfg.engine == "semiclassical"


@pytest.mark.parametrize("value,expected", [
    (1.5e6, 1.5e6),
    ("2655 kHz", TWO_PI * 2655e3),
    ("14332.7 krad/s", 14332.7e3),
    ({"value": 15, "unit": "kHz", "angular": False}, TWO_PI * 15e3),
    ({"value": 900, "unit": "kHz", "angular": True}, 900e3),
    ("-35.33 krad/s", -35.33e3),
])
def test_frequencies(value, expected):
    assert parse_frequency(value, "x") == pytest.approx(expected)


@pytest.mark.parametrize("value,expected", [
    (1e-3, 1e-3), ("0.35 ms", 0.35e-3), ("2 us", 2e-6), ("10 ns", 1e-8),
    ({"value": 3, "unit": "ms"}, 3e-3),
])
def test_times(value, expected):
    assert parse_time(value, "x") == pytest.approx(expected)


@pytest.mark.parametrize("user,field", [
    ({"chain": {"n_ions": 0}}, "chain.n_ions"),
    ({"chain": {"n_atoms": 3}}, "chain.n_atoms"),
    ({"anneal": {"tau": "fast"}}, "anneal.tau"),
    ({"anneal": {"rabi": {"value": 3, "unit": "kHz"}}}, "anneal.rabi.angular"),
    ({"anneal": {"omega_L": {"mode": 9}}}, "anneal.omega_L.mode"),
    ({"anneal": {"bias_site": 5}}, "anneal.bias_site"),
    ({"anneal": {"initial_spin_z": 0}}, "anneal.initial_spin_z"),
    ({"engine": {"name": "magic"}}, "engine.name"),
    ({"engine": {"dt": "20 ns"}}, "engine.dt"),
    ({"thermal": {"temperatures": [-1.0]}}, "thermal.temperatures"),
    ({"thermal": {"seed": -3}}, "thermal.seed"),
    ({"sweep": {"tau": {"start": 1, "stop": 2}}}, "sweep.tau"),
    ({"workers": 0}, "workers"),
])
def test_errors_name_the_field(user, field):
    with pytest.raises(ConfigError) as info:
        build_config(user)
    assert field in str(info.value)


def test_grids():
    cfg = build_config({
        "sweep": {"omega_L": {"mode": 2, "offsets": ["-100 krad/s", "100 krad/s"]},
                  "tau": {"start": "1 us", "stop": "1 ms", "num": 4, "log": True}},
        "thermal": {"temperatures": {"start": 1e-6, "stop": 1e-2, "num": 5, "log": True}},
    })
    w2 = cfg.spectrum.frequencies[1]
    assert cfg.sweep_omega_L == pytest.approx([w2 - 1e5, w2 + 1e5])
    assert cfg.sweep_tau == pytest.approx([1e-6, 1e-5, 1e-4, 1e-3])
    assert cfg.temperatures == pytest.approx([1e-6, 1e-5, 1e-4, 1e-3, 1e-2])
    assert cfg.schedule_for(tau=1e-4).t_final == pytest.approx(2e-3)


def test_hash_ignores_output_and_workers(tmp_path):
    a = build_config({"output": {"dir": "a"}, "workers": 1})
    b = build_config({"output": {"dir": "b"}, "workers": 3})
    c = build_config({"anneal": {"tau": "0.7 ms"}})
    assert a.hash() == b.hash() != c.hash()
    assert len(a.hash()) == 16
    assert a.with_overrides(seed=5).seed == 5
    assert a.with_overrides(seed=5).hash() != a.hash()


def test_load_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"chain": {"n_ions": 2}, "anneal": {"tau": "0.1 ms"}}))
    cfg = load_config(path)
    assert cfg.spectrum.n_ions == 2
    assert cfg.schedule.tau == pytest.approx(1e-4)
    assert load_config().hash() == build_config().hash()
