"""Experiment configuration: YAML ingestion, unit handling, validation and hashing.

Frequencies are given either as plain numbers (rad/s), as strings such as
``"2655 kHz"`` (cyclic, multiplied by 2 pi) or ``"14332.7 krad/s"``, or as
mappings ``{value: 2655, unit: kHz, angular: false}``.  Times are plain
numbers (s) or strings such as ``"0.35 ms"``.  Every error names the dotted
path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import quantum
from .constants import AMU, TWO_PI, YB171_MASS
from .errors import ConfigError, IonAnnealError
from .ion_chain import IonChainSpec, PhononSpectrum, phonon_spectrum
from .protocol import AnnealSchedule
from .experiments import Detection

ENGINES = ("semiclassical", "exact")

_FREQ_SCALE = {"hz": 1.0, "khz": 1e3, "mhz": 1e6}
_ANGULAR_SCALE = {"rad/s": 1.0, "krad/s": 1e3, "mrad/s": 1e6}
_TIME_SCALE = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-zµ/]+)\s*$")

DEFAULTS = {
    "chain": {
        "n_ions": 4,
        "omega_rad": {"value": 2655.0, "unit": "kHz", "angular": False},
        "omega_ax": {"value": 5504.071941812793, "unit": "kHz", "angular": True},
        "omega_rec": {"value": 15.0, "unit": "kHz", "angular": False},
        "mass_amu": YB171_MASS / AMU,
    },
    "anneal": {
        "omega_L": {"mode": 1, "offset": {"value": -2900.0, "unit": "kHz", "angular": True}},
        "rabi": {"value": 3000.0, "unit": "kHz", "angular": True},
        "tau": "0.35 ms",
        "t_final": None,
        "b0": {"value": 10.0, "unit": "kHz", "angular": False},
        "epsilon": {"value": 2.0, "unit": "kHz", "angular": False},
        "bias_site": 1,
        "initial_spin_z": -1,
    },
    "detection": {
        "separation_threshold": 0.05,
        "waiting_threshold": 0.02,
        "waiting_window": "0.5 ms",
        "exclude_biased": True,
    },
    "engine": {
        "name": "semiclassical",
        "tol": 1e-10,
        "n_out": 2000,
        "n_max": 2,
        "dt": "1 ns",
        "krylov_tol": 1e-10,
        "m_max": 30,
    },
    "sweep": {"omega_L": None, "tau": None},
    "thermal": {"temperatures": None, "omega_L": None, "n_samples": 1000, "seed": 0},
    "bias_scan": {"epsilon": None, "tau": None, "omega_L": None},
    "output": {"dir": "results"},
    "workers": 1,
}


def _fail(path, message):
    raise ConfigError(path, message)


def _number(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        _fail(path, "must be finite")
    return float(value)


def parse_frequency(value, path: str) -> float:
    """Angular frequency in rad/s from any supported spelling."""
    if isinstance(value, dict):
        extra = set(value) - {"value", "unit", "angular"}
        if extra:
            _fail(path, f"unknown keys {sorted(extra)}")
        if "value" not in value:
            _fail(path, "missing 'value'")
        number = _number(value["value"], f"{path}.value")
        unit = str(value.get("unit", "rad/s")).lower()
        angular = value.get("angular")
        if unit in _ANGULAR_SCALE:
            if angular is False:
                _fail(f"{path}.angular", f"unit {unit} is angular")
            return number * _ANGULAR_SCALE[unit]
        if unit not in _FREQ_SCALE:
            _fail(f"{path}.unit", f"unknown frequency unit {value.get('unit')!r}")
        if angular is None:
            _fail(f"{path}.angular", "required for Hz-based units (true: value is already angular)")
        if not isinstance(angular, bool):
            _fail(f"{path}.angular", "must be true or false")
        scaled = number * _FREQ_SCALE[unit]
        return scaled if angular else TWO_PI * scaled
    if isinstance(value, str):
        match = _QUANTITY.match(value)
        if not match:
            _fail(path, f"cannot parse frequency {value!r}")
        try:
            number = float(match.group(1))
        except ValueError:
            _fail(path, f"cannot parse frequency {value!r}")
        unit = match.group(2).lower()
        if unit in _ANGULAR_SCALE:
            return number * _ANGULAR_SCALE[unit]
        if unit in _FREQ_SCALE:
            return TWO_PI * number * _FREQ_SCALE[unit]
        _fail(path, f"unknown frequency unit {match.group(2)!r}")
    return _number(value, path)


def parse_time(value, path: str) -> float:
    """Time in seconds."""
    if isinstance(value, dict):
        if set(value) - {"value", "unit"} or "value" not in value:
            _fail(path, "expected {value, unit}")
        value = f"{_number(value['value'], path + '.value')} {value.get('unit', 's')}"
    if isinstance(value, str):
        match = _QUANTITY.match(value)
        if not match or match.group(2) not in _TIME_SCALE:
            _fail(path, f"cannot parse time {value!r} (units: s, ms, us, ns)")
        try:
            return float(match.group(1)) * _TIME_SCALE[match.group(2)]
        except ValueError:
            _fail(path, f"cannot parse time {value!r}")
    return _number(value, path)


def _grid(value, path, parser) -> List[float]:
    """A list of items, or ``{start, stop, num, log}`` spaced linearly or geometrically."""
    if isinstance(value, list):
        if not value:
            _fail(path, "grid must not be empty")
        return [parser(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "num", "log"}
        if extra or not {"start", "stop", "num"} <= set(value):
            _fail(path, "expected a list or {start, stop, num, log}")
        start = parser(value["start"], f"{path}.start")
        stop = parser(value["stop"], f"{path}.stop")
        num = value["num"]
        if isinstance(num, bool) or not isinstance(num, int) or num < 1:
            _fail(f"{path}.num", "must be a positive integer")
        if value.get("log", False):
            if start <= 0 or stop <= 0:
                _fail(path, "log grids need positive end points")
            return [float(x) for x in np.geomspace(start, stop, num)]
        return [float(x) for x in np.linspace(start, stop, num)]
    return [parser(value, path)]


def _omega_L(value, path, spectrum: PhononSpectrum) -> float:
    if isinstance(value, dict) and "mode" in value:
        if set(value) - {"mode", "offset"}:
            _fail(path, "expected {mode, offset}")
        mode = value["mode"]
        if isinstance(mode, bool) or not isinstance(mode, int) or not 1 <= mode <= spectrum.n_modes:
            _fail(f"{path}.mode", f"must be a mode number in 1..{spectrum.n_modes}")
        offset = parse_frequency(value.get("offset", 0.0), f"{path}.offset")
        return float(spectrum.frequencies[mode - 1] + offset)
    return parse_frequency(value, path)


def _omega_L_grid(value, path, spectrum) -> List[float]:
    """Beatnote grid: a list, an absolute range, or ``{mode, offsets}``."""
    if isinstance(value, dict) and "offsets" in value:
        if set(value) - {"mode", "offsets"} or "mode" not in value:
            _fail(path, "expected {mode, offsets}")
        base = _omega_L({"mode": value["mode"]}, path, spectrum)
        return [base + off for off in _grid(value["offsets"], f"{path}.offsets", parse_frequency)]
    if isinstance(value, list):
        if not value:
            _fail(path, "grid must not be empty")
        return [_omega_L(v, f"{path}[{i}]", spectrum) for i, v in enumerate(value)]
    if isinstance(value, dict) and "mode" in value:
        return [_omega_L(value, path, spectrum)]
    return _grid(value, path, parse_frequency)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            _fail(where, "unknown configuration key")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("omega_L",) \
                and not {"value", "unit"} & set(base[key]):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _positive_int(value, path, minimum=1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        _fail(path, f"must be an integer >= {minimum}")
    return value


@dataclass
class ExperimentConfig:
    chain: IonChainSpec
    spectrum: PhononSpectrum
    schedule: AnnealSchedule
    spin_z: float
    detection: Detection
    engine: str
    tol: float
    n_out: int
    n_max: int
    dt: float
    krylov_tol: float
    m_max: int
    sweep_omega_L: Optional[List[float]]
    sweep_tau: Optional[List[float]]
    temperatures: Optional[List[float]]
    thermal_omega_L: List[float]
    n_samples: int
    seed: int
    bias_epsilon: Optional[List[float]]
    bias_tau: Optional[List[float]]
    bias_omega_L: List[float]
    t_final_override: Optional[float]
    out_dir: Path
    workers: int
    raw: dict = field(repr=False, default_factory=dict)

    def schedule_for(self, omega_L=None, tau=None, epsilon=None) -> AnnealSchedule:
        """The base schedule with some fields replaced; ``t_final`` follows ``tau`` unless fixed."""
        changes = {}
        if omega_L is not None:
            changes["omega_L"] = float(omega_L)
        if tau is not None:
            changes["tau"] = float(tau)
            changes["t_final"] = self.t_final_override
        if epsilon is not None:
            changes["epsilon"] = float(epsilon)
        return self.schedule.replace(**changes)

    def engine_options(self) -> dict:
        if self.engine == "exact":
            return {"n_max": self.n_max, "dt": self.dt, "krylov_tol": self.krylov_tol,
                    "m_max": self.m_max, "n_out": self.n_out, "detection": self.detection,
                    "spin_z": self.spin_z}
        return {"tol": self.tol, "n_out": self.n_out, "detection": self.detection,
                "spin_z": self.spin_z}

    def hash(self) -> str:
        return config_hash(self.raw)

    def with_overrides(self, engine=None, workers=None, seed=None, out=None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if engine is not None:
            raw["engine"]["name"] = engine
        if workers is not None:
            raw["workers"] = workers
        if seed is not None:
            raw["thermal"]["seed"] = seed
        if out is not None:
            raw["output"]["dir"] = str(out)
        return build_config(raw)


def config_hash(raw: dict) -> str:
    """SHA-256 (first 16 hex digits) of the canonical JSON of everything that affects results.

    The output directory and worker count are excluded: they do not change
    any result.
    """
    material = {k: v for k, v in raw.items() if k not in ("output", "workers")}
    text = json.dumps(material, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_config(user: Optional[dict] = None) -> ExperimentConfig:
    """Merge ``user`` over the defaults and validate every field."""
    if user is None:
        user = {}
    if not isinstance(user, dict):
        _fail("<root>", "configuration must be a mapping")
    raw = _merge(DEFAULTS, user)
    c, a, d, e = raw["chain"], raw["anneal"], raw["detection"], raw["engine"]
    n_ions = _positive_int(c["n_ions"], "chain.n_ions")
    try:
        chain = IonChainSpec(
            n_ions,
            parse_frequency(c["omega_rad"], "chain.omega_rad"),
            parse_frequency(c["omega_ax"], "chain.omega_ax"),
            parse_frequency(c["omega_rec"], "chain.omega_rec"),
            mass=_number(c["mass_amu"], "chain.mass_amu") * AMU,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("chain", str(exc))
    try:
        spectrum = phonon_spectrum(chain)
    except IonAnnealError as exc:
        _fail("chain", f"{type(exc).__name__}: {exc}")

    t_final = None if a["t_final"] is None else parse_time(a["t_final"], "anneal.t_final")
    spin_z = a["initial_spin_z"]
    if spin_z not in (-1, 1):
        _fail("anneal.initial_spin_z", "must be -1 or +1")
    bias_site = _positive_int(a["bias_site"], "anneal.bias_site")
    if bias_site > n_ions:
        _fail("anneal.bias_site", f"must lie in 1..{n_ions}")
    values = {
        "omega_L": _omega_L(a["omega_L"], "anneal.omega_L", spectrum),
        "rabi": parse_frequency(a["rabi"], "anneal.rabi"),
        "tau": parse_time(a["tau"], "anneal.tau"),
        "b0": parse_frequency(a["b0"], "anneal.b0"),
        "epsilon": parse_frequency(a["epsilon"], "anneal.epsilon"),
    }
    for key, value in values.items():
        if key == "epsilon" and value < 0 or key != "epsilon" and not value > 0:
            _fail(f"anneal.{key}", "must be positive" if key != "epsilon" else "must be non-negative")
    schedule = AnnealSchedule(bias_site=bias_site, t_final=t_final, **values)

    detection = Detection(
        _number(d["separation_threshold"], "detection.separation_threshold"),
        _number(d["waiting_threshold"], "detection.waiting_threshold"),
        parse_time(d["waiting_window"], "detection.waiting_window"),
        bool(d["exclude_biased"]),
    )
    engine = e["name"]
    if engine not in ENGINES:
        _fail("engine.name", f"must be one of {ENGINES}")
    tol = _number(e["tol"], "engine.tol")
    if not 1e-14 <= tol <= 1e-3:
        _fail("engine.tol", "must lie in [1e-14, 1e-3]")
    dt = parse_time(e["dt"], "engine.dt")
    if not 0 < dt <= quantum.MAX_DT:
        _fail("engine.dt", f"must lie in (0, {quantum.MAX_DT:g}] s")
    krylov_tol = _number(e["krylov_tol"], "engine.krylov_tol")
    if not krylov_tol > 0:
        _fail("engine.krylov_tol", "must be positive")
    m_max = _positive_int(e["m_max"], "engine.m_max", quantum.MIN_KRYLOV_DIM)
    n_max = _positive_int(e["n_max"], "engine.n_max")

    s, th, b = raw["sweep"], raw["thermal"], raw["bias_scan"]
    sweep_w = None if s["omega_L"] is None else _omega_L_grid(s["omega_L"], "sweep.omega_L", spectrum)
    sweep_tau = None if s["tau"] is None else _grid(s["tau"], "sweep.tau", parse_time)
    temps = None if th["temperatures"] is None else _grid(th["temperatures"], "thermal.temperatures", _number)
    if temps is not None and any(t < 0 for t in temps):
        _fail("thermal.temperatures", "must be non-negative")
    thermal_w = ([schedule.omega_L] if th["omega_L"] is None
                 else _omega_L_grid(th["omega_L"], "thermal.omega_L", spectrum))
    n_samples = _positive_int(th["n_samples"], "thermal.n_samples")
    seed = th["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        _fail("thermal.seed", "must be an unsigned 64-bit integer")
    bias_eps = None if b["epsilon"] is None else _grid(b["epsilon"], "bias_scan.epsilon", parse_frequency)
    if bias_eps is not None and any(x <= 0 for x in bias_eps):
        _fail("bias_scan.epsilon", "values must be positive")
    bias_tau = None if b["tau"] is None else _grid(b["tau"], "bias_scan.tau", parse_time)
    bias_w = ([schedule.omega_L] if b["omega_L"] is None
              else _omega_L_grid(b["omega_L"], "bias_scan.omega_L", spectrum))
    for name, grid in (("sweep.tau", sweep_tau), ("bias_scan.tau", bias_tau)):
        if grid is not None and any(x <= 0 for x in grid):
            _fail(name, "values must be positive")
    workers = _positive_int(raw["workers"], "workers")
    out_dir = raw["output"]["dir"]
    if not isinstance(out_dir, str) or not out_dir:
        _fail("output.dir", "must be a non-empty path")

    return ExperimentConfig(
        chain=chain, spectrum=spectrum, schedule=schedule, spin_z=float(spin_z),
        detection=detection, engine=engine, tol=tol,
        n_out=_positive_int(e["n_out"], "engine.n_out", 2), n_max=n_max, dt=dt,
        krylov_tol=krylov_tol, m_max=m_max, sweep_omega_L=sweep_w, sweep_tau=sweep_tau,
        temperatures=temps, thermal_omega_L=thermal_w, n_samples=n_samples, seed=seed,
        bias_epsilon=bias_eps, bias_tau=bias_tau, bias_omega_L=bias_w,
        t_final_override=t_final, out_dir=Path(out_dir), workers=workers, raw=raw,
    )


def load_config(path=None) -> ExperimentConfig:
    """Read a YAML file (or use the defaults when ``path`` is None)."""
    if path is None:
        return build_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
    return build_config(data or {})
