"""TOML run configuration with unit-suffixed keys.

Every physical quantity names its unit in the key, e.g. ``tau_us = 100`` or
``tau_ms = 0.1``; any of the listed suffixes is accepted.  Example::

    [noise]
    preset = "calibrated"        # or "quiet"; explicit keys override

    [sequence]
    name = "cpmg"
    tau_ms = 16
    variant = "parallel"         # optional

    [pulse]
    mode = "delta"               # or "finite"
    eps = 0.01
    t_p_us = 37.5

    [run]
    duration_ms = 500
    n_realizations = 2000
    seed = 0

    [scan]
    tau_us = [100, 200, 500]
    sequences = ["cpmg", "xy8s"]
    model = "single"

:func:`snapshot` turns a parsed config back into this layout using SI
suffixes only, so that parsing a snapshot reproduces the config exactly.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import noise as noise_mod
from .experiment import ExperimentConfig
from .sequences import CATALOG, normalize_name

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
RATE_UNITS = {"rad_per_s": 1.0, "hz": 2 * math.pi, "khz": 2e3 * math.pi}

PRESETS = ("calibrated", "quiet")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ScanSpec:
    taus: tuple
    sequences: tuple = CATALOG
    model: str = "single"


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    scan: ScanSpec | None = None
    output_dir: str | None = None


def noise_preset(name, seed=0):
    """Named noise model: ``calibrated`` or ``quiet`` (no noise at all)."""
    if name == "calibrated":
        return noise_mod.calibrate(seed=seed)
    if name == "quiet":
        return noise_mod.NoiseModel(seed=seed)
    raise ValueError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")


class _Section:
    """Key lookup that records which keys were consumed."""

    def __init__(self, data, name):
        if not isinstance(data, dict):
            raise ConfigError(name, "must be a table")
        self.data = data
        self.name = name
        self.used = set()

    def _field(self, key):
        return f"{self.name}.{key}"

    def raw(self, key, default=None):
        if key in self.data:
            self.used.add(key)
            return self.data[key]
        return default

    def number(self, key, default=None, integer=False):
        if key not in self.data:
            return default
        v = self.raw(key)
        if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
            v = math.inf
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self._field(key), f"expected a number, got {v!r}")
        if integer:
            if not float(v).is_integer():
                raise ConfigError(self._field(key), f"expected an integer, got {v!r}")
            return int(v)
        return float(v)

    def string(self, key, default=None):
        if key not in self.data:
            return default
        v = self.raw(key)
        if not isinstance(v, str):
            raise ConfigError(self._field(key), f"expected a string, got {v!r}")
        return v

    def quantity(self, base, units, default=None, many=False):
        """Value of ``<base>_<unit>`` converted to SI; at most one unit may be given."""
        found = [(u, s) for u, s in units.items() if f"{base}_{u}" in self.data]
        if not found:
            return default
        if len(found) > 1:
            keys = ", ".join(f"{base}_{u}" for u, _ in found)
            raise ConfigError(self._field(base), f"given more than once ({keys})")
        unit, scale = found[0]
        key = f"{base}_{unit}"
        if not many:
            v = self.number(key)
            return v if scale == 1.0 else v * scale
        vals = self.raw(key)
        if not isinstance(vals, list) or not vals:
            raise ConfigError(self._field(key), "expected a non-empty list of numbers")
        out = []
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(self._field(key), f"expected numbers, got {v!r}")
            out.append(float(v) if scale == 1.0 else float(v) * scale)
        return tuple(out)

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self._field(extra[0]), "unknown key")


_SECTIONS = ("noise", "sequence", "pulse", "run", "scan", "output")


def _parse_noise(sec, seed):
    preset = sec.string("preset", "quiet")
    try:
        model = noise_preset(preset, seed)
    except ValueError as exc:
        raise ConfigError("noise.preset", str(exc)) from None
    changes = {
        "sigma_static": sec.quantity("sigma_static", RATE_UNITS),
        "sigma_ou": sec.quantity("sigma_ou", RATE_UNITS),
        "tau_corr": sec.quantity("tau_corr", TIME_UNITS),
        "t2_irr": sec.quantity("t2_irr", TIME_UNITS),
    }
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return replace(model, **changes)
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from None


def parse_config(data):
    """Validate a config mapping (as read from TOML) into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        With the dotted name of the offending field.
    """
    if not isinstance(data, dict):
        raise ConfigError("config", "must be a table")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(key, f"unknown section; expected one of {', '.join(_SECTIONS)}")
    secs = {name: _Section(data.get(name, {}), name) for name in _SECTIONS}

    run = secs["run"]
    seed = run.number("seed", 0, integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("run.seed", "must be a non-negative 64-bit integer")
    noise = _parse_noise(secs["noise"], seed)

    scan = None
    if "scan" in data:
        s = secs["scan"]
        taus = s.quantity("tau", TIME_UNITS, many=True)
        if taus is None:
            raise ConfigError("scan.tau", "required (e.g. tau_us = [100, 200])")
        if any(not t > 0 for t in taus):
            raise ConfigError("scan.tau", "values must be positive")
        names = s.raw("sequences", list(CATALOG))
        if not isinstance(names, list) or not names:
            raise ConfigError("scan.sequences", "expected a non-empty list of names")
        try:
            names = tuple(normalize_name(n) for n in names)
        except ValueError as exc:
            raise ConfigError("scan.sequences", str(exc)) from None
        model = s.string("model", "single")
        if model not in ("single", "double"):
            raise ConfigError("scan.model", f"expected 'single' or 'double', got {model!r}")
        scan = ScanSpec(taus, names, model)

    seq = secs["sequence"]
    if "sequence" in data:
        name = seq.string("name")
        if name is None:
            raise ConfigError("sequence.name", "required")
        try:
            name = normalize_name(name)
        except ValueError as exc:
            raise ConfigError("sequence.name", str(exc)) from None
        tau = seq.quantity("tau", TIME_UNITS)
        if tau is None:
            raise ConfigError("sequence.tau", "required (e.g. tau_us = 100)")
        if not tau > 0:
            raise ConfigError("sequence.tau", "must be positive")
    elif scan is not None:
        name, tau = scan.sequences[0], scan.taus[0]
    else:
        raise ConfigError("sequence", "section required")
    variant = seq.string("variant")

    pulse = secs["pulse"]
    mode = pulse.string("mode", "delta")
    if mode not in ("delta", "finite"):
        raise ConfigError("pulse.mode", f"expected 'delta' or 'finite', got {mode!r}")
    eps = pulse.number("eps", 0.0)
    t_p = pulse.quantity("t_p", TIME_UNITS, 37.5e-6)
    if not t_p >= 0 or (mode == "finite" and t_p == 0):
        raise ConfigError("pulse.t_p", "must be positive for finite pulses")
    offset = pulse.quantity("offset", RATE_UNITS, 0.0)

    duration = run.quantity("duration", TIME_UNITS, 0.5)
    if not duration > 0:
        raise ConfigError("run.duration", "must be positive")
    n_real = run.number("n_realizations", 2000, integer=True)
    if n_real < 1:
        raise ConfigError("run.n_realizations", "must be >= 1")
    dt = run.quantity("dt", TIME_UNITS, 1e-3)
    if not dt > 0:
        raise ConfigError("run.dt", "must be positive")

    out = secs["output"]
    output_dir = out.string("dir")

    for sec in secs.values():
        sec.finish()

    try:
        exp = ExperimentConfig(
            sequence=name, tau=tau, noise=noise, eps=eps, offset=offset,
            pulse_mode=mode, t_p=t_p, duration=duration, n_realizations=n_real,
            variant=variant, dt=dt,
        )
    except ValueError as exc:
        msg = str(exc)
        field = "sequence.variant" if "variant" in msg else "run.dt" if "dt" in msg else "config"
        raise ConfigError(field, msg) from None
    return RunConfig(exp, scan, output_dir)


def load_config(path):
    """Read and validate a TOML config file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    return parse_config(data)


def snapshot(config):
    """Fully resolved config in SI units; ``parse_config(snapshot(c)) == c``."""
    e, n = config.experiment, config.experiment.noise
    data = {
        "noise": {
            "preset": "quiet",
            "sigma_static_rad_per_s": n.sigma_static,
            "sigma_ou_rad_per_s": n.sigma_ou,
            "tau_corr_s": n.tau_corr,
            "t2_irr_s": "inf" if math.isinf(n.t2_irr) else n.t2_irr,
        },
        "sequence": {"name": e.sequence, "tau_s": e.tau},
        "pulse": {"mode": e.pulse_mode, "eps": e.eps, "t_p_s": e.t_p, "offset_rad_per_s": e.offset},
        "run": {
            "duration_s": e.duration,
            "n_realizations": e.n_realizations,
            "seed": n.seed,
            "dt_s": e.dt,
        },
    }
    if e.variant is not None:
        data["sequence"]["variant"] = e.variant
    if config.scan is not None:
        s = config.scan
        data["scan"] = {"tau_s": list(s.taus), "sequences": list(s.sequences), "model": s.model}
    return data
