"""Run configuration: INI-style ``[section]`` blocks of ``key = value`` pairs.

Frequencies in the file are ordinary frequencies in Hz; they are converted
to rad/s when the model objects are built.  Every problem is reported as a
:class:`ConfigError` naming the offending ``section.key``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import TWO_PI, DriveConfig, MeasurementConfig, MechanicalOscillator
from .synth import AnharmonicLadder, SynthConfig, default_grid

SEED_ENV = "YF_SEED"
FORMATS = {"csv", "json", "reps"}


class ConfigError(ValueError):
    pass


def _num(v):
    return float(v)


def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError
    return int(f)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _strs(v):
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [x.strip() for x in str(v).split(",") if x.strip()]


def _opt(conv):
    def f(v):
        if v is None or str(v).strip() in ("", "none", "None"):
            return None
        return conv(v)
    return f


# section -> key -> (converter, default)
SCHEMA = {
    "oscillator": {
        "f_m": (_num, 110e3),
        "linewidth": (_num, 3e3),
        "nu": (_num, 1.2),
        "n_atoms": (_num, 1200.0),
        "m_atom": (_num, model.M_RB87),
    },
    "measurement": {
        "epsilon_det": (_num, 0.11),
        "heterodyne": (_bool, True),
        "cooperativity": (_num, 2.0),
        "kappa": (_opt(_num), None),
        "s_sn": (_opt(_num), None),
        "p_lo": (_num, 1e-3),
        "probe_wavelength": (_num, 780e-9),
        "tau": (_num, 1e-3),
    },
    "drive": {
        "f_static_per_atom": (_num, 6.2e-21),
        "mod_index": (_num, 1e-3),
        "drive_phase": (_num, 0.0),
    },
    "ladder": {
        "n_peaks": (_int, 3),
        "splitting": (_opt(_num), None),
        "level_fractions": (_floats, [0.97, 0.02, 0.01]),
        "coupling_scale": (_floats, [1.0, 1.0, 1.0]),
    },
    "sweep": {
        "c_min": (_num, 0.1),
        "c_max": (_num, 20.0),
        "n_points": (_int, 16),
        "grid": (_opt(_floats), None),
        "phase_cooperativities": (_floats, [0.2, 1.9, 14.0]),
        "spectrum_cooperativities": (_floats, [0.4, 1.9, 10.0]),
    },
    "synthesis": {
        "n_reps": (_int, 150),
        "seed": (_opt(_int), None),
        "span": (_num, 7.0),
        "off_resonant_psd": (_bool, True),
    },
    "output": {
        "directory": (str, "out"),
        "formats": (_strs, ["csv", "json"]),
        "plots": (_bool, True),
    },
}


@dataclass
class RunConfig:
    values: dict
    seed: int = 0
    source: str = "<defaults>"
    _hash: str = field(default="", repr=False)

    def __getitem__(self, section):
        return self.values[section]

    # -- model objects

    def oscillator(self) -> MechanicalOscillator:
        o = self["oscillator"]
        return MechanicalOscillator(omega_m=TWO_PI * o["f_m"], gamma=TWO_PI * o["linewidth"],
                                    nu=o["nu"], n_atoms=o["n_atoms"], m_atom=o["m_atom"])

    def measurement(self, cooperativity: float | None = None) -> MeasurementConfig:
        m = self["measurement"]
        c = m["cooperativity"] if cooperativity is None else cooperativity
        kappa = None if m["kappa"] is None else TWO_PI * m["kappa"]
        return MeasurementConfig(epsilon_det=m["epsilon_det"], heterodyne=m["heterodyne"],
                                 cooperativity=c, kappa=kappa, s_sn=m["s_sn"], tau=m["tau"],
                                 p_lo=m["p_lo"], omega_0=TWO_PI * model.C_LIGHT / m["probe_wavelength"])

    def drive(self, mod_index: float | None = None) -> DriveConfig:
        d = self["drive"]
        return DriveConfig(n_atoms=self["oscillator"]["n_atoms"], f_static_per_atom=d["f_static_per_atom"],
                           mod_index=d["mod_index"] if mod_index is None else mod_index,
                           omega_d=TWO_PI * self["oscillator"]["f_m"], drive_phase=d["drive_phase"])

    def ladder(self) -> AnharmonicLadder:
        l = self["ladder"]
        kw = dict(n_peaks=l["n_peaks"], level_fractions=tuple(l["level_fractions"]),
                  coupling_scale=tuple(l["coupling_scale"]))
        if l["splitting"] is not None:
            kw["splitting"] = TWO_PI * l["splitting"]
        return AnharmonicLadder(**kw)

    def sweep_grid(self) -> np.ndarray:
        s = self["sweep"]
        if s["grid"] is not None:
            return np.asarray(s["grid"], dtype=float)
        return np.geomspace(s["c_min"], s["c_max"], s["n_points"])

    def point_seed(self, index: int, purpose: int = 0) -> int:
        """Independent 64-bit seed for sweep point ``index``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(purpose, index))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def synth_config(self, cooperativity: float, index: int = 0, purpose: int = 0,
                     mod_index: float | None = None) -> SynthConfig:
        osc = self.oscillator()
        meas = self.measurement(cooperativity)
        grid = default_grid(osc, meas, span=self["synthesis"]["span"])
        return SynthConfig(osc=osc, meas=meas, drive=self.drive(mod_index), ladder=self.ladder(),
                           freq_grid=grid, n_reps=self["synthesis"]["n_reps"],
                           seed=self.point_seed(index, purpose))

    # -- provenance

    def as_dict(self) -> dict:
        out = {sec: dict(vals) for sec, vals in self.values.items()}
        out["synthesis"]["seed"] = self.seed
        return out

    @property
    def config_hash(self) -> str:
        if not self._hash:
            d = self.as_dict()
            d.pop("output", None)
            blob = json.dumps(d, sort_keys=True, default=str).encode()
            self._hash = hashlib.sha256(blob).hexdigest()[:16]
        return self._hash


def _fail(section, key, msg):
    raise ConfigError(f"{section}.{key}: {msg}")


def _validate(v: dict):
    o, m, d, l, s, y = (v[k] for k in ("oscillator", "measurement", "drive", "ladder", "sweep", "synthesis"))
    for key in ("f_m", "linewidth", "m_atom"):
        if not o[key] > 0:
            _fail("oscillator", key, f"must be > 0, got {o[key]!r}")
    if not o["nu"] >= 0:
        _fail("oscillator", "nu", f"must be >= 0, got {o['nu']!r}")
    if not o["n_atoms"] >= 1:
        _fail("oscillator", "n_atoms", f"must be >= 1, got {o['n_atoms']!r}")
    if not 0 < m["epsilon_det"] <= 1:
        _fail("measurement", "epsilon_det", f"must be in (0, 1], got {m['epsilon_det']!r}")
    if not m["cooperativity"] > 0:
        _fail("measurement", "cooperativity", f"must be > 0, got {m['cooperativity']!r}")
    for key in ("tau", "p_lo", "probe_wavelength"):
        if not m[key] > 0:
            _fail("measurement", key, f"must be > 0, got {m[key]!r}")
    for key in ("kappa", "s_sn"):
        if m[key] is not None and not m[key] > 0:
            _fail("measurement", key, f"must be > 0, got {m[key]!r}")
    for key in ("f_static_per_atom", "mod_index"):
        if not d[key] >= 0:
            _fail("drive", key, f"must be >= 0, got {d[key]!r}")
    if not math.isfinite(d["drive_phase"]):
        _fail("drive", "drive_phase", "must be finite")
    if l["n_peaks"] < 1:
        _fail("ladder", "n_peaks", "must be >= 1")
    for key in ("level_fractions", "coupling_scale"):
        if len(l[key]) != l["n_peaks"]:
            _fail("ladder", key, f"needs {l['n_peaks']} entries, got {len(l[key])}")
    if abs(sum(l["level_fractions"]) - 1) > 1e-9:
        _fail("ladder", "level_fractions", "must sum to 1")
    if l["splitting"] is not None and not l["splitting"] > 0:
        _fail("ladder", "splitting", "must be > 0")
    if not 0 < s["c_min"] < s["c_max"]:
        _fail("sweep", "c_min", "need 0 < c_min < c_max")
    if s["n_points"] < 1:
        _fail("sweep", "n_points", "must be >= 1")
    for key in ("grid", "phase_cooperativities", "spectrum_cooperativities"):
        vals = s[key] or []
        if any(not c > 0 for c in vals):
            _fail("sweep", key, "cooperativities must be > 0")
    if y["n_reps"] < 1:
        _fail("synthesis", "n_reps", "must be >= 1")
    if y["seed"] is not None and not 0 <= y["seed"] < 2**64:
        _fail("synthesis", "seed", "must be a 64-bit unsigned integer")
    bad = set(v["output"]["formats"]) - FORMATS
    if bad:
        _fail("output", "formats", f"unknown format {sorted(bad)[0]!r}; choose from {sorted(FORMATS)}")
    if not y["span"] >= 5:
        _fail("synthesis", "span", "must be >= 5 linewidths")


def from_mapping(raw: dict, seed: int | None = None, source: str = "<mapping>") -> RunConfig:
    """Build a validated config from ``{section: {key: value}}``; missing keys take defaults."""
    values = {}
    for section, keys in SCHEMA.items():
        given = dict(raw.get(section, {}))
        vals = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    vals[key] = conv(given.pop(key))
                except (TypeError, ValueError):
                    _fail(section, key, f"cannot parse {raw[section][key]!r}")
            else:
                vals[key] = list(default) if isinstance(default, list) else default
        if given:
            _fail(section, sorted(given)[0], "unknown key")
        values[section] = vals
    unknown = set(raw) - set(SCHEMA) - {"DEFAULT"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    _validate(values)

    cfg = RunConfig(values=values, source=source)
    cfg.seed = _resolve_seed(seed, values["synthesis"]["seed"])
    try:
        cfg.oscillator(), cfg.measurement(), cfg.drive(), cfg.ladder()
        cfg.synth_config(cfg.sweep_grid()[0])
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def _resolve_seed(cli_seed, file_seed) -> int:
    if cli_seed is not None:
        if not 0 <= int(cli_seed) < 2**64:
            raise ConfigError("seed: must be a 64-bit unsigned integer")
        return int(cli_seed)
    if file_seed is not None:
        return int(file_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return _int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: cannot parse {env!r}") from None
    return 0


FLAT = "__flat__"


def load(path: str | None = None, seed: int | None = None) -> RunConfig:
    """Read a config file.

    Both ``[section]`` blocks and flat ``section.key = value`` lines are
    accepted, and may be mixed.
    """
    if path is None:
        return from_mapping({}, seed=seed, source="<defaults>")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(f"[{FLAT}]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw: dict = {}
    for sec in parser.sections():
        if sec == FLAT:
            continue
        raw.setdefault(sec, {}).update(parser[sec])
    if parser.has_section(FLAT):
        for key, val in parser[FLAT].items():
            section, dot, name = key.partition(".")
            if not dot or not name:
                raise ConfigError(f"{key}: expected a dotted 'section.key' name")
            raw.setdefault(section, {})[name] = val
    return from_mapping(raw, seed=seed, source=str(path))


def dump_ini(cfg: RunConfig) -> str:
    """Render ``cfg`` back to the INI format (round-trips through :func:`load`)."""
    lines = []
    for section, vals in cfg.as_dict().items():
        lines.append(f"[{section}]")
        for key, val in vals.items():
            if val is None:
                val = ""
            elif isinstance(val, bool):
                val = str(val).lower()
            elif isinstance(val, (list, tuple)):
                val = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
