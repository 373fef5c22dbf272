"""Experiment configuration files.

A config is an INI file with one section per module.  Every value is a JSON
literal, so numbers, strings, lists and tables keep their types::

    [run]
    command = "weight-check"

    [weights]
    taus = [16.25, 101.25]
    delta = 0.0625

Each command declares the sections and keys it reads.  ``load_config``
checks all of them, fills defaults and rejects unknown keys before anything
is computed; errors carry the dotted name of the offending field.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from .errors import ConfigError

COMMANDS = ("weight-check", "carleman-1d", "carleman-2d", "solve", "doubling-scan", "global-scan", "report")

_MISSING = object()


@dataclass(frozen=True)
class Key:
    kind: str
    default: Any = _MISSING
    check: Any = None  # callable(value) -> error message or None

    @property
    def required(self) -> bool:
        return self.default is _MISSING


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _all_positive(v):
    return None if all(x > 0 for x in v) else "entries must be positive"


def _interval(v):
    return None if len(v) == 2 and v[1] > v[0] else "must be [low, high] with low < high"


def _choice(*options):
    def check(v):
        values = v if isinstance(v, list) else [v]
        bad = [x for x in values if x not in options]
        return f"unknown value(s) {bad}; choose from {list(options)}" if bad else None

    return check


def _at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


RUN = {"command": Key("str", check=_choice(*COMMANDS)), "seed": Key("int", 0), "name": Key("str", "")}
GRID = {"half_width": Key("float", check=_positive), "points_per_side": Key("int", check=_at_least(16))}
PROFILE = {
    "kind": Key("str", check=_choice("constant", "affine", "radial-lipschitz", "kink", "bounded-oscillatory")),
    "delta0": Key("float", check=_positive),
    "M0": Key("float", check=_positive),
    "params": Key("dict", {}),
    "convexity_delta": Key("float?", None),
}
FIELD = {
    "source": Key("str", "harmonic", _choice("harmonic", "rigid", "constant", "solve")),
    "degree": Key("int", 1, _at_least(1)),
    "phase": Key("float", 0.0),
    "shift": Key("point", [0.0, 0.0]),
    "rotation": Key("float", 0.0),
}
BOUNDARY = {
    "kind": Key("str", "dirichlet", _choice("dirichlet", "traction")),
    "field": Key("str", "harmonic", _choice("harmonic", "rigid", "mms")),
    "degree": Key("int", 2, _at_least(1)),
    "phase": Key("float", 0.0),
    "shift": Key("point", [0.0, 0.0]),
    "rotation": Key("float", 0.0),
    "mms_case": Key("str", "affine-mu", _choice("constant-harmonic", "affine-exact", "affine-mu", "lipschitz-kink")),
    "method": Key("str", "auto", _choice("auto", "direct", "iterative")),
}
TOLERANCES = {
    "compatibility": Key("float", 1e-8, _positive),
    "uniformity_factor": Key("float", 2.0, _positive),
    "chain_relative": Key("float", 0.01, _positive),
    "chain_exponential": Key("float", 0.02, _positive),
}

SCHEMAS: dict[str, dict[str, dict[str, Key]]] = {
    "weight-check": {
        "weights": {
            "taus": Key("floats", check=_all_positive),
            "delta": Key("float", check=_non_negative),
            "variants": Key("strs", ["base"], _choice("base", "tilde")),
            "c_low": Key("float", 0.5),
            "c_high": Key("float", 1.0),
            "c_spectral": Key("float", 1.0 / 16.0),
            "t_max_factor": Key("float", 4.0, _positive),
            "n_points": Key("int", 4096, _at_least(16)),
            "decay_C": Key("float?", None),
            "decay_points": Key("int", 4001, _at_least(16)),
        }
    },
    "carleman-1d": {
        "carleman": {
            "taus": Key("floats", check=_all_positive),
            "delta": Key("float", 1.0 / 16.0, _non_negative),
            "estimates": Key(
                "strs",
                ["factor", "commutator", "mode_ode", "weighted_reduction", "full_mode"],
                _choice("factor", "commutator", "mode_ode", "weighted_reduction", "full_mode"),
            ),
            "n_seeds": Key("int", 8, _at_least(1)),
            "support": Key("floats", [2.0, 4.0], _interval),
            "sigmas": Key("floats", [1.0]),
            "modes": Key("ints", [0, 1, 5, 25]),
            "reduction_constant": Key("float", 16.0, _at_least(4)),
            "reduction_mode": Key("int", 1, _non_negative),
            "full_mode": Key("int", 1, _non_negative),
            "resolution": Key("int", 65536, _at_least(64)),
        }
    },
    "carleman-2d": {
        "carleman2d": {
            "taus": Key("floats", check=_all_positive),
            "delta": Key("float", 1.0 / 16.0, _non_negative),
            "t_range": Key("floats", [0.5, 2.5], _interval),
            "t_count": Key("int", 4096, _at_least(16)),
            "theta_count": Key("int", 32, _at_least(16)),
            "mode": Key("int", 1, _non_negative),
            "support": Key("floats", [1.0, 2.0], _interval),
            "n_seeds": Key("int", 1, _at_least(1)),
            "f_support": Key("floats?", None),
        }
    },
    "solve": {"grid": GRID, "profile": PROFILE, "boundary": BOUNDARY},
    "doubling-scan": {
        "grid": GRID,
        "field": FIELD,
        "scan": {
            "centers": Key("points", [[0.0, 0.0]]),
            "radii": Key("floats", check=_all_positive),
            "R": Key("float", check=_positive),
        },
    },
    "global-scan": {
        "grid": GRID,
        "field": FIELD,
        "scan": {
            "sigma": Key("float", 0.1, _positive),
            "theta": Key("float", 1.0, _positive),
            "rbar": Key("float", 0.2, _positive),
            "vartheta": Key("float", 1.0, _positive),
            "lattice_spacing": Key("float?", None),
            "doubling_radii": Key("int", 4, _at_least(1)),
            "K_bound": Key("float?", None),
        },
    },
    "report": {"report": {"manifests": Key("strs", [])}},
}

# sections a command may carry on top of its own
OPTIONAL_SECTIONS = {
    "doubling-scan": {"profile": PROFILE, "boundary": BOUNDARY},
    "global-scan": {"profile": PROFILE, "boundary": BOUNDARY},
}


def _coerce(kind: str, value, name: str):
    def fail(what):
        raise ConfigError(f"{name}: expected {what}, got {value!r}", name)

    def number(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            fail("a finite number")
        return float(v)

    def integer(v):
        if isinstance(v, bool) or not (isinstance(v, int) or (isinstance(v, float) and v.is_integer())):
            fail("an integer")
        return int(v)

    if kind.endswith("?"):
        return None if value is None else _coerce(kind[:-1], value, name)
    if kind == "float":
        return number(value)
    if kind == "int":
        return integer(value)
    if kind == "str":
        return value if isinstance(value, str) else fail("a string")
    if kind == "bool":
        return value if isinstance(value, bool) else fail("true or false")
    if kind == "dict":
        return value if isinstance(value, dict) else fail("a table")
    if kind in ("floats", "ints", "strs", "points"):
        if not isinstance(value, list):
            fail("a list")
        inner = {"floats": "float", "ints": "int", "strs": "str", "points": "point"}[kind]
        return [_coerce(inner, v, name) for v in value]
    if kind == "point":
        if not (isinstance(value, list) and len(value) == 2):
            fail("a point [x1, x2]")
        return [number(v) for v in value]
    raise ValueError(f"unknown key kind {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration: the command plus fully resolved sections."""

    command: str
    sections: dict = dc_field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def get(self, dotted: str, default=None):
        sec, _, key = dotted.partition(".")
        return self.sections.get(sec, {}).get(key, default)

    def to_text(self) -> str:
        """Canonical serialization: sorted sections and keys, compact JSON values."""
        parts = []
        for sec in sorted(self.sections):
            parts.append(f"[{sec}]")
            for key in sorted(self.sections[sec]):
                parts.append(f"{key} = {json.dumps(self.sections[sec][key], sort_keys=True)}")
            parts.append("")
        return "\n".join(parts)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        sections["run"]["seed"] = int(seed)
        return ExperimentConfig(self.command, sections)


def parse_text(text: str) -> dict[str, dict[str, Any]]:
    """INI text to raw ``{section: {key: value}}`` with JSON-decoded values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.optionxform = str  # keep key case (M0)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    raw: dict[str, dict[str, Any]] = {}
    for sec in parser.sections():
        raw[sec] = {}
        for key, val in parser.items(sec):
            try:
                raw[sec][key] = json.loads(val)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{sec}.{key}: value is not a JSON literal ({exc.msg})", f"{sec}.{key}") from exc
    return raw


def _resolve_section(name: str, keys: dict[str, Key], raw: dict) -> dict:
    out = {}
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key", f"{name}.{unknown[0]}")
    for key, spec in keys.items():
        dotted = f"{name}.{key}"
        if key not in raw:
            if spec.required:
                raise ConfigError(f"{dotted}: required key is missing", dotted)
            out[key] = spec.default
            continue
        value = _coerce(spec.kind, raw[key], dotted)
        if spec.check is not None and value is not None:
            msg = spec.check(value)
            if msg:
                raise ConfigError(f"{dotted}: {msg}", dotted)
        out[key] = value
    return out


def resolve(raw: dict[str, dict[str, Any]]) -> ExperimentConfig:
    """Validate raw sections for their command and fill every default."""
    if "run" not in raw or "command" not in raw["run"]:
        raise ConfigError("run.command: required key is missing", "run.command")
    run = _resolve_section("run", RUN, raw["run"])
    command = run["command"]
    schema = dict(SCHEMAS[command])
    optional = OPTIONAL_SECTIONS.get(command, {})
    allowed = {"run", "tolerances", *schema, *optional}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"{extra[0]}: section not used by command {command!r}", extra[0])
    sections = {"run": run, "tolerances": _resolve_section("tolerances", TOLERANCES, raw.get("tolerances", {}))}
    for name, keys in schema.items():
        if name not in raw:
            missing = next((k for k, s in keys.items() if s.required), None)
            if missing is not None:
                raise ConfigError(f"{name}.{missing}: required key is missing", f"{name}.{missing}")
        sections[name] = _resolve_section(name, keys, raw.get(name, {}))
    # a solved field needs coefficients and boundary data
    field_section = sections.get("field")
    needs_solve = command == "solve" or (field_section is not None and field_section["source"] == "solve")
    for name, keys in optional.items():
        if name in raw or needs_solve:
            sections[name] = _resolve_section(name, keys, raw.get(name, {}))
    _cross_checks(command, sections)
    return ExperimentConfig(command, sections)


def _cross_checks(command: str, s: dict) -> None:
    if command == "weight-check" and s["weights"]["c_low"] > s["weights"]["c_high"]:
        raise ConfigError("weights.c_low: must not exceed weights.c_high", "weights.c_low")
    if command == "carleman-2d":
        c = s["carleman2d"]
        lo, hi = c["t_range"]
        if lo < 0:
            raise ConfigError("carleman2d.t_range: t must be non-negative (radii in (0, 1])", "carleman2d.t_range")
        for key in ("support", "f_support"):
            sup = c[key]
            if sup is not None and not (lo < sup[0] < sup[1] < hi):
                raise ConfigError(f"carleman2d.{key}: must lie strictly inside t_range", f"carleman2d.{key}")
    if command == "doubling-scan":
        L = s["grid"]["half_width"]
        if 2 * s["scan"]["R"] > L:
            raise ConfigError("scan.R: the frequency needs B_2R inside the grid", "scan.R")
        for c in s["scan"]["centers"]:
            if max(abs(c[0]), abs(c[1])) + 2 * s["scan"]["R"] > L:
                raise ConfigError(f"scan.centers: B_2R around {c} leaves the grid", "scan.centers")
        if max(s["scan"]["radii"]) > s["scan"]["R"] / 4.0:
            raise ConfigError("scan.radii: every radius must satisfy B_2r inside B_(R/2)", "scan.radii")


def load_text(text: str) -> ExperimentConfig:
    return resolve(parse_text(text))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", "config") from exc
    return load_text(text)
