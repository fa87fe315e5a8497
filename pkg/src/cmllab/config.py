"""Configuration files, number literals and override precedence.

Configuration is TOML with the sections listed in :data:`DEFAULTS`. Values
are resolved in the order defaults < file < environment < command-line
flags. Numeric settings accept dyadic literals written ``2^-16``,
``2**-16``, ``2e-16h`` or as a hex float (``0x1p-16``), all parsed without
decimal rounding.
"""

from __future__ import annotations

import copy
import math
import os
import re
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .errors import ConfigError
from .maps import CouplingSpec, GeneralTent, LatticeSystem, PerturbationSpec, PerturbedTent, StandardTent

ENV_THREADS = "CMLLAB_THREADS"
ENV_OUT_DIR = "CMLLAB_OUT_DIR"

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "map": {"variant": "standard", "s0": 0.0, "alpha1": 0.0, "alpha2": 0.0, "coefficients": []},
    "coupling": {"A": "two-node", "m": 2, "c": 0.1},
    "orbit": {"steps": 10_000, "burn_in": 0, "eps": 2.0 ** -30, "gamma": 2.0 ** -20,
              "trace_stride": 0, "sync_tol": 1e-9, "sync_sustain": 1000, "shadow": True,
              "seeds": 1},
    "sweep": {"c_values": None, "c_lo": 0.2, "c_hi": 0.3, "c_step": 0.01, "seeds_per_c": 16,
              "predicate": "sync", "horizon": 100_000, "tol": 1e-9, "sustain": 1000,
              "eps": 1e-6, "gamma": 1e-3, "burn_in": 1000, "refine": 0, "plot": False,
              "trace_samples": 0},
    "curve": {"demo": "components", "start": None, "end": None, "depth": 6, "eps": 1e-3,
              "count": 100, "length": 2.0 ** -17, "delta1": 2.0 ** -16, "h": 1e-4},
    "polytope": {"audit": 1000, "eps": 0.1, "scale": None},
    "lemma": {"a": 4, "m0": 6, "delta1": 2.0 ** -16, "mu": None, "mode": "curve"},
    "run": {"seed": 0, "threads": 1, "out_dir": "cmllab-out", "format": "json"},
}

_INT_KEYS = {
    ("coupling", "m"), ("orbit", "steps"), ("orbit", "burn_in"), ("orbit", "trace_stride"),
    ("orbit", "sync_sustain"), ("orbit", "seeds"), ("sweep", "seeds_per_c"), ("sweep", "horizon"),
    ("sweep", "sustain"), ("sweep", "burn_in"), ("sweep", "refine"), ("sweep", "trace_samples"),
    ("curve", "depth"), ("curve", "count"), ("polytope", "audit"), ("lemma", "m0"),
    ("run", "seed"), ("run", "threads"),
}
_STR_KEYS = {("map", "variant"), ("sweep", "predicate"), ("curve", "demo"), ("lemma", "mode"),
             ("run", "out_dir"), ("run", "format")}
_BOOL_KEYS = {("orbit", "shadow"), ("sweep", "plot")}

_POW = re.compile(r"^\s*([+-]?\d+(?:\.\d+)?)\s*(?:\^|\*\*)\s*\(?\s*([+-]?\d+)\s*\)?\s*$")
_EH = re.compile(r"^\s*([+-]?\d+)e([+-]?\d+)h\s*$", re.IGNORECASE)


def parse_number(value) -> float:
    """Number from a TOML value or a string literal.

    Strings may be decimal (``1e7``), a fraction (``1/3``), a power
    ``base^exp`` / ``base**exp`` / ``<base>e<exp>h`` (so ``2e-16h`` is
    2^-16), or a hex float.
    """
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return value
    if not isinstance(value, str):
        raise ConfigError(f"expected a number, got {value!r}")
    s = value.strip()
    m = _POW.match(s) or _EH.match(s)
    if m:
        base = Fraction(m.group(1))
        exp = int(m.group(2))
        return float(base ** exp)
    if s.lower().startswith(("0x", "-0x", "+0x")) and "p" in s.lower():
        try:
            return float.fromhex(s)
        except ValueError:
            raise ConfigError(f"bad hex float {value!r}") from None
    try:
        if "/" in s:
            return float(Fraction(s))
        return float(s) if any(ch in s for ch in ".eEn") else int(s)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse number {value!r}") from None


def parse_int(value) -> int:
    v = parse_number(value)
    if isinstance(v, float):
        if not (math.isfinite(v) and v == int(v)):
            raise ConfigError(f"expected an integer, got {value!r}")
        v = int(v)
    return v


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("1", "true", "yes", "on"):
        return True
    if isinstance(value, str) and value.strip().lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _coerce(section: str, key: str, value):
    if value is None:
        return None
    if (section, key) in _INT_KEYS:
        return parse_int(value)
    if (section, key) in _STR_KEYS:
        return str(value)
    if (section, key) in _BOOL_KEYS:
        return parse_bool(value)
    if key in ("coefficients", "c_values", "start", "end"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"[{section}] {key} must be a list")
        return [parse_number(v) for v in value]
    if (section, key) == ("coupling", "A"):
        if isinstance(value, str):
            return value
        return [[parse_number(v) for v in row] for row in value]
    return parse_number(value)


def load_file(path) -> Dict[str, Dict[str, Any]]:
    """Parse a TOML configuration file; ConfigError names the problem."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: invalid TOML: {exc}") from None
    return data


def merge(base: Dict[str, Dict[str, Any]], layer: Mapping[str, Mapping[str, Any]], origin: str):
    """Overlay one layer of settings, coercing values and rejecting unknown keys."""
    out = copy.deepcopy(base)
    for section, values in layer.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(values, Mapping):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{origin}: unknown key '{key}' in [{section}]")
            out[section][key] = _coerce(section, key, value)
    return out


def env_layer(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Dict[str, Any]]:
    environ = os.environ if environ is None else environ
    layer: Dict[str, Dict[str, Any]] = {}
    if environ.get(ENV_THREADS):
        layer.setdefault("run", {})["threads"] = environ[ENV_THREADS]
    if environ.get(ENV_OUT_DIR):
        layer.setdefault("run", {})["out_dir"] = environ[ENV_OUT_DIR]
    return layer


def resolve(path=None, flags: Optional[Mapping[str, Mapping[str, Any]]] = None,
            environ: Optional[Mapping[str, str]] = None) -> Dict[str, Dict[str, Any]]:
    """defaults < file < environment < flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = merge(cfg, load_file(path), str(path))
    cfg = merge(cfg, env_layer(environ), "environment")
    if flags:
        cfg = merge(cfg, flags, "command line")
    if cfg["run"]["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if cfg["run"]["format"] not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    return cfg


def build_map(section: Mapping[str, Any]):
    variant = str(section.get("variant", "standard")).lower().replace("_", "-")
    if variant in ("standard", "standard-tent", "tent"):
        return StandardTent()
    if variant in ("general", "general-tent"):
        return GeneralTent(float(section.get("alpha1", 0.0)), float(section.get("alpha2", 0.0)))
    if variant in ("perturbed", "perturbed-tent"):
        return PerturbedTent(float(section.get("s0", 0.0)),
                             PerturbationSpec(tuple(section.get("coefficients") or ())))
    raise ConfigError(f"unknown map variant {section.get('variant')!r}")


def build_coupling(section: Mapping[str, Any]) -> CouplingSpec:
    A = section.get("A", "two-node")
    m = int(section.get("m", 2))
    if isinstance(A, str):
        key = A.lower().replace("_", "-")
        if key == "two-node":
            if m != 2:
                raise ConfigError("A = 'two-node' needs m = 2")
            return CouplingSpec.two_node()
        if key == "all-to-all":
            return CouplingSpec.all_to_all(m)
        if key == "path":
            return CouplingSpec.path(m)
        raise ConfigError(f"unknown coupling keyword {A!r}")
    return CouplingSpec(A)


def build_system(cfg: Mapping[str, Mapping[str, Any]]) -> LatticeSystem:
    return LatticeSystem(build_map(cfg["map"]), build_coupling(cfg["coupling"]),
                         float(cfg["coupling"]["c"]))
