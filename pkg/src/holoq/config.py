"""Run configuration, schema validation and run manifests."""

from __future__ import annotations

import copy
import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from . import __version__
from .lattice import ATOM_MASSES, ConfigurationError, LatticeModel

DEFAULT_CONFIG = {
    "lattice": {"v0_er": 5.0, "wavelength_m": 1.064e-6, "q_max": 16, "atom": "Rb87"},
    "gate": {"name": "x", "m_max": 5, "beta_max": 0.2},
    "pipeline": {
        "steps_per_period": 1024,
        "elimination_steps_per_period": 256,
        "eliminate_leakage": True,
        "noise_sigma": 0.0,
        "tof_points": 16,
    },
    "seed": 0,
    "output": {"dir": "holoq-out"},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "v0_er": {"type": "number", "minimum": 0},
                "wavelength_m": {"type": "number", "exclusiveMinimum": 0},
                "q_max": {"type": "integer", "minimum": 2, "maximum": 64},
                "atom": {"enum": sorted(ATOM_MASSES)},
                "mass_kg": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "gate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "m_max": {"type": "integer", "minimum": 1, "maximum": 8},
                "beta_max": {"type": "number", "exclusiveMinimum": 0, "maximum": 1.5707963267948966},
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps_per_period": {"type": "integer", "minimum": 16},
                "elimination_steps_per_period": {"type": "integer", "minimum": 128, "multipleOf": 128},
                "eliminate_leakage": {"type": "boolean"},
                "noise_sigma": {"type": "number", "minimum": 0, "maximum": 0.5},
                "tof_points": {"type": "integer", "minimum": 4},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> None:
    """Raise ConfigurationError naming the offending key path."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {path}: {err.message}")
    lat = cfg.get("lattice", {})
    if "atom" in lat and "mass_kg" in lat:
        raise ConfigurationError("config error at lattice: give either atom or mass_kg, not both")


def resolve_config(user: dict | None = None) -> dict:
    """Validate ``user`` and fill in defaults."""
    user = {} if user is None else user
    validate_config(user)
    lattice = user.get("lattice", {})
    base = DEFAULT_CONFIG
    if "mass_kg" in lattice:
        base = copy.deepcopy(DEFAULT_CONFIG)
        del base["lattice"]["atom"]
    cfg = merge_config(base, user)
    validate_config(cfg)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config error at <root>: expected an object")
    return resolve_config(data)


def model_from_config(cfg: dict) -> LatticeModel:
    lat = cfg["lattice"]
    mass = lat["mass_kg"] if "mass_kg" in lat else ATOM_MASSES[lat["atom"]]
    return LatticeModel(float(lat["v0_er"]), float(lat["wavelength_m"]), float(mass), int(lat["q_max"]))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict, command: str = "", args: dict | None = None) -> str:
    payload = {"config": cfg, "command": command, "args": args or {}, "version": __version__}
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()[:16]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    args: dict
    run_hash: str
    version: str = __version__
    seeds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    status: str = "running"
    failed_stage: str | None = None
    wall_clock_s: float = 0.0
    python: str = platform.python_version()

    def record(self, path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
