"""Run configuration: one JSON document drives every pipeline.

The CLI only selects a subcommand, the config path, the output directory,
and ``--set dotted.path=value`` overrides, so a run is fully reproducible
from its config plus seed; the manifest written next to the outputs embeds
the resolved config and its hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .ensemble import AreaSpread, EnsembleSpec
from .levels import (DetuningModel, Distribution, LevelSystem,
                     build_default_system)
from .dynamics import RelaxationSpec
from .sequence import (SequenceTimeline, four_level_echo_program,
                       parse_sequence, two_level_echo_program)


class ConfigError(ValueError):
    pass


_DIST = {
    "type": "object",
    "properties": {
        "shape": {"enum": ["gaussian", "lorentzian", "uniform", "tabulated"]},
        "width_hz": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer"},
        "threads": {"type": "integer", "minimum": 0},
        "levels": {
            "oneOf": [
                {"const": "default"},
                {"type": "object",
                 "properties": {"file": {"type": "string"},
                                "inline": {"type": "object"}},
                 "additionalProperties": False},
            ]
        },
        "sequence": {
            "type": "object",
            "properties": {
                "file": {"type": "string"},
                "inline": {"type": "string"},
                "builtin": {"enum": ["four_level_echo", "two_level_echo"]},
                "params": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "ensemble": {
            "type": "object",
            "properties": {
                "optical": _DIST, "ground": _DIST, "excited": _DIST,
                "n_classes": {"type": "integer", "minimum": 1},
                "sampling": {"enum": ["monte_carlo", "grid", "gauss_quadrature"]},
                "grid_gauss_halfwidth_sigmas": {"type": "number", "exclusiveMinimum": 0},
                "area_spread": {
                    "type": "object",
                    "properties": {
                        "factors": {"type": "array", "items": {"type": "number"}},
                        "weights": {"type": "array", "items": {"type": "number"}},
                        "gaussian_sigma": {"type": "number", "minimum": 0},
                        "n": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "relaxation": {
            "type": "object",
            "properties": {"enabled": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "emission": {
            "type": "object",
            "properties": {
                "coupling_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                "include_input": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "detection": {
            "type": "object",
            "properties": {
                "lo": {
                    "type": "object",
                    "properties": {
                        "sample_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                        "base_beat_hz": {"type": "number"},
                        "noise_sigma": {"type": "number", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "efficiency": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean"},
                "alpha_l": {"type": "number", "minimum": 0},
                "n_slices": {"type": "integer", "minimum": 8},
            },
            "additionalProperties": False,
        },
        "preparation": {"type": "object"},
        "sweep": {
            "type": "object",
            "properties": {"axes": {"type": "object"}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {
                "save_traces": {"type": "boolean"},
                "save_heterodyne": {"type": "boolean"},
                "save_spectra": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "integration_tol": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "threads": 0,
    "levels": "default",
    "ensemble": {
        "optical": {"shape": "gaussian", "width_hz": 150e3},
        "ground": {"shape": "gaussian", "width_hz": 0.0},
        "excited": {"shape": "gaussian", "width_hz": 0.0},
        "n_classes": 257,
        "sampling": "grid",
        "grid_gauss_halfwidth_sigmas": 4.0,
        "area_spread": {"factors": [1.0], "weights": [1.0]},
    },
    "relaxation": {"enabled": True},
    "emission": {"coupling_rate_hz": 1e6, "include_input": True},
    "detection": {"lo": {"sample_rate_hz": 80e6, "base_beat_hz": 25e6,
                         "noise_sigma": 0.0}},
    "output": {"save_traces": False, "save_heterodyne": False,
               "save_spectra": False},
    "integration_tol": None,
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema: {e.message} (at {'/'.join(str(p) for p in e.absolute_path)})")
    sweep = config.get("sweep")
    if sweep:
        for name, values in sweep.get("axes", {}).items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {name!r} must be a non-empty list")


def load_config(path, overrides=()) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    config = _deep_merge(DEFAULTS, raw)
    for item in overrides:
        config = apply_override(config, item)
    validate_config(config)
    return config


def apply_override(config: dict, item: str) -> dict:
    """Apply one ``dotted.path=json_value`` override."""
    if "=" not in item:
        raise ConfigError(f"override must be key=value (got {item!r})")
    path, raw_val = item.split("=", 1)
    try:
        value = json.loads(raw_val)
    except json.JSONDecodeError:
        value = raw_val
    out = copy.deepcopy(config)
    node = out
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {path!r} crosses a non-object")
    node[keys[-1]] = value
    return out


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- builders ------------------------------------------------------------------

def build_system(config: dict, base_dir=".") -> LevelSystem:
    levels = config.get("levels", "default")
    if levels == "default":
        return build_default_system()
    if "file" in levels:
        path = Path(base_dir) / levels["file"]
        if not path.exists():
            raise ConfigError(f"level-system file not found: {path}")
        return LevelSystem.load(path)
    if "inline" in levels:
        return LevelSystem.from_dict(levels["inline"])
    raise ConfigError("levels must be 'default' or give file/inline")


def build_area_spread(cfg: dict) -> AreaSpread:
    if "gaussian_sigma" in cfg:
        sigma = cfg["gaussian_sigma"]
        if sigma == 0:
            return AreaSpread()
        return AreaSpread.gaussian(sigma, cfg.get("n", 8))
    return AreaSpread(tuple(cfg["factors"]), tuple(cfg["weights"]))


def build_ensemble_spec(config: dict) -> EnsembleSpec:
    e = config["ensemble"]

    def dist(d):
        return Distribution(d.get("shape", "gaussian"), d.get("width_hz", 0.0))

    return EnsembleSpec(
        model=DetuningModel(optical=dist(e["optical"]), ground=dist(e["ground"]),
                            excited=dist(e["excited"])),
        n_classes=e["n_classes"],
        sampling=e["sampling"],
        seed=config["seed"],
        area_spread=build_area_spread(e["area_spread"]),
        grid_gauss_halfwidth_sigmas=e.get("grid_gauss_halfwidth_sigmas", 4.0),
    )


def build_relaxation(config: dict, ls: LevelSystem) -> RelaxationSpec:
    if config["relaxation"]["enabled"]:
        return RelaxationSpec.from_system(ls)
    return RelaxationSpec.off()


def build_timeline(config: dict, ls: LevelSystem, base_dir=".") -> SequenceTimeline:
    seq = config.get("sequence")
    if not seq:
        raise ConfigError("config has no sequence block")
    if "file" in seq:
        path = Path(base_dir) / seq["file"]
        if not path.exists():
            raise ConfigError(f"sequence file not found: {path}")
        return parse_sequence(path.read_text(), system=ls, base_dir=path.parent)
    if "inline" in seq:
        return parse_sequence(seq["inline"], system=ls, base_dir=base_dir)
    if "builtin" in seq:
        params = dict(seq.get("params", {}))
        if seq["builtin"] == "four_level_echo":
            text = four_level_echo_program(
                tau_a=params.pop("tau_a_us", 15.0) * 1e-6,
                tau_b=params.pop("tau_b_us", 0.0) * 1e-6,
                **params)
        else:
            text = two_level_echo_program(tau=params.pop("tau_us", 20.0) * 1e-6,
                                          **params)
        return parse_sequence(text, system=ls)
    raise ConfigError("sequence must give file, inline, or builtin")
