"""Run configuration: defaults, JSON config file, and flag precedence.

Precedence is per field: command-line flags override config-file values,
which override the built-in defaults.  The verification command instead
takes its branch settings from the manifest's export_config snapshot, so
golden comparisons always run with the exporter's pinned hyperparameters.
"""

from __future__ import annotations

import json
from copy import deepcopy
from pathlib import Path

from .errors import ConfigError
from .fusion import FusionConfig
from .gating import GateConfig, default_gate_layers
from .proxy import ProxyConfig

DEFAULTS = {
    "og": {"layers": None, "alpha": 0.5, "temperature": 0.25},
    "fade": {
        "tau": 2.0,
        "mask_mode": "instance",
        "uncovered_policy": "background-group",
        "vfm": True,
    },
    "fusion": {
        "alpha_og": 0.5,
        "alpha_fade": 0.5,
        "lambda_cls": 0.0,
        "collapse": "max",
        "post_correct": True,
    },
}

_SECTION_KEYS = {section: set(values) for section, values in DEFAULTS.items()}
_TOP_KEYS = {"og", "fade", "fusion", "manifest", "images", "out", "jobs"}


def load_config_file(path) -> dict:
    """Parse and schema-check a JSON config file; names the offending field."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config field '{key}'")
    for section in ("og", "fade", "fusion"):
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config section '{section}' must be an object")
        for key in sub:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown config field '{section}.{key}'")
    return doc


def merge_sections(*layers: dict) -> dict:
    """Merge og/fade/fusion sections field by field, later layers winning."""
    merged = deepcopy(DEFAULTS)
    for layer in layers:
        if not layer:
            continue
        for section in ("og", "fade", "fusion"):
            for key, value in (layer.get(section) or {}).items():
                if key in _SECTION_KEYS[section] and value is not None:
                    merged[section][key] = value
    return merged


def build_branch_configs(
    merged: dict, layer_count: int
) -> tuple[GateConfig, ProxyConfig, FusionConfig]:
    """Materialize validated config objects; errors name the field."""
    og = merged["og"]
    fade = merged["fade"]
    fusion = merged["fusion"]
    layers = og.get("layers")
    if layers is None:
        layers = default_gate_layers(layer_count)
    try:
        layers = tuple(int(i) for i in layers)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"og.layers must be a list of integers: {exc}") from exc
    for i in layers:
        if not 0 <= i < layer_count:
            raise ConfigError(f"og.layers entry {i} outside [0, {layer_count})")
    try:
        gate = GateConfig(
            layer_indices=layers,
            gate_strength=float(og["alpha"]),
            gate_temperature=float(og["temperature"]),
        )
    except ValueError as exc:
        raise ConfigError(f"og: {exc}") from exc
    try:
        proxy = ProxyConfig(
            tau=float(fade["tau"]),
            mask_mode=str(fade["mask_mode"]),
            uncovered_policy=str(fade["uncovered_policy"]),
            use_vfm=_as_bool("fade.vfm", fade["vfm"]),
        )
    except ValueError as exc:
        raise ConfigError(f"fade: {exc}") from exc
    try:
        fuse = FusionConfig(
            alpha_og=float(fusion["alpha_og"]),
            alpha_fade=float(fusion["alpha_fade"]),
            lambda_cls=float(fusion["lambda_cls"]),
            collapse=str(fusion["collapse"]),
            post_correct=_as_bool("fusion.post_correct", fusion["post_correct"]),
        )
    except ValueError as exc:
        raise ConfigError(f"fusion: {exc}") from exc
    return gate, proxy, fuse


def _as_bool(field: str, value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        if value.lower() in ("on", "true", "1", "yes"):
            return True
        if value.lower() in ("off", "false", "0", "no"):
            return False
    raise ConfigError(f"{field} must be a boolean or on/off, got {value!r}")
