"""Run configuration files.

Two sections, one per hyperparameter table: ``[search]`` for the outer GP
loop and ``[training]`` for the inner shape-function optimizer. Every key is
optional; unknown sections and keys are errors so that a typo never silently
falls back to a default.

Example::

    [search]
    population_size = 100
    generations = 10

    [training]
    max_epochs = 200
    learning_rates = 0.001, 0.01, 0.1
"""
from __future__ import annotations

import configparser
from dataclasses import fields

from .errors import ConfigError
from .evaluator import TrainConfig
from .search import SearchConfig

FUNCTION_SET = ("add", "mul", "div", "shape")

_SEARCH_KEYS = {
    "population_size": int,
    "generations": int,
    "tournament_size": int,
    "p_crossover": float,
    "p_subtree_mutation": float,
    "p_point_mutation": float,
    "p_hoist_mutation": float,
    "p_point_replace": float,
    "parsimony_coefficient": float,
    "function_set": str,
    "max_init_depth": int,
    "subtree_selection": str,
    "seed": int,
}

_TRAINING_KEYS = {
    "max_epochs": int,
    "learning_rates": "floats",
    "weight_decay": float,
    "batch_size": "optional_int",
    "early_stop_patience": int,
    "lr_trial_fraction": float,
}

PRESETS = {
    "full": {"search": {"population_size": 500}, "training": {"max_epochs": 1000}},
    "reduced": {"search": {"population_size": 100}, "training": {"max_epochs": 200}},
}


def _convert(section, key, raw, kind):
    try:
        if kind == "floats":
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if not vals:
                raise ValueError("empty list")
            return vals
        if kind == "optional_int":
            return None if raw.strip().lower() in ("", "none", "auto") else int(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _check_function_set(raw):
    items = tuple(sorted(s.strip().lower() for s in raw.replace(",", " ").split()))
    if items != tuple(sorted(FUNCTION_SET)):
        raise ConfigError(
            f"[search] function_set: only {{{', '.join(FUNCTION_SET)}}} is supported, got {raw!r}"
        )


def parse_config(text: str, preset: str | None = None, source: str = "<config>") -> SearchConfig:
    """Build a SearchConfig (with its inner TrainConfig) from config text.

    Values from a preset are applied first and the file overrides them.
    """
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00none")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {"search": {}, "training": {}}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for sec, kv in PRESETS[preset].items():
            values[sec].update(kv)
    tables = {"search": _SEARCH_KEYS, "training": _TRAINING_KEYS}
    for section in parser.sections():
        if section not in tables:
            raise ConfigError(f"{source}: unknown section [{section}]; expected [search] or [training]")
        for key, raw in parser.items(section):
            if key not in tables[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            if key == "function_set":
                _check_function_set(raw)
                continue
            values[section][key] = _convert(section, key, raw, tables[section][key])
    try:
        inner = TrainConfig(**values["training"])
        return SearchConfig(**values["search"], inner=inner)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None, preset: str | None = None) -> SearchConfig:
    if path is None:
        return parse_config("", preset)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, preset, source=str(path))


def dump_config(cfg: SearchConfig) -> str:
    """Config text that parses back to `cfg` (threads excluded)."""
    lines = ["[search]"]
    for key in _SEARCH_KEYS:
        if key == "function_set":
            lines.append(f"function_set = {', '.join(FUNCTION_SET)}")
        else:
            lines.append(f"{key} = {getattr(cfg, key)!r}" if isinstance(getattr(cfg, key), float)
                         else f"{key} = {getattr(cfg, key)}")
    lines.append("")
    lines.append("[training]")
    inner = cfg.inner
    names = {f.name for f in fields(TrainConfig)}
    for key in _TRAINING_KEYS:
        assert key in names
        val = getattr(inner, key)
        if key == "learning_rates":
            val = ", ".join(repr(v) for v in val)
        elif val is None:
            val = "auto"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
