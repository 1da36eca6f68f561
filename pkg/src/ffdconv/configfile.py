"""Flat `key = value` configuration files.

Keys are `section.field` (sections: features, model, train, synth); a bare
`field` goes to the default section when the caller supplies one. Values are
evaluated with simpleeval, so literals, lists, tuples and arithmetic all work:

    model.channels = [16, 32, 64, 128, 128, 128, 128]
    features.fmax = 16000 / 2
    train.thresholds = (0.5,) * 4
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from simpleeval import DEFAULT_NAMES, EvalWithCompoundTypes, InvalidExpression

from .config import FeatureParams, ModelConfig, SyntheticSpec, TrainConfig
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

SECTIONS: dict[str, type] = {
    "features": FeatureParams,
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SyntheticSpec,
}

VALUE_NAMES: dict[str, Any] = {
    **DEFAULT_NAMES,
    "true": True,
    "false": False,
    "on": True,
    "off": False,
    "none": None,
}


@dataclass
class ConfigSet:
    """One config record per section, after file overrides."""

    features: FeatureParams = field(default_factory=FeatureParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)


def evaluate_value(text: str, *, source: str = "<config>", line: int = 0, key: str = "") -> Any:
    """Evaluate one right-hand side safely."""
    evaluator = EvalWithCompoundTypes(names=VALUE_NAMES, functions={})
    try:
        return evaluator.eval(text.strip())
    except (InvalidExpression, SyntaxError, TypeError, ValueError, ZeroDivisionError) as e:
        raise ConfigError(
            f"{source}:{line}: cannot evaluate value of '{key}': {e}",
            details={"file": source, "line": line, "key": key},
        )


def _coerce(value: Any, default: Any, where: str) -> Any:
    """Convert an evaluated value to the type of a field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    return value


def apply_overrides(record: Any, values: dict[str, Any], source: str = "<flags>") -> Any:
    """Return a copy of a frozen config record with `values` applied."""
    if not values:
        return record
    known = {f.name: getattr(record, f.name) for f in fields(record)}
    changes = {}
    for name, value in values.items():
        if name not in known:
            raise ConfigError(
                f"{source}: unknown key '{name}' for {type(record).__name__}",
                details={"file": source, "key": name},
            )
        changes[name] = _coerce(value, known[name], f"{source}: {name}")
    try:
        return replace(record, **changes)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}", details={"file": source})


def parse_config_text(
    text: str, source: str = "<config>", default_section: str | None = None
) -> dict[str, dict[str, Any]]:
    """Parse `key = value` lines into {section: {field: value}}."""
    parsed: dict[str, dict[str, Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'",
                details={"file": source, "line": lineno},
            )
        key, value_text = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
        elif default_section is not None:
            section, name = default_section, key
        else:
            raise ConfigError(
                f"{source}:{lineno}: key '{key}' needs a section prefix "
                f"({', '.join(SECTIONS)})",
                details={"file": source, "line": lineno, "key": key},
            )
        if section not in SECTIONS:
            raise ConfigError(
                f"{source}:{lineno}: unknown section '{section}'",
                details={"file": source, "line": lineno, "key": key},
            )
        value = evaluate_value(value_text, source=source, line=lineno, key=key)
        parsed.setdefault(section, {})[name] = value
    return parsed


def read_config_file(
    path: Path | str, default_section: str | None = None
) -> dict[str, dict[str, Any]]:
    """Read and parse a config file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}", details={"file": str(path)})
    return parse_config_text(path.read_text(encoding="utf-8"), str(path), default_section)


def load_config_set(
    path: Path | str | None = None,
    base: ConfigSet | None = None,
    default_section: str | None = None,
) -> ConfigSet:
    """Apply a config file on top of `base` (defaults when omitted)."""
    configs = base or ConfigSet()
    if path is None:
        return configs
    parsed = read_config_file(path, default_section)
    for section, values in parsed.items():
        record = getattr(configs, section)
        setattr(configs, section, apply_overrides(record, values, str(path)))
    logger.debug("loaded config %s: %s", path, {s: sorted(v) for s, v in parsed.items()})
    return configs


def dump_record(record: Any, section: str | None = None) -> str:
    """Serialize a config record as `key = repr(value)` lines."""
    prefix = f"{section}." if section else ""
    return "".join(f"{prefix}{f.name} = {getattr(record, f.name)!r}\n" for f in fields(record))


def parse_record(text: str, cls: type, source: str = "<record>") -> Any:
    """Inverse of `dump_record` for a bare (unsectioned) record."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        if "=" not in raw:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value_text = (part.strip() for part in raw.split("=", 1))
        values[key] = evaluate_value(value_text, source=source, line=lineno, key=key)
    return apply_overrides(cls(), values, source)
