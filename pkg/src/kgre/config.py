"""Line-based ``key = value`` run configuration with sections.

Unrecognized sections or keys are hard errors so typos cannot silently
fall back to defaults.  Path-valued keys resolve relative to the config
file's directory.
"""

from __future__ import annotations

from pathlib import Path

_PATH = "path"

SCHEMA = {
    "task": {
        "kind": str,
        "graph": _PATH,
        "relations": _PATH,
        "train": _PATH,
        "valid": _PATH,
        "test": _PATH,
        "docs": _PATH,
        "train_docs": str,
        "valid_docs": str,
        "test_docs": str,
        "train_relations": str,
        "test_relations": str,
    },
    "model": {
        "width": int,
        "layers": int,
        "hidden": int,
        "block_size": int,
        "mode": str,
        "mc_hidden": int,
        "share_relation_layers": bool,
    },
    "train": {
        "batch_size": int,
        "lr_text": float,
        "lr_graph": float,
        "max_epochs": int,
        "patience": int,
        "seed": int,
        "loss": str,
        "alpha": float,
        "beta": float,
        "weight_decay": float,
        "stop_when_perfect": bool,
        "post_predict": bool,
        "samples_per_relation": int,
        "keep_threshold": float,
        "hop_cap": int,
    },
}


def _convert(section: str, key: str, value: str, base: Path):
    kind = SCHEMA[section][key]
    if kind is _PATH:
        return str((base / value).resolve())
    if kind is bool:
        lowered = value.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"[{section}] {key}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ValueError(f"[{section}] {key}: {exc}") from exc


def parse_config(path) -> dict:
    """Read a config file into {section: {key: typed value}}."""
    path = Path(path)
    base = path.parent
    out: dict[str, dict] = {section: {} for section in SCHEMA}
    section = None
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SCHEMA:
                    raise ValueError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            if section is None:
                raise ValueError(f"{path}:{lineno}: key outside any section")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA[section]:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
            out[section][key] = _convert(section, key, value, base)
    return out


def apply_overrides(config: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of file values."""
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not section.key=value")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ValueError(f"override {item!r} is not section.key=value")
        section, key = target.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ValueError(f"unknown config key {target!r}")
        config[section][key] = _convert(section, key, value.strip(), Path("."))
    return config


def get(config: dict, section: str, key: str, default=None):
    return config.get(section, {}).get(key, default)
