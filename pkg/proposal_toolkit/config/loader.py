import yaml
from pathlib import Path
from typing import Any, Dict, Iterable, Optional
from pydantic import ValidationError
from .models import RunConfig
from ..utils.errors import ConfigError


def load_yaml_config(file_path: str) -> Dict[str, Any]:
    """Load YAML configuration from file."""
    try:
        with open(file_path, 'r') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read configuration '{file_path}': {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Configuration '{file_path}' is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration '{file_path}' must be a mapping at the top level")
    return data


def parse_override(assignment: str) -> tuple:
    """Split `dotted.key=value`; the value is parsed as a YAML scalar or list."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override '{assignment}' must look like dotted.key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse value of override '{assignment}': {e}") from e
    return key.strip().split("."), value


def apply_overrides(config_data: Dict[str, Any], assignments: Iterable[str]) -> Dict[str, Any]:
    """Return a copy of the raw mapping with every dotted override applied in order."""
    data = yaml.safe_load(yaml.safe_dump(config_data))
    for assignment in assignments:
        path, value = parse_override(assignment)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Override '{assignment}': '{part}' is not a section")
            node = child
        node[path[-1]] = value
    return data


def cli_overrides(seed: Optional[int] = None, output_dir: Optional[str] = None,
                  workers: Optional[int] = None, assignments: Iterable[str] = ()) -> list:
    """Turn the dedicated CLI flags into dotted overrides ahead of the --set ones."""
    overrides = []
    if seed is not None:
        overrides.append(f"seed={seed}")
    if output_dir is not None:
        overrides.append(f"output_dir={yaml.safe_dump(str(output_dir)).splitlines()[0]}")
    if workers is not None:
        overrides.append(f"workers={workers}")
    return overrides + list(assignments)


def build_run_config(config_data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**config_data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_run_config(file_path: str, overrides: Iterable[str] = ()) -> RunConfig:
    """Load, override and validate a run configuration from a YAML file."""
    return build_run_config(apply_overrides(load_yaml_config(file_path), overrides))


def save_yaml_config(config: Dict[str, Any], file_path: str) -> None:
    """Save configuration to YAML file."""
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'w') as f:
        yaml.dump(config, f, default_flow_style=False, indent=2, sort_keys=False)
