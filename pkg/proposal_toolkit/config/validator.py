import jsonschema
import json
from pathlib import Path
from typing import Dict, Any, Iterable, List
from pydantic import ValidationError
from .models import RunConfig
from .loader import apply_overrides, load_yaml_config
from ..utils.errors import ConfigError


def get_schema_path() -> Path:
    """Get path to JSON schema file."""
    return Path(__file__).parent / "schema.json"


def load_json_schema() -> Dict[str, Any]:
    """Load JSON schema for validation."""
    with open(get_schema_path(), 'r') as f:
        return json.load(f)


def validate_with_json_schema(config_data: Dict[str, Any]) -> List[str]:
    """Validate configuration using JSON schema."""
    validator = jsonschema.Draft7Validator(load_json_schema())
    return [
        f"{'.'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}"
        for error in sorted(validator.iter_errors(config_data), key=lambda e: list(map(str, e.absolute_path)))
    ]


def validate_with_pydantic(config_data: Dict[str, Any]) -> List[str]:
    """Validate configuration using Pydantic models."""
    try:
        RunConfig(**config_data)
        return []
    except ValidationError as e:
        return [
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        ]


def validate_config_data(config_data: Dict[str, Any]) -> Dict[str, List[str]]:
    return {
        "schema_errors": validate_with_json_schema(config_data),
        "pydantic_errors": validate_with_pydantic(config_data),
    }


def validate_run_config(file_path: str, overrides: Iterable[str] = ()) -> Dict[str, List[str]]:
    """Validate a run configuration file with both JSON schema and Pydantic."""
    try:
        config_data = apply_overrides(load_yaml_config(file_path), overrides)
    except ConfigError as e:
        return {"file_errors": [str(e)]}
    return validate_config_data(config_data)


def is_valid_config(file_path: str, overrides: Iterable[str] = ()) -> bool:
    """Check if configuration is valid."""
    results = validate_run_config(file_path, overrides)
    return all(len(errors) == 0 for errors in results.values())
