"""Content hashes and per-command run manifests.

Every command records the sha256 of what it read and wrote; a downstream
command refuses inputs whose bytes no longer match the producer's record.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union
import hashlib
import yaml
from .. import __version__
from ..utils.errors import ArtifactIOError, DataError, StaleArtifactError

PathLike = Union[str, Path]


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as e:
        raise ArtifactIOError(f"Cannot hash {path}: {e}") from e
    return digest.hexdigest()


def hash_files(root: PathLike, paths: Iterable[PathLike]) -> Dict[str, str]:
    """sha256 per file, keyed by path relative to root (posix separators)."""
    root = Path(root)
    return {
        Path(p).resolve().relative_to(root.resolve()).as_posix(): file_sha256(p)
        for p in sorted(Path(p) for p in paths)
    }


def write_manifest(path: PathLike, command: str, config_hash: str,
                   inputs: Optional[Dict[str, str]] = None,
                   outputs: Optional[Dict[str, str]] = None,
                   extra: Optional[Dict[str, Any]] = None) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_hash": config_hash,
        "inputs": dict(sorted((inputs or {}).items())),
        "outputs": dict(sorted((outputs or {}).items())),
    }
    if extra:
        manifest.update(extra)
    try:
        with open(path, 'w') as f:
            yaml.safe_dump(manifest, f, default_flow_style=False, indent=2, sort_keys=False)
    except OSError as e:
        raise ArtifactIOError(f"Cannot write manifest {path}: {e}") from e


def read_manifest(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing manifest '{path}'; run the command that produces it first")
    with open(path, 'r') as f:
        return yaml.safe_load(f) or {}


def verify_outputs(manifest_path: PathLike, root: PathLike,
                   only: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """Check files recorded under `outputs` (or the `only` subset); return their hashes."""
    manifest = read_manifest(manifest_path)
    recorded: Dict[str, str] = manifest.get("outputs", {})
    names = list(only) if only is not None else list(recorded)
    root = Path(root)
    verified: Dict[str, str] = {}
    for name in names:
        if name not in recorded:
            raise DataError(f"'{name}' is not recorded in {manifest_path}")
        path = root / name
        if not path.exists():
            raise DataError(f"Missing artifact '{path}' recorded in {manifest_path}")
        actual = file_sha256(path)
        if actual != recorded[name]:
            raise StaleArtifactError(str(path), recorded[name], actual)
        verified[name] = actual
    return verified
