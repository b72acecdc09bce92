import hashlib
import json
from pathlib import Path
from typing import Any, Iterable

from ces_skill.core.errors import ConfigError


def config_fingerprint(config: dict[str, Any]) -> str:
    """
    Hash a run configuration.

    Args:
        config (dict): Everything that determines the run's outputs. Paths
            are hashed as given, so the same relative paths reproduce the
            same fingerprint.

    Returns:
        str: Hex SHA-256 of the canonical JSON rendering.
    """
    canonical = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def fingerprint_header(config: dict[str, Any]) -> str:
    return f"config-fingerprint: {config_fingerprint(config)}"


def guard_outputs(directory: Path, names: Iterable[str], force: bool) -> list[Path]:
    """
    Resolve output paths, refusing to overwrite existing files.

    Args:
        directory (Path): Output directory, created when absent.
        names (Iterable[str]): File names the subcommand will write.
        force (bool): Allow overwriting.

    Returns:
        list[Path]: The output paths, in the order of `names`.
    """
    directory = Path(directory)
    paths = [directory / name for name in names]
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(f"refusing to overwrite {existing}; pass --force")
    directory.mkdir(parents=True, exist_ok=True)
    return paths
