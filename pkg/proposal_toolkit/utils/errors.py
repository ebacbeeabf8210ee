"""Exception hierarchy; each category maps to a process exit code."""


class ToolkitError(Exception):
    """Base class for failures reported to the operator."""

    exit_code = 1


class ConfigError(ToolkitError, ValueError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class DataError(ToolkitError):
    """Dataset or upstream artifact is missing or inconsistent."""

    exit_code = 3


class StaleArtifactError(DataError):
    """An input file no longer matches the hash recorded by its producer."""

    def __init__(self, path: str, expected: str, actual: str):
        super().__init__(
            f"Stale artifact '{path}': manifest records sha256 {expected[:12]}..., "
            f"file has {actual[:12]}... Re-run the command that produces it."
        )
        self.path = path


class DivergenceError(ToolkitError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 4


class ArtifactIOError(ToolkitError):
    """Reading or writing an artifact failed."""

    exit_code = 5


class CorruptedPredictionError(ValueError):
    """A predicted box contains NaN or infinite coordinates."""
