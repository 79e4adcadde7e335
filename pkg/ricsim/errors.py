"""
Exception types shared across the simulator.
Library code raises these; only the CLI turns them into exit codes.
"""

from typing import List, Optional, Tuple


class RicSimError(Exception):
    """Base class for every error raised by ricsim."""


class DomainError(RicSimError, ValueError):
    """An argument lies outside the domain of a radio or geometry function."""


class PolicyError(RicSimError):
    """An A1 policy document failed parsing or validation."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class ConfigError(RicSimError):
    """A scenario configuration failed validation."""

    def __init__(self, diagnostics: List[Tuple[str, str]]):
        self.diagnostics = list(diagnostics)
        lines = [f"{path}: {message}" for path, message in self.diagnostics]
        super().__init__("; ".join(lines) if lines else "invalid configuration")

    @classmethod
    def single(cls, path: str, message: str) -> "ConfigError":
        return cls([(path, message)])


class TrainingDataError(RicSimError):
    """A KPI profile bucket did not receive enough training windows."""

    def __init__(self, bucket: int, found: int, required: int):
        self.bucket = bucket
        self.found = found
        self.required = required
        super().__init__(
            f"bucket {bucket} has {found} training windows, {required} required"
        )


def json_path(parts, root: Optional[str] = "$") -> str:
    """Render a sequence of keys/indices as `$.a.b[0]`."""
    out = root or "$"
    for part in parts:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}"
    return out
