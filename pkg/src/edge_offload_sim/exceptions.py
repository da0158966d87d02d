# edge_offload_sim/exceptions.py


class EdgeOffloadError(Exception):
    """Base exception for all edge_offload_sim errors."""

    pass


class ConfigError(EdgeOffloadError):
    """Raised when experiment, topology or mechanism configuration is invalid."""

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = problems or []
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class TraceError(EdgeOffloadError):
    """Raised when a mobility trace cannot be used."""

    pass


class TraceFormatError(TraceError):
    """Raised when a trace file does not parse."""

    pass


class TraceGapError(TraceError):
    """Raised when a user has no position for a timestep."""

    def __init__(self, user_id: int | str, timestep: int):
        self.user_id = user_id
        self.timestep = timestep
        super().__init__(f"Trace gap: user {user_id} has no position at timestep {timestep}")


class InvariantViolation(EdgeOffloadError):
    """Raised when an internal simulation invariant breaks; the run is aborted."""

    pass


class PairingError(EdgeOffloadError):
    """Raised when outcomes are missing for a (seed, privacy level) or a request."""

    pass


class OutputExistsError(EdgeOffloadError):
    """Raised when prior outputs exist and overwriting was not requested."""

    pass


class ArtifactIOError(EdgeOffloadError):
    """Raised when reading or writing an artifact fails."""

    def __init__(self, path: object, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")
