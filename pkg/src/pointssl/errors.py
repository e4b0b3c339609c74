"""Exception hierarchy shared across the package."""


class PointSSLError(Exception):
    """Base class for all package errors."""


class ConfigError(PointSSLError):
    """Invalid configuration value or combination."""


class ContractError(PointSSLError):
    """A caller violated an operation precondition (shape/layout/range)."""


class NumericsError(PointSSLError):
    """A numerical quantity became non-finite or undefined."""


class FormatError(PointSSLError):
    """A container file is corrupt or truncated.

    Attributes:
        offset: byte offset at which parsing failed, or None if unknown.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """A container file has an unsupported format version."""
