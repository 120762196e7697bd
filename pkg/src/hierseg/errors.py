"""Exception hierarchy with stable CLI exit codes."""

from __future__ import annotations


class HiersegError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(HiersegError):
    """Invalid or inconsistent configuration (exit code 2)."""

    exit_code = 2


class DataError(HiersegError):
    """Invalid input data: corrupt files, bad label values, dimension mismatches (exit code 3)."""

    exit_code = 3


class BackendError(HiersegError):
    """A segmenter backend failed (exit code 4)."""

    exit_code = 4


class ProtocolError(BackendError):
    """Wire-protocol violation talking to a remote backend."""


class FrameError(ProtocolError):
    """Malformed frame: bad magic, version, type, or length."""


class DimensionMismatchError(ProtocolError):
    """Remote reply dimensions do not match the request."""


class ClassCountMismatchError(ProtocolError):
    """Remote class count disagrees with the handshake."""


class ConnectionLostError(ProtocolError):
    """The remote connection closed or is no longer usable."""


class RemoteError(BackendError):
    """The remote backend reported an application-level error."""
