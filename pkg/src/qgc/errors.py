"""Exception hierarchy shared across the package.

Errors are categorized so the CLI can map them to distinct exit codes:
configuration (2), file format / io (3), numerical blow-up (4), shape or
channel mismatch (5).
"""


class QgcError(Exception):
    """Base class for all package errors."""


class ConfigError(QgcError):
    """Invalid or unknown configuration."""


class FormatError(QgcError):
    """Base for on-disk format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File version is not supported."""


class TruncatedError(FormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(FormatError):
    """Payload checksum does not match the trailer."""


class BlowUpError(QgcError):
    """Non-finite values appeared during time integration."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MismatchError(QgcError):
    """Array shape, grid, or channel layout mismatch."""
