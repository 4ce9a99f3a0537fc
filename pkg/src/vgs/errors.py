"""Exception types shared across the package.

Every anticipated failure raises a subclass of VgsError with a one-line,
actionable message; the CLI maps these to a single stderr line and a
nonzero exit code. Anything else escaping is a bug.
"""


class VgsError(Exception):
    """Base class for all anticipated failures."""


class ManifestError(VgsError):
    """Malformed manifest line, missing file, duplicate id, bad split."""


class AudioError(VgsError):
    """Unreadable or out-of-contract audio (wrong rate, channels, empty)."""


class ImageError(VgsError):
    """Unreadable or out-of-contract image input."""


class ConfigError(VgsError):
    """Invalid, inconsistent, or unknown configuration."""


class ShapeError(VgsError):
    """Tensor shape or dtype does not match the declared contract."""


class CheckpointError(VgsError):
    """Corrupt, truncated, or architecture-incompatible checkpoint."""


class DivergenceError(VgsError):
    """Training produced a non-finite loss."""
