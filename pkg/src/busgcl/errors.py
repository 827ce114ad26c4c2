"""Exception types shared across the package.

The CLI maps UsageError to exit code 1 and every other BusgclError (plus
I/O failures) to exit code 2.
"""


class BusgclError(Exception):
    pass


class UsageError(BusgclError):
    """Bad flags, bad config values, anything the caller can fix."""


class DataFormatError(BusgclError):
    """Malformed interaction file."""


class GraphError(BusgclError):
    """Degenerate graph (zero degrees, dimension mismatch)."""


class SamplingError(BusgclError):
    """Negative sampling exhausted its rejection budget."""


class TrainingError(BusgclError):
    """Non-finite loss or gradient during optimization."""


class CheckpointError(BusgclError):
    """Unreadable or mismatched checkpoint file."""
