"""Exception hierarchy.

``ConfigError`` covers anything the caller got wrong before processing
started (missing paths, bad plan parameters, malformed manifests); the CLI
maps it to exit status 2. ``ProcessingError`` covers failures during a run
and maps to exit status 1.
"""


class WarcDistillError(Exception):
    pass


class ConfigError(WarcDistillError):
    pass


class ProcessingError(WarcDistillError):
    pass


class AggregateOverflow(ProcessingError):
    """An in-memory aggregate grew past its configured row cap."""
