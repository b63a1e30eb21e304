"""Exception types shared across the package.

The split mirrors the CLI exit codes: bad invocations, bad input data,
and transport trouble each get their own class so the entry point can
map them without string matching.
"""

from __future__ import annotations


class RhskitError(Exception):
    """Base class for errors raised by this package."""


class UsageError(RhskitError):
    """The caller asked for something contradictory or incomplete."""


class InputError(RhskitError):
    """An input file or record could not be understood.

    Carries an optional line number so loaders can point at the
    offending record instead of the whole file.
    """

    def __init__(self, message: str, *, line_no: int | None = None, path: str | None = None):
        self.line_no = line_no
        self.path = path
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line_no is not None:
            prefix += f":{line_no}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class TransportError(RhskitError):
    """A remote call failed after the configured number of attempts.

    ``status`` is the last HTTP status seen (None for connection-level
    failures) and ``attempts`` is how many tries were made, so callers
    can decide whether another round is worth it.
    """

    def __init__(self, message: str, *, url: str, status: int | None = None, attempts: int = 1):
        self.url = url
        self.status = status
        self.attempts = attempts
        super().__init__(f"{message} (url={url}, status={status}, attempts={attempts})")
