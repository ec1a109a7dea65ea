"""Exception types shared across the engine.

Every failure the engine raises on purpose is one of these three, so
callers (and the CLI exit-code mapping) can tell bad input apart from
internal contract violations.
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class InputError(EngineError):
    """Malformed user input: bad config values, token ids out of range,
    unreadable weight files, empty streams."""


class DimensionError(EngineError):
    """Array shapes or dtypes do not satisfy an operation's contract."""


class SchedulingError(EngineError):
    """A schedule violates dependency or grouping invariants, or a node
    is executed against a segment whose layer cursor does not match."""
