"""Exception types shared across the package."""


class InputError(ValueError):
    """An operation was called with inputs that violate its contract."""


class PoolFormatError(InputError):
    """A pool file could not be parsed; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RunFailure(RuntimeError):
    """A benchmark run failed; identifies the (entry, engine) that panicked."""

    def __init__(self, entry: int, engine: str, cause: BaseException):
        super().__init__(f"run failed for entry={entry} engine={engine}: {cause!r}")
        self.entry = entry
        self.engine = engine
        self.cause = cause
