"""Exception hierarchy shared by every module."""


class LimeShiftError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(LimeShiftError, ValueError):
    """A precondition on an argument was violated."""


class ConfigError(LimeShiftError, ValueError):
    """Invalid or unresolved configuration."""


class ParseError(LimeShiftError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" at line {line}"
            if column is not None:
                where += f", column {column}"
        super().__init__(message + where)


class TrainingError(LimeShiftError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, message, hyperparameter):
        self.hyperparameter = hyperparameter
        super().__init__(f"{message} (check {hyperparameter})")


class SelectionError(LimeShiftError):
    pass


class SolverError(LimeShiftError):
    pass


class ProtocolError(LimeShiftError):
    """The external scorer broke the wire protocol; ``payload`` holds the raw line."""

    def __init__(self, message, payload=None):
        self.payload = payload
        text = message if payload is None else f"{message}: {payload!r}"
        super().__init__(text)


class StageError(LimeShiftError):
    """Wraps a failure inside one named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class AuditError(LimeShiftError):
    """Raised by the audit; carries whatever rows finished before the failure."""

    def __init__(self, message, instance_id=None, partial_rows=(), failures=()):
        self.instance_id = instance_id
        self.partial_rows = list(partial_rows)
        self.failures = list(failures)
        super().__init__(message)
