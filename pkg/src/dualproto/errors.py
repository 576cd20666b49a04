"""Structured errors. Every error the CLI can surface carries a stable `kind`
string so failures stay machine-parseable (`error=<kind> detail=<msg>`)."""


class DualprotoError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def __init__(self, detail):
        super().__init__(detail)
        self.detail = detail


class ShapeMismatchError(DualprotoError, ValueError):
    kind = "shape-mismatch"


class NonFiniteError(DualprotoError, FloatingPointError):
    kind = "non-finite"


class DegenerateVectorError(DualprotoError, ArithmeticError):
    """Zero vector reached a normalization. `kind` names the site."""

    def __init__(self, detail, kind="degenerate-vector"):
        super().__init__(detail)
        self.kind = kind


class ConfigError(DualprotoError, ValueError):
    kind = "config-invalid"


class DataFormatError(DualprotoError, ValueError):
    """Dataset file problems; `kind` distinguishes the failure mode."""

    def __init__(self, detail, kind="bad-format"):
        super().__init__(detail)
        self.kind = kind


class CheckpointError(DualprotoError, ValueError):
    def __init__(self, detail, kind="bad-checkpoint"):
        super().__init__(detail)
        self.kind = kind


class UnknownIdError(DualprotoError, KeyError):
    kind = "unknown-id"
