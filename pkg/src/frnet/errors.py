"""Exception types shared across the package.

Every error raised on a contract violation derives from FRNetError so
callers (and the CLI) can distinguish library failures from bugs.
"""


class FRNetError(Exception):
    """Base class for all library errors."""


class ConfigError(FRNetError):
    """Invalid configuration value or combination."""


class DimensionError(FRNetError):
    """Shape mismatch; message names the offending axis."""

    def __init__(self, axis, message):
        self.axis = axis
        super().__init__(f"{axis}: {message}")


class ContractError(FRNetError):
    """Input violates a documented precondition (non-binary mask, empty tensor)."""


class AutodiffError(FRNetError):
    """Illegal use of the autodiff graph (backward on non-scalar)."""


class GradCheckError(FRNetError):
    """Gradient check could not run; carries the parameter name."""

    def __init__(self, param_name, message):
        self.param_name = param_name
        super().__init__(f"{param_name}: {message}")


class CheckpointError(FRNetError):
    """Malformed, truncated, or mismatched checkpoint file."""


class DataError(FRNetError):
    """Dataset layout or content problem; message lists offending ids."""


class ManifestError(FRNetError):
    """Malformed split manifest; carries the line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class TrainError(FRNetError):
    """Training aborted; message carries epoch/batch context."""
