"""Exception hierarchy shared by all modules.

The CLI maps each class to a fixed exit code, so library code should raise
these rather than bare ValueError/IOError for anything an operator can hit.
"""


class McakdError(Exception):
    """Base class; carries a machine-parseable category string."""

    category = "error"
    exit_code = 1


class ConfigError(McakdError):
    """Invalid configuration: bad dims, unknown keys, out-of-range values."""

    category = "config"
    exit_code = 2


class FormatError(McakdError):
    """Corrupt or incompatible file: version mismatch, truncation, bad dims."""

    category = "format"
    exit_code = 3


class NumericError(McakdError):
    """Numeric failure during computation (NaN/Inf in activations, divergence)."""

    category = "numeric"
    exit_code = 4


class ContractError(McakdError):
    """Caller violated an operation precondition."""

    category = "contract"
    exit_code = 5


class DegenerateInputError(ContractError):
    """Input is degenerate for the operation (all-zero tensor, zero-norm vector)."""


class DegenerateMaskError(ContractError):
    """Mask leaves zero visible or zero masked tokens."""
