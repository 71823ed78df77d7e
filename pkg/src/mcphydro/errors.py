"""Exception hierarchy shared across the package."""


class McpError(Exception):
    """Base class for all mcphydro errors."""


class ValidationError(McpError):
    """Input data violates a precondition (bad values, bad shapes)."""


class StructuralError(ValidationError):
    """Time series structure is broken (date gaps, misaligned lengths)."""


class ParseError(ValidationError):
    """A file or grammar string could not be parsed."""


class InsufficientDataError(ValidationError):
    """Not enough data to perform the requested operation."""


class ContractError(McpError):
    """An internal API was called outside its contract."""


class DegenerateChannelError(McpError):
    """An information channel has zero variance and cannot be standardized."""

    def __init__(self, channel, message=None):
        self.channel = channel
        super().__init__(message or f"degenerate channel: {channel!r}")


class NumericFaultError(McpError):
    """A non-finite value appeared during simulation or differentiation."""

    def __init__(self, message, timestep=None, node=None):
        self.timestep = timestep
        self.node = node
        super().__init__(message)


class PlanError(McpError):
    """An experiment plan is inconsistent (missing parent, cyclic edges)."""
