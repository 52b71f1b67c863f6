"""
Error types for the HyCoRe toolkit
The CLI maps each family to an exit code
"""


class HyCoReError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigError(HyCoReError):
    """Invalid run configuration"""
    exit_code = 2


class DataError(HyCoReError):
    """Malformed, missing or insufficient data"""
    exit_code = 3


class CheckpointError(DataError):
    """Checkpoint unreadable or incompatible with the requested data"""


class NumericalError(HyCoReError):
    """Non-finite values that survive clipping"""
    exit_code = 4


class GeometryDomainError(NumericalError, ValueError):
    """A value left the domain of a Poincaré-ball operation"""


class ShapeError(HyCoReError, ValueError):
    """Operand shapes do not conform"""


class GraphError(HyCoReError, RuntimeError):
    """Misuse of the differentiation graph"""
