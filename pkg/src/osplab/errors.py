"""Exception hierarchy shared across the package."""


class OspLabError(Exception):
    pass


class PartitionError(OspLabError, ValueError):
    pass


class InvalidLayerError(OspLabError, ValueError):
    pass


class ShapeError(OspLabError, ValueError):
    pass


class NumericOverflowError(OspLabError, FloatingPointError):
    pass


class DatasetError(OspLabError, ValueError):
    """Malformed or empty dataset input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class GibFormatError(OspLabError, ValueError):
    pass


class ScheduleError(OspLabError, RuntimeError):
    pass


class ProtocolError(OspLabError, RuntimeError):
    pass


class StaleMessageError(ProtocolError):
    pass


class SimulatorError(OspLabError, RuntimeError):
    pass


class MetricsError(OspLabError, ValueError):
    pass


class ConfigError(OspLabError, ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
