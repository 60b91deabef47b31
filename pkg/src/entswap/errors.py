"""Exception types raised across the simulator."""


class EntswapError(Exception):
    """Base class for simulator errors."""


class ValidationError(EntswapError, ValueError):
    """A value violates a documented constraint."""


class ConfigurationError(EntswapError, KeyError):
    """A mode, port or key is not known to the object it was handed to."""

    def __str__(self):
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""
