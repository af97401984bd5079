class HrmapError(Exception):
    """Base class for all errors raised by hrmap."""


class ConfigError(HrmapError, ValueError):
    """Invalid parameters, mismatched grids or a config file that fails its schema."""


class MapFormatError(HrmapError, ValueError):
    """A map file that cannot be decoded."""
