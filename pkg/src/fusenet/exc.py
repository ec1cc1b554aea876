__all__ = [
    "FusenetError",
    "ConfigError",
    "VariableNotSet",
    "ValueNotValid",
    "DimensionMismatch",
    "DataFormatError",
    "LabelOutOfRange",
    "NumericalError",
    "NonFiniteError",
    "DivergenceError",
]


class FusenetError(Exception):
    pass


class ConfigError(FusenetError):
    """Anything the user can fix by editing the experiment config or its inputs."""


class VariableNotSet(ConfigError):
    pass


class ValueNotValid(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class DataFormatError(ConfigError):
    pass


class LabelOutOfRange(DataFormatError):
    pass


class NumericalError(FusenetError):
    """Raised while optimizing; the config parsed fine but the numbers went wrong."""


class NonFiniteError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass
