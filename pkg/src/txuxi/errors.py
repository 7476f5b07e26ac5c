"""Exception hierarchy shared by every txuxi subpackage."""


class TxuxiError(Exception):
    """Base class for all library errors."""


class InputShapeError(TxuxiError, ValueError):
    pass


class TraceError(TxuxiError, ValueError):
    pass


class SelectorError(TxuxiError, IndexError):
    pass


class EmptyInputError(TxuxiError, ValueError):
    pass


class LabelError(TxuxiError, ValueError):
    pass


class WeightFormatError(TxuxiError, ValueError):
    """Weight or SMAP file has the wrong magic, version or layout."""


class ChecksumError(WeightFormatError):
    """CRC-32 trailer does not match (includes truncated files)."""


class ConfigurationError(TxuxiError, ValueError):
    pass


class SaturationError(TxuxiError, RuntimeError):
    """Shape placement ran out of its rejection budget."""


class DegenerateMapError(TxuxiError, ValueError):
    """A map with zero total mass cannot be turned into a distribution."""


class PreconditionError(TxuxiError, ValueError):
    pass


class QualityGateError(TxuxiError, RuntimeError):
    """Trained model is below the accuracy / R^2 threshold."""
