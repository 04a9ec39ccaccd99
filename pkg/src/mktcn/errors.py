"""Exception hierarchy shared by the pipeline modules."""


class MktcnError(Exception):
    pass


class DimensionError(MktcnError, ValueError):
    pass


class ParameterError(MktcnError, ValueError):
    pass


class NumericError(MktcnError, ArithmeticError):
    pass


class StateError(MktcnError, RuntimeError):
    pass


class ConfigurationError(MktcnError, ValueError):
    pass


class InsufficientDataError(MktcnError, ValueError):
    pass


class StratificationError(MktcnError, ValueError):
    pass


class DegenerateDataError(MktcnError, ValueError):
    pass


class CheckpointError(MktcnError, IOError):
    pass
