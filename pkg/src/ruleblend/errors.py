"""Exception and warning types shared across the package."""


class RuleblendError(Exception):
    """Base class for errors raised by this package."""


class DataError(RuleblendError):
    """Malformed input data, incompatible schema, or invalid user parameters."""


class SchemaError(DataError):
    """A dataset does not match the schema a model was trained with."""


class SolverError(RuleblendError):
    """Numerical failure inside the weight-selection optimizer."""


class GenerationWarning(UserWarning):
    """Node generation fell short of the requested ensemble size."""


class DegenerateColumnWarning(UserWarning):
    """A feature column carried no observed values and was filled with a default."""
