"""Exception hierarchy shared by all modules."""


class FieldInfillError(Exception):
    """Base class for package errors."""


class ConfigurationError(FieldInfillError, ValueError):
    """Invalid or inconsistent configuration."""


class DomainError(FieldInfillError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class StructuralError(FieldInfillError, ValueError):
    """Shape or mesh mismatch between arrays."""


class FitError(FieldInfillError):
    """A surrogate could not be fitted to the given data."""


class IllConditionedError(FitError):
    """Correlation matrix stayed singular after nugget escalation."""


class MetricError(FieldInfillError, ValueError):
    """A metric is undefined for the given truths."""


class StateParseError(FieldInfillError):
    """A campaign state file could not be parsed."""


class MigrationError(FieldInfillError):
    """A campaign state file has an unsupported format version."""


class BlackBoxError(FieldInfillError):
    """The black box failed repeatedly during a campaign."""
