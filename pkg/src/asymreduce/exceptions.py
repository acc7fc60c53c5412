class InvalidInputError(ValueError):
    """Input arrays have the wrong shape, dtype or contents."""


class ConfigurationError(ValueError):
    """A reduction setting is inconsistent with the model or input."""


class ScheduleFormatError(ValueError):
    """A schedule, spec or config document could not be parsed."""


class ProbeError(RuntimeError):
    """Sensitivity probing cannot produce a meaningful ratio."""
