"""Exception and warning types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid combination of discretisation or run settings."""


class ValidationError(ValueError):
    """Physical input outside the admissible range.

    ``problems`` carries every violation found, not just the first.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems is not None else [message]


class NumericalError(RuntimeError):
    """A computation produced non-finite values or diverged."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(NumericalError):
    """An iterative solve did not reach its residual target."""


class ParaxialWarning(UserWarning):
    """A small-parameter guard (|V|/m, E/m, eps''/eps', Gamma*D0) was exceeded.

    Attributes
    ----------
    quantity : str
        Name of the guarded ratio.
    value : float
        Observed worst-case value.
    threshold : float
        Configured threshold.
    location : tuple or None
        Coordinates of the worst offender, when spatially resolved.
    """

    def __init__(self, quantity, value, threshold, location=None):
        self.quantity = quantity
        self.value = float(value)
        self.threshold = float(threshold)
        self.location = location
        msg = f"{quantity} = {self.value:.3g} exceeds guard {self.threshold:.3g}"
        if location is not None:
            msg += " at (" + ", ".join(f"{c:.6g}" for c in location) + ")"
        super().__init__(msg)

    def as_dict(self):
        return {
            "quantity": self.quantity,
            "value": self.value,
            "threshold": self.threshold,
            "location": None if self.location is None else list(self.location),
        }
