class InvalidConfigError(ValueError):
    """A parameter combination outside the model's valid range."""


class InsufficientDataError(ValueError):
    """Too few usable observations to compute a statistic."""


class UndefinedDPrimeError(ArithmeticError):
    """d' requested for a sample whose differences have zero spread."""


class IntegrityError(ValueError):
    """Run results that cannot be combined (mismatched ages, cue levels...)."""


class DivergenceError(RuntimeError):
    """Training loss blew past the divergence guard."""
