"""Exception types shared across the package."""


class WindowError(IndexError):
    """A site lies outside the stored environment window."""


class InsufficientWindowError(WindowError):
    """The window is too short for the requested truncation or scan."""

    def __init__(self, message, found=None):
        super().__init__(message)
        self.found = found


class WindowUnderflowError(WindowError):
    """A simulated walk reached the edge of its environment window."""


class EmptyRangeError(ValueError):
    pass


class NoKappaError(ValueError):
    """E[rho^s] = 1 has no positive root (rho <= 1 almost surely)."""


class HeavyParameterError(ValueError):
    """E[rho^s] diverged before crossing 1."""


class AcceptanceTooLowError(RuntimeError):
    """Q-conditioning rejection sampler ran out of attempts."""


class RejectionBudgetError(RuntimeError):
    """Conditioned excursion sampler ran out of attempts."""


class UndercountError(ValueError):
    """Counting below the truncation floor of a Poisson sample."""


class UnsupportedKappaError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class IllConditionedWarning(RuntimeWarning):
    pass
