"""Exception and warning types shared across the package."""


class FedoplError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FedoplError):
    """A structural problem with inputs: bad shapes, invalid parameters,
    missing data for a requested operation."""


class InvalidArgumentError(FedoplError, ValueError):
    """A value-level problem with an otherwise well-formed call."""


class SingleActionError(ConfigurationError):
    """Propensity fitting saw fewer than two distinct actions.

    Callers that can tolerate this should fall back to the uniform
    propensity model instead of aborting.
    """


class FedoplWarning(UserWarning):
    """Base class for warnings emitted by this package."""


class MissingActionWarning(FedoplWarning):
    """A training subsample contained no observations for some action;
    the zero response model was substituted."""


class ConvergenceWarning(FedoplWarning):
    """An iterative fit stopped at max_iter before reaching tolerance;
    the best iterate was returned."""


class ScoreBoundWarning(FedoplWarning):
    """Estimated policy-value scores exceeded the diagnostic range bound
    implied by the observed rewards and the propensity clip floor."""
