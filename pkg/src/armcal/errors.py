"""Exception types shared across the toolkit."""


class ArmcalError(Exception):
    """Base class for all armcal errors."""


class SpecFileError(ArmcalError):
    """A model/plan/scenario file failed to parse or validate."""


class ModelError(ArmcalError):
    """A model is structurally inconsistent (unresolved parameters,
    unlabeled joint axes, floating substructures, ...)."""


class SingularConfigurationError(ArmcalError):
    """A stiffness computation hit a singular configuration.

    ``directions`` carries the deficient twist directions (rows of a
    matrix, possibly empty when unknown).
    """

    def __init__(self, message, directions=None):
        super().__init__(message)
        self.directions = directions


class UnidentifiableParametersError(ArmcalError):
    """The identification Jacobian is rank deficient.

    ``null_params`` lists parameter ids with significant components in
    the null space of the stacked Jacobian.
    """

    def __init__(self, message, null_params=None):
        super().__init__(message)
        self.null_params = list(null_params or [])


class DegenerateSetupError(ArmcalError):
    """Base/tool identification geometry does not fix the frame."""


class NoSolutionError(ArmcalError):
    """A budgeted search ended without meeting its tolerance.

    ``best_residual`` is the best value found before giving up.
    """

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual
