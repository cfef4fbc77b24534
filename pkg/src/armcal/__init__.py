"""armcal: serial-manipulator stiffness modeling, D-optimal measurement
pose planning, and geometric calibration."""

from .chain import Chain, Element, ParamEntry, ParamVector
from .errors import (
    ArmcalError,
    DegenerateSetupError,
    ModelError,
    NoSolutionError,
    SingularConfigurationError,
    SpecFileError,
    UnidentifiableParametersError,
)
from .reduce import EliminationReport, reduce_model
from .transforms import Pose, elementary

__version__ = "0.1.0"

__all__ = [
    "ArmcalError",
    "Chain",
    "DegenerateSetupError",
    "Element",
    "EliminationReport",
    "ModelError",
    "NoSolutionError",
    "ParamEntry",
    "ParamVector",
    "Pose",
    "SingularConfigurationError",
    "SpecFileError",
    "UnidentifiableParametersError",
    "elementary",
    "reduce_model",
    "__version__",
]
