"""Energy-flow kinematics of lossy planar microcavities.

Effective Schrödinger/Pauli propagation, Bohmian velocity fields and
trajectories, reconstruction of the 3D cavity fields with Poynting audits,
and the leaky-wave / imaging formulas of a line source in the cavity.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, ConvergenceError, NumericalError,  # noqa: F401
                     ParaxialWarning, ValidationError)
from .kernels import BACKEND  # noqa: F401
