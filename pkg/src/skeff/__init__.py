"""skeff: effective Hamiltonians for quantum systems driven by a classical flow."""

from .errors import *  # noqa: F401,F403
from . import flows, quantum, effham, observables

__version__ = "0.1.0"
