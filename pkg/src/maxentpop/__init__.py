"""Maximum-entropy rank distributions of population sizes.

Special functions, the equilibrium model, sampling and confidence bands,
parameter estimation, growth dynamics and a synthetic panel simulator.
"""

from .errors import (
    ConvergenceError,
    DomainError,
    InfeasibleError,
    MaxEntError,
    ParseError,
    SimulationBlowUp,
    ValidationError,
)
from .model import ModelParams, RankedSample

__version__ = "0.1.0"
