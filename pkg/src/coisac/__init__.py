"""Distributed hybrid beamforming design for cooperative ISAC networks."""

from .hbf_solver import ApSolverState, ExchangeMessage, InfeasibleSubproblem
from .metrics import DetectionModel, HbfState
from .panda_core import PenaltyConfig, Termination
from .runtime import SolveResult, run_centralized_admm, run_panda_distributed
from .scene import BeampatternSpec, ChannelSet, NetworkScene

__version__ = "0.1.0"

__all__ = [
    "ApSolverState", "BeampatternSpec", "ChannelSet", "DetectionModel", "ExchangeMessage",
    "HbfState", "InfeasibleSubproblem", "NetworkScene", "PenaltyConfig", "SolveResult",
    "Termination", "run_centralized_admm", "run_panda_distributed",
]
