"""Closed-loop policy search for adaptive variational quantum optimization.

Encodes MIS and decomposed-CVRP instances as QUBOs, solves them with simulated
variational solver families (VQE, QAOA, warm-start QAOA, QRAO) under
declarative adaptive controller policies, and searches over policies with a
staged scout-promote-confirm protocol guarded by replay checks.
"""

from .problems import (
    GapScore,
    GraphInstance,
    IsingHamiltonian,
    QuboProblem,
    cvrp_gap,
    evaluate_qubo,
    is_independent_set,
    ising_to_qubo,
    mis_gap,
    mis_to_qubo,
    qubo_to_ising,
)
from .policy import InstanceResult, PolicyDocument, RetryRule, run_controller, validate_policy
from .solvers import AttemptOutcome, RawResult, SolverConfig, run_solver

__version__ = "0.1.0"

__all__ = [
    "AttemptOutcome",
    "GapScore",
    "GraphInstance",
    "InstanceResult",
    "IsingHamiltonian",
    "PolicyDocument",
    "QuboProblem",
    "RawResult",
    "RetryRule",
    "SolverConfig",
    "cvrp_gap",
    "evaluate_qubo",
    "is_independent_set",
    "ising_to_qubo",
    "mis_gap",
    "mis_to_qubo",
    "qubo_to_ising",
    "run_controller",
    "run_solver",
    "validate_policy",
]
