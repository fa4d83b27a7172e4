"""Prepared per-instance problem bundles consumed by the controller loop.

A bundle owns everything one instance needs to score an attempt: the encoded
problem, the feasibility predicate used for sample selection and feasibility
rate, and the gap function against the instance's reference.  CVRP bundles
rebuild the assignment QUBO per attempt because the penalty mode is part of
the policy surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from . import cvrp as cv
from .instances import CvrpInstance, exact_mis, parse_edge_list, parse_vrplib
from .problems import (
    GraphInstance,
    cvrp_gap,
    is_independent_set,
    mis_gap,
    mis_to_qubo,
    qubo_to_ising,
)
from .solvers import AttemptOutcome, SolverConfig, diagnostics, run_solver


class MisBundle:
    def __init__(self, graph: GraphInstance, penalty: float = 2.0):
        self.graph = graph
        self.penalty = penalty
        self.opt_size, _ = exact_mis(graph)
        self.qubo = mis_to_qubo(graph, penalty)
        self.ising = qubo_to_ising(self.qubo)

    def run_attempt(self, config: SolverConfig, attempt_index: int) -> AttemptOutcome:
        feas = lambda bits: is_independent_set(self.graph, bits)
        raw = run_solver(self.ising, feas, config)
        return diagnostics(
            raw,
            feas,
            lambda bits: mis_gap(self.graph, bits, self.opt_size),
            attempt_index=attempt_index,
            family=config.family,
            stagnation_window=config.stagnation_window,
            stagnation_tol=config.stagnation_tol,
        )


class CvrpBundle:
    """Hybrid pipeline: fix unambiguous customers once, then per attempt build
    the assignment QUBO for the configured penalty mode, solve, decode, repair,
    and route.  Feasibility of the final solution is post-repair; the raw
    feasibility rate counts cleanly decodable samples."""

    def __init__(
        self,
        inst: CvrpInstance,
        reference_cost: float,
        rho: float = 1.5,
        one_hot_weight: float | None = None,
        capacity_weight: float | None = None,
        tilt: float | None = None,
    ):
        self.inst = inst
        self.reference_cost = float(reference_cost)
        seeds = cv.select_seeds(inst, inst.n_vehicles)
        self.ap = cv.fix_unambiguous(cv.build_assignment_problem(inst, seeds), rho)
        self.one_hot_weight = one_hot_weight
        self.capacity_weight = capacity_weight
        self.tilt = tilt

    def run_attempt(self, config: SolverConfig, attempt_index: int) -> AttemptOutcome:
        qubo, enc = cv.assignment_qubo(
            self.ap,
            config.penalty_mode,
            one_hot_weight=self.one_hot_weight,
            capacity_weight=self.capacity_weight,
            tilt=self.tilt,
        )
        ising = qubo_to_ising(qubo)

        def feas(bits: str) -> bool:
            _, violations = cv.decode_assignment(bits, self.ap, enc)
            return not violations

        def gap_fn(bits: str):
            assignment, _ = cv.decode_assignment(bits, self.ap, enc)
            repaired = cv.repair(assignment, self.ap)
            if repaired is None:
                return cvrp_gap(float("nan"), self.reference_cost, feasible=False)
            try:
                cost, _ = cv.route_clusters(repaired, self.inst)
            except cv.PipelineError:
                return cvrp_gap(float("nan"), self.reference_cost, feasible=False)
            return cvrp_gap(cost, self.reference_cost)

        raw = run_solver(ising, feas, config)
        return diagnostics(
            raw,
            feas,
            gap_fn,
            attempt_index=attempt_index,
            family=config.family,
            stagnation_window=config.stagnation_window,
            stagnation_tol=config.stagnation_tol,
        )


@dataclass(frozen=True)
class BudgetedBundle:
    """Caps evaluation cost fields of every attempt config (scout vs confirm)."""

    bundle: object
    maxiter: int | None = None
    sampler_shots: int | None = None
    estimator_shots: int | None = None

    def run_attempt(self, config: SolverConfig, attempt_index: int) -> AttemptOutcome:
        overrides = {}
        if self.maxiter is not None:
            overrides["maxiter"] = min(config.maxiter, self.maxiter)
        if self.sampler_shots is not None:
            overrides["sampler_shots"] = min(config.sampler_shots, self.sampler_shots)
        if self.estimator_shots is not None:
            overrides["estimator_shots"] = min(config.estimator_shots, self.estimator_shots)
        return self.bundle.run_attempt(replace(config, **overrides), attempt_index)


def reference_for(path: Path, inst: CvrpInstance) -> float:
    """Reference cost: the instance's known optimum, else the sidecar record."""
    if inst.known_optimum is not None:
        return float(inst.known_optimum)
    sidecar = path.with_suffix(".ref.json")
    if sidecar.exists():
        return float(json.loads(sidecar.read_text())["reference_cost"])
    raise FileNotFoundError(
        f"{path}: no known optimum in the instance and no {sidecar.name} sidecar"
    )


class InstanceLoader:
    """Loads and caches instance bundles; the oracle solve happens once per path."""

    def __init__(self, mis_penalty: float = 2.0, cvrp_params: dict | None = None):
        self.mis_penalty = mis_penalty
        self.cvrp_params = dict(cvrp_params or {})
        self._cache: dict[str, object] = {}

    def __call__(self, path: str):
        key = str(path)
        if key not in self._cache:
            self._cache[key] = self._load(Path(path))
        return self._cache[key]

    def _load(self, path: Path):
        if not path.exists():
            raise FileNotFoundError(f"instance file not found: {path}")
        if path.suffix == ".vrp":
            inst = parse_vrplib(path.read_text())
            return CvrpBundle(inst, reference_for(path, inst), **self.cvrp_params)
        graph = parse_edge_list(path.read_text(), name=path.stem)
        return MisBundle(graph, penalty=self.mis_penalty)
