"""Decomposed CVRP workflow: seeds, assignment QUBO, fixing, repair, routing.

Cluster-first route-second: customers are assigned to vehicle seeds through a
QUBO over one-hot assignment rows (with either hard-slack or tilted capacity
penalties), unambiguous customers are fixed classically beforehand, decoded
assignments are repaired to feasibility, and each cluster is routed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .instances import CvrpInstance, held_karp
from .problems import QuboProblem


class PipelineError(RuntimeError):
    pass


def select_seeds(inst: CvrpInstance, m: int, method: str = "depot_farthest") -> list[int]:
    """Greedy max-min seed customers: start from the customer farthest from the
    depot, then repeatedly take the customer maximizing the minimum distance to
    the depot and all chosen seeds.  Ties break toward the lower id."""
    if method != "depot_farthest":
        raise ValueError(f"unknown seed method {method!r}")
    customers = inst.customers
    if m > len(customers):
        raise ValueError(f"cannot pick {m} seeds from {len(customers)} customers")
    dist = inst.distance_matrix()
    depot = inst.depot_index
    seeds: list[int] = []
    for _ in range(m):
        best_c, best_d = -1, -1.0
        for c in customers:
            if c in seeds:
                continue
            d = min([dist[depot, c]] + [dist[s, c] for s in seeds])
            if d > best_d:
                best_c, best_d = c, d
        seeds.append(best_c)
    return seeds


@dataclass(frozen=True, eq=False)
class AssignmentProblem:
    """Seed-based customer-to-vehicle assignment data, with a fixed/free split."""

    customers: tuple[int, ...]
    demands: dict[int, int]
    n_vehicles: int
    capacity: int
    seeds: tuple[int, ...]
    assign_cost: dict[tuple[int, int], float]  # (customer, vehicle) -> insertion cost
    fixed: dict[int, int]
    free: tuple[int, ...]

    def residual_capacity(self, v: int) -> int:
        used = sum(self.demands[c] for c, veh in self.fixed.items() if veh == v)
        return self.capacity - used


def build_assignment_problem(inst: CvrpInstance, seeds: list[int]) -> AssignmentProblem:
    """Insertion-cost surrogate d_iv = c(depot,i) + c(i,seed_v) - c(depot,seed_v)."""
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct customers")
    dist = inst.distance_matrix()
    depot = inst.depot_index
    cost = {}
    for c in inst.customers:
        for v, s in enumerate(seeds):
            cost[(c, v)] = float(dist[depot, c] + dist[c, s] - dist[depot, s])
    return AssignmentProblem(
        customers=tuple(inst.customers),
        demands={c: int(inst.demands[c]) for c in inst.customers},
        n_vehicles=len(seeds),
        capacity=int(inst.capacity),
        seeds=tuple(seeds),
        assign_cost=cost,
        fixed={},
        free=tuple(inst.customers),
    )


def fix_unambiguous(ap: AssignmentProblem, rho: float) -> AssignmentProblem:
    """Fix customers whose second-cheapest vehicle costs at least rho times the
    cheapest, processing in descending demand order and respecting residual
    capacity.  Seeds have zero cost to their own vehicle, so they fix first."""
    if rho <= 1.0:
        raise ValueError("rho must be > 1")
    fixed = dict(ap.fixed)
    residual = {v: ap.residual_capacity(v) for v in range(ap.n_vehicles)}
    order = sorted(ap.free, key=lambda c: (-ap.demands[c], c))
    still_free = []
    for c in order:
        costs = sorted((ap.assign_cost[(c, v)], v) for v in range(ap.n_vehicles))
        cheapest, v_star = costs[0]
        second = costs[1][0] if len(costs) > 1 else float("inf")
        if cheapest <= 1e-12:
            ratio = float("inf") if second > 1e-12 else 1.0
        else:
            ratio = second / cheapest
        if ratio >= rho and residual[v_star] >= ap.demands[c]:
            fixed[c] = v_star
            residual[v_star] -= ap.demands[c]
        else:
            still_free.append(c)
    return replace(ap, fixed=fixed, free=tuple(sorted(still_free)))


@dataclass(frozen=True)
class AssignmentEncoding:
    """Maps QUBO variables back to (customer, vehicle) cells and slack bits."""

    free: tuple[int, ...]
    n_vehicles: int
    var_index: dict[tuple[int, int], int]
    slack_bits: dict[int, tuple[tuple[int, int], ...]]  # vehicle -> ((var, weight), ...)
    n_vars: int


def _slack_register(limit: int) -> list[int]:
    """Binary weights whose subset sums exactly span [0, limit]."""
    if limit <= 0:
        return []
    weights = []
    remaining = limit
    w = 1
    while w * 2 - 1 <= remaining:
        weights.append(w)
        w *= 2
    covered = sum(weights)
    if covered < limit:
        weights.append(limit - covered)
    return weights


def assignment_qubo(
    ap: AssignmentProblem,
    penalty_mode: str = "tilted",
    one_hot_weight: float | None = None,
    capacity_weight: float | None = None,
    tilt: float | None = None,
) -> tuple[QuboProblem, AssignmentEncoding]:
    """QUBO over x_{iv} for free customers: assignment cost + one-hot penalty +
    capacity penalty (binary slack registers in hard_slack mode, a quadratic
    target plus linear load tilt in tilted mode)."""
    if penalty_mode not in ("hard_slack", "tilted"):
        raise ValueError(f"unknown penalty mode {penalty_mode!r}")
    free = ap.free
    nv = ap.n_vehicles
    residual = {}
    for v in range(nv):
        r = ap.residual_capacity(v)
        if r < 0:
            raise PipelineError(f"vehicle {v} over-fixed: residual capacity {r}")
        residual[v] = r

    max_cost = max((abs(ap.assign_cost[(c, v)]) for c in free for v in range(nv)), default=1.0)
    width = max(1, len(free) * nv)
    A = float(one_hot_weight) if one_hot_weight is not None else 2.0 * max_cost * width
    B = float(capacity_weight) if capacity_weight is not None else 2.0 * max_cost * width
    if A <= 0 or B <= 0:
        raise ValueError("penalty weights must be positive")
    max_demand = max((ap.demands[c] for c in free), default=1)
    tau = float(tilt) if tilt is not None else 0.05 * B * max_demand
    if tau < 0:
        raise ValueError("tilt must be nonnegative")

    var_index = {}
    for i, c in enumerate(free):
        for v in range(nv):
            var_index[(c, v)] = i * nv + v
    n_vars = len(free) * nv

    linear: dict[int, float] = {}
    quad: dict[tuple[int, int], float] = {}
    offset = 0.0

    def add_lin(i, val):
        linear[i] = linear.get(i, 0.0) + val

    def add_quad(i, j, val):
        key = (i, j) if i < j else (j, i)
        quad[key] = quad.get(key, 0.0) + val

    # assignment cost
    for c in free:
        for v in range(nv):
            add_lin(var_index[(c, v)], ap.assign_cost[(c, v)])

    # one-hot rows: A * (sum_v x_cv - 1)^2
    for c in free:
        row = [var_index[(c, v)] for v in range(nv)]
        for i in row:
            add_lin(i, -A)
        for a in range(len(row)):
            for b in range(a + 1, len(row)):
                add_quad(row[a], row[b], 2.0 * A)
        offset += A

    # capacity per vehicle
    slack_bits: dict[int, tuple[tuple[int, int], ...]] = {}
    for v in range(nv):
        terms = [(var_index[(c, v)], ap.demands[c]) for c in free]
        if penalty_mode == "hard_slack":
            weights = _slack_register(residual[v])
            register = []
            for w in weights:
                register.append((n_vars, w))
                terms.append((n_vars, w))
                n_vars += 1
            slack_bits[v] = tuple(register)
        # B * (sum_i w_i b_i - R_v)^2 expanded over binaries (b^2 = b)
        R = residual[v]
        for i, (vi, wi) in enumerate(terms):
            add_lin(vi, B * (wi * wi - 2.0 * R * wi))
            for vj, wj in terms[i + 1 :]:
                add_quad(vi, vj, 2.0 * B * wi * wj)
        offset += B * R * R
        if penalty_mode == "tilted":
            slack_bits[v] = ()
            for c in free:
                add_lin(var_index[(c, v)], tau * ap.demands[c])

    q = QuboProblem(
        n=n_vars,
        linear=np.array([linear.get(i, 0.0) for i in range(n_vars)]),
        quadratic=quad,
        offset=offset,
    )
    enc = AssignmentEncoding(
        free=free, n_vehicles=nv, var_index=var_index, slack_bits=slack_bits, n_vars=n_vars
    )
    return q, enc


@dataclass(frozen=True)
class Violation:
    kind: str  # "zero_hot" | "multi_hot" | "capacity"
    customer: int | None = None
    vehicle: int | None = None
    detail: float = 0.0


def decode_assignment(
    bits: str, ap: AssignmentProblem, enc: AssignmentEncoding
) -> tuple[dict[int, int], list[Violation]]:
    """Decode one-hot rows into customer -> vehicle; violations are reported,
    never raised.  Fixed customers are merged in; zero/multi-hot customers are
    left unassigned for repair."""
    if len(bits) != enc.n_vars:
        raise ValueError(f"expected {enc.n_vars} bits, got {len(bits)}")
    assignment = dict(ap.fixed)
    violations: list[Violation] = []
    for c in enc.free:
        chosen = [v for v in range(enc.n_vehicles) if bits[enc.var_index[(c, v)]] == "1"]
        if len(chosen) == 1:
            assignment[c] = chosen[0]
        elif not chosen:
            violations.append(Violation("zero_hot", customer=c))
        else:
            violations.append(Violation("multi_hot", customer=c, detail=float(len(chosen))))
    loads = _vehicle_loads(assignment, ap)
    for v in range(enc.n_vehicles):
        if loads[v] > ap.capacity:
            violations.append(Violation("capacity", vehicle=v, detail=float(loads[v] - ap.capacity)))
    return assignment, violations


def _vehicle_loads(assignment: dict[int, int], ap: AssignmentProblem) -> dict[int, int]:
    loads = {v: 0 for v in range(ap.n_vehicles)}
    for c, v in assignment.items():
        loads[v] += ap.demands[c]
    return loads


def repair(assignment: dict[int, int], ap: AssignmentProblem) -> dict[int, int] | None:
    """Repair to a complete assignment with all loads within capacity.

    Unassigned customers go to the cheapest vehicle with headroom (or the one
    with the most headroom when none fits), then overloaded vehicles shed the
    free customer with the lowest cost-delta per unit demand to the cheapest
    vehicle with headroom.  Every move strictly reduces total excess, so the
    loop terminates; returns None when no feasible repair exists.
    """
    total_demand = sum(ap.demands[c] for c in ap.customers)
    if total_demand > ap.n_vehicles * ap.capacity:
        return None
    result = dict(assignment)
    loads = _vehicle_loads(result, ap)

    for c in sorted(ap.customers):
        if c in result:
            continue
        q = ap.demands[c]
        options = [(ap.assign_cost[(c, v)], v) for v in range(ap.n_vehicles) if loads[v] + q <= ap.capacity]
        if options:
            _, v = min(options)
        else:
            v = max(range(ap.n_vehicles), key=lambda w: ap.capacity - loads[w])
        result[c] = v
        loads[v] += q

    movable = set(ap.free)
    for _ in range(16 * max(1, len(ap.customers))):
        over = [(loads[v] - ap.capacity, v) for v in range(ap.n_vehicles) if loads[v] > ap.capacity]
        if not over:
            return result
        _, v_over = max(over)
        candidates = [c for c in movable if result.get(c) == v_over]
        best_move = None
        for c in candidates:
            q = ap.demands[c]
            for w in range(ap.n_vehicles):
                if w == v_over or loads[w] + q > ap.capacity:
                    continue
                delta = (ap.assign_cost[(c, w)] - ap.assign_cost[(c, v_over)]) / max(q, 1)
                if best_move is None or delta < best_move[0]:
                    best_move = (delta, c, w)
        if best_move is None:
            # fall back to any move that strictly reduces total excess
            for c in candidates:
                q = ap.demands[c]
                for w in range(ap.n_vehicles):
                    if w == v_over:
                        continue
                    reduction = min(q, loads[v_over] - ap.capacity)
                    increase = max(0, loads[w] + q - ap.capacity) - max(0, loads[w] - ap.capacity)
                    if reduction > increase:
                        delta = (ap.assign_cost[(c, w)] - ap.assign_cost[(c, v_over)]) / max(q, 1)
                        if best_move is None or delta < best_move[0]:
                            best_move = (delta, c, w)
        if best_move is None:
            return None
        _, c, w = best_move
        result[c] = w
        loads[v_over] -= ap.demands[c]
        loads[w] += ap.demands[c]
    return None


def route_clusters(
    assignment: dict[int, int], inst: CvrpInstance
) -> tuple[float, dict[int, list[int]]]:
    """Sum of exact per-cluster tours; raises on clusters too large to route."""
    dist = inst.distance_matrix()
    clusters: dict[int, list[int]] = {}
    for c, v in assignment.items():
        clusters.setdefault(v, []).append(c)
    total = 0.0
    tours = {}
    for v, members in sorted(clusters.items()):
        if len(members) > 13:
            raise PipelineError(f"cluster for vehicle {v} has {len(members)} customers (max 13)")
        cost, tour = held_karp(dist, sorted(members), inst.depot_index)
        total += cost
        tours[v] = tour
    return total, tours


def classical_greedy_assignment(ap: AssignmentProblem) -> dict[int, int] | None:
    """Demand-descending greedy: each free customer to the cheapest vehicle with
    headroom; None when some customer cannot be placed."""
    result = dict(ap.fixed)
    loads = _vehicle_loads(result, ap)
    for c in sorted(ap.free, key=lambda c: (-ap.demands[c], c)):
        q = ap.demands[c]
        options = [(ap.assign_cost[(c, v)], v) for v in range(ap.n_vehicles) if loads[v] + q <= ap.capacity]
        if not options:
            return None
        _, v = min(options)
        result[c] = v
        loads[v] += q
    return result


def reference_from_classical_search(
    inst: CvrpInstance, tries: int = 20, seed: int = 0
) -> tuple[float, dict[int, int]]:
    """Reference solution for instances without a known optimum: the best of
    `tries` greedy assignments under shuffled customer orders, routed exactly."""
    rng = np.random.default_rng(seed)
    seeds = select_seeds(inst, inst.n_vehicles)
    ap = build_assignment_problem(inst, seeds)
    best_cost, best_assignment = float("inf"), None
    order = list(ap.free)
    for t in range(tries):
        if t == 0:
            trial = sorted(order, key=lambda c: (-ap.demands[c], c))
        else:
            trial = list(order)
            rng.shuffle(trial)
        loads = {v: 0 for v in range(ap.n_vehicles)}
        assignment: dict[int, int] = {}
        ok = True
        for c in trial:
            q = ap.demands[c]
            options = [
                (ap.assign_cost[(c, v)], v)
                for v in range(ap.n_vehicles)
                if loads[v] + q <= ap.capacity
            ]
            if not options:
                ok = False
                break
            _, v = min(options)
            assignment[c] = v
            loads[v] += q
        if not ok:
            continue
        try:
            cost, _ = route_clusters(assignment, inst)
        except PipelineError:
            continue
        if cost < best_cost:
            best_cost, best_assignment = cost, assignment
    if best_assignment is None:
        raise PipelineError("no feasible classical reference found")
    return best_cost, best_assignment
