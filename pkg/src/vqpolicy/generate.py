"""Seeded curriculum-instance generation plus ready-to-run config templates."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import cvrp as cv
from .instances import CvrpInstance, random_er_graph, serialize_edge_list, serialize_vrplib
from .util import canonical_json, derive_seed


def generate_mis_set(
    out_dir,
    sizes=(16, 32, 48, 64),
    count: int = 2,
    density: float = 0.15,
    seed: int = 0,
    held_out_last: bool = False,
) -> Path:
    """Write an Erdos-Renyi MIS ladder and a run-config template; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = []
    previous: list[str] = []
    for size in sizes:
        files = []
        for c in range(count):
            g = random_er_graph(size, density, derive_seed(seed, "mis", size, c))
            fname = f"mis_{size:03d}_{c}.txt"
            (out / fname).write_text(serialize_edge_list(g))
            files.append(fname)
        held_out = held_out_last and size == sizes[-1] and len(sizes) > 1
        stage = {
            "name": f"mis-{size}",
            "problem_kind": "mis",
            "instances": files,
            "scout_subset": files[: min(2, len(files))],
            "replay_stages": [] if held_out else list(previous),
            "guardrail_delta": 0.02,
            "proposals_per_stage": 12,
            "promote_k": 3,
            "held_out": held_out,
        }
        stages.append(stage)
        if not held_out:
            previous.append(stage["name"])
    config = {"proposer": {"kind": "scripted"}, "seed": seed, "mis_penalty": 2.0, "stages": stages}
    config_path = out / "mis_run.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path


def _random_cvrp(n_customers: int, seed: int, name: str) -> CvrpInstance:
    rng = np.random.default_rng(seed)
    capacity = 40
    coords = rng.integers(0, 61, size=(n_customers + 1, 2)).astype(float)
    demands = np.concatenate([[0], rng.integers(1, capacity // 3 + 1, size=n_customers)])
    total = int(demands.sum())
    n_vehicles = max(2, int(np.ceil(total / (0.75 * capacity))))
    return CvrpInstance(
        name=f"{name}-k{n_vehicles}",
        n_nodes=n_customers + 1,
        coords=coords,
        demands=demands,
        capacity=capacity,
        n_vehicles=n_vehicles,
    )


def generate_cvrp_set(
    out_dir,
    sizes=(8, 10, 12),
    count: int = 2,
    seed: int = 0,
    rho: float = 1.5,
    max_reduced_vars: int = 16,
    with_held_out: bool = True,
) -> Path:
    """Write random CVRP curriculum instances (with classical reference sidecars)
    and a run-config template ending at the bundled E-n13-k4 held-out stage.

    Candidate instances are filtered until the fixing rule leaves a reduced
    QUBO of at most max_reduced_vars variables, so every stage fits the
    simulator.  The sidecar reference is the best of 20 shuffled greedy
    assignments routed exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = []
    previous: list[str] = []
    for size in sizes:
        files = []
        for c in range(count):
            inst, ref_cost, ref_assignment = _find_viable_cvrp(size, derive_seed(seed, "cvrp", size, c), rho, max_reduced_vars)
            stem = f"cvrp_{size:02d}_{c}"
            fname = f"{stem}.vrp"
            (out / fname).write_text(serialize_vrplib(inst))
            partition: dict[int, list[int]] = {}
            for cust, veh in sorted(ref_assignment.items()):
                partition.setdefault(veh, []).append(cust)
            (out / f"{stem}.ref.json").write_text(
                canonical_json(
                    {
                        "name": inst.name,
                        "reference_cost": ref_cost,
                        "partition": [partition[v] for v in sorted(partition)],
                        "method": "best-of-20-shuffled-greedy",
                        "seed": seed,
                    }
                )
            )
            files.append(fname)
        stage = {
            "name": f"cvrp-{size}",
            "problem_kind": "cvrp",
            "instances": files,
            "scout_subset": files[: min(2, len(files))],
            "replay_stages": list(previous),
            "guardrail_delta": 0.02,
            "proposals_per_stage": 12,
            "promote_k": 3,
            "held_out": False,
        }
        stages.append(stage)
        previous.append(stage["name"])
    if with_held_out:
        for fname in ("E-n13-k4.vrp", "E-n13-k4.ref.json"):
            data = resources.files("vqpolicy.data").joinpath(fname).read_text()
            (out / fname).write_text(data)
        stages.append(
            {
                "name": "e-n13-k4",
                "problem_kind": "cvrp",
                "instances": ["E-n13-k4.vrp"],
                "scout_subset": ["E-n13-k4.vrp"],
                "replay_stages": [],
                "held_out": True,
            }
        )
    config = {
        "proposer": {"kind": "scripted"},
        "seed": seed,
        "cvrp": {"rho": rho},
        "stages": stages,
    }
    config_path = out / "cvrp_run.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path


def _find_viable_cvrp(size: int, seed: int, rho: float, max_reduced_vars: int):
    for attempt in range(200):
        trial_seed = derive_seed(seed, attempt)
        inst = _random_cvrp(size, trial_seed, f"cvrp{size:02d}s{attempt}")
        try:
            seeds = cv.select_seeds(inst, inst.n_vehicles)
            ap = cv.fix_unambiguous(cv.build_assignment_problem(inst, seeds), rho)
            if len(ap.free) * ap.n_vehicles > max_reduced_vars:
                continue
            if any(len(members) > 13 for members in _cluster_sizes(ap).values()):
                continue
            ref_cost, ref_assignment = cv.reference_from_classical_search(inst, tries=20, seed=trial_seed)
        except (cv.PipelineError, ValueError):
            continue
        return inst, ref_cost, ref_assignment
    raise RuntimeError(f"could not generate a viable {size}-customer instance from seed {seed}")


def _cluster_sizes(ap):
    clusters: dict[int, list[int]] = {v: [] for v in range(ap.n_vehicles)}
    for c, v in ap.fixed.items():
        clusters[v].append(c)
    return clusters
