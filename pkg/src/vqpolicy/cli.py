"""Command-line interface.

Exit codes: 0 success, 1 configuration error (bad files/arguments), 2
execution error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vqpolicy", description="Closed-loop policy search for variational quantum optimization")
    parser.add_argument("-v", "--verbose", action="store_true", help="verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a staged curriculum search")
    p_run.add_argument("--config", required=True, help="run configuration JSON")
    p_run.add_argument("--out", required=True, help="run directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_eval = sub.add_parser("eval", help="score one policy on one configured stage")
    p_eval.add_argument("--policy", required=True, help="policy document JSON")
    p_eval.add_argument("--stage", required=True, help="stage name from the config")
    p_eval.add_argument("--config", required=True, help="run configuration JSON")
    p_eval.add_argument("--seed", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="exact classical oracles")
    oracle_sub = p_oracle.add_subparsers(dest="oracle_kind", required=True)
    p_mis = oracle_sub.add_parser("mis", help="exact maximum independent set")
    p_mis.add_argument("--graph", required=True)
    p_tsp = oracle_sub.add_parser("tsp", help="exact single tour over all customers")
    p_tsp.add_argument("--vrp", required=True)

    p_report = sub.add_parser("report", help="emit CSV tables and figures for a run")
    p_report.add_argument("--run", required=True, help="run directory")
    p_report.add_argument("--no-figures", action="store_true")

    p_gen = sub.add_parser("gen-instances", help="generate curriculum instances and a config template")
    p_gen.add_argument("--kind", choices=["mis", "cvrp"], required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--sizes", default=None, help="comma-separated sizes")
    p_gen.add_argument("--count", type=int, default=2, help="instances per size")
    p_gen.add_argument("--density", type=float, default=0.15, help="edge density (mis)")
    p_gen.add_argument("--held-out-last", action="store_true", help="mark the last mis stage held-out")
    p_gen.add_argument("--no-heldout", action="store_true", help="skip the bundled E-n13-k4 stage (cvrp)")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        return _dispatch(args)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # execution failure
        print(f"execution error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "eval":
        return _cmd_eval(args)
    if args.command == "oracle":
        return _cmd_oracle(args)
    if args.command == "report":
        return _cmd_report(args)
    return _cmd_gen(args)


def _cmd_run(args) -> int:
    from .harness import RunConfig, run_curriculum
    from .reporting import emit_report

    config = RunConfig.load(args.config)
    report = run_curriculum(config, args.out, seed=args.seed)
    emit_report(args.out)
    for stage in report.stages:
        kind = "held-out" if stage.held_out else "locked"
        print(f"{stage.name}: {kind} score {stage.locked_score:.6f} (policy {stage.locked_policy_id})")
    print(f"reports written under {Path(args.out) / 'reports'}")
    return 0


def _cmd_eval(args) -> int:
    from .bundles import InstanceLoader
    from .harness import RunConfig, suite_score
    from .policy import policy_from_dict

    config = RunConfig.load(args.config)
    stages = {s.name: s for s in config.stages}
    if args.stage not in stages:
        raise ValueError(f"unknown stage {args.stage!r}; configured: {sorted(stages)}")
    stage = stages[args.stage]
    policy = policy_from_dict(json.loads(Path(args.policy).read_text()))
    loader = InstanceLoader(config.mis_penalty, config.cvrp)
    seed = config.seed if args.seed is None else args.seed
    score = suite_score(policy, stage.instances, stage.confirm_budget, seed, loader)
    print(f"{args.stage}: suite-average gap {score:.6f} over {len(stage.instances)} instances")
    return 0


def _cmd_oracle(args) -> int:
    if args.oracle_kind == "mis":
        from .instances import exact_mis, parse_edge_list

        graph = parse_edge_list(Path(args.graph).read_text(), name=Path(args.graph).stem)
        size, witness = exact_mis(graph)
        print(f"{graph.name or args.graph}: exact MIS size {size}")
        print(f"witness: {witness}")
        return 0
    from .instances import held_karp, parse_vrplib

    inst = parse_vrplib(Path(args.vrp).read_text())
    cost, tour = held_karp(inst.distance_matrix(), inst.customers, inst.depot_index)
    print(f"{inst.name}: exact tour cost {cost:g} over {len(inst.customers)} customers")
    print(f"tour: {' -> '.join(str(n) for n in tour)} -> {inst.depot_index}")
    return 0


def _cmd_report(args) -> int:
    from .reporting import emit_report

    written = emit_report(args.run, figures=not args.no_figures)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_gen(args) -> int:
    sizes = None
    if args.sizes:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    if args.kind == "mis":
        from .generate import generate_mis_set

        config_path = generate_mis_set(
            args.out,
            sizes=sizes or (16, 32, 48, 64),
            count=args.count,
            density=args.density,
            seed=args.seed,
            held_out_last=args.held_out_last,
        )
    else:
        from .generate import generate_cvrp_set

        config_path = generate_cvrp_set(
            args.out,
            sizes=sizes or (8, 10, 12),
            count=args.count,
            seed=args.seed,
            with_held_out=not args.no_heldout,
        )
    print(f"wrote instances and config template: {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
