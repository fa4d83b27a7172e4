"""Staged scout-promote-confirm search with replay guardrails.

Every protocol step is recorded in an append-only event log keyed by
(event_type, stage, candidate_id).  The log is the source of truth: re-running
a partially completed run directory replays finished events instead of
recomputing them, so crash recovery never duplicates an evaluation, and two
complete runs with the same config and seed produce identical reports.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .bundles import BudgetedBundle, InstanceLoader
from .policy import (
    MAX_ATTEMPTS_CAP,
    PolicyDocument,
    PolicyExecutionError,
    policy_from_dict,
    policy_to_dict,
    run_controller,
    validate_policy,
)
from .proposer import (
    LlmEndpoint,
    ProposalContext,
    ProposerError,
    llm_propose,
    load_stub_transcript,
    policy_diff,
    scripted_propose,
    stub_post_fn,
)
from .solvers import SolverConfig, SolverError
from .util import canonical_json, derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalBudget:
    maxiter: int | None = None
    sampler_shots: int | None = None
    estimator_shots: int | None = None

    @classmethod
    def from_dict(cls, data: dict | None) -> "EvalBudget":
        return cls(**(data or {}))


SCOUT_BUDGET_DEFAULT = EvalBudget(maxiter=50, sampler_shots=256)
CONFIRM_BUDGET_DEFAULT = EvalBudget(maxiter=200)


@dataclass(frozen=True)
class StageSpec:
    name: str
    problem_kind: str  # "mis" | "cvrp"
    instances: tuple[str, ...]
    scout_subset: tuple[str, ...] = ()
    replay_stages: tuple[str, ...] = ()
    guardrail_delta: float = 0.02
    proposals_per_stage: int = 12
    promote_k: int = 3
    scout_budget: EvalBudget = SCOUT_BUDGET_DEFAULT
    confirm_budget: EvalBudget = CONFIRM_BUDGET_DEFAULT
    held_out: bool = False

    def __post_init__(self):
        if not self.instances:
            raise ValueError(f"stage {self.name!r} has no instances")
        missing = set(self.scout_subset) - set(self.instances)
        if missing:
            raise ValueError(f"stage {self.name!r}: scout subset not within instances: {missing}")
        if self.guardrail_delta < 0:
            raise ValueError("guardrail_delta must be >= 0")
        if not self.scout_subset:
            object.__setattr__(self, "scout_subset", self.instances[: min(2, len(self.instances))])


@dataclass
class CandidateRecord:
    candidate_id: str
    policy: PolicyDocument
    scout_score: float | None = None
    confirmed_score: float | None = None
    replay_results: dict = field(default_factory=dict)
    status: str = "proposed"
    provenance: dict = field(default_factory=dict)
    scout_details: list = field(default_factory=list)


@dataclass(frozen=True)
class StageReport:
    name: str
    held_out: bool
    baseline_score: float | None
    best_scout_score: float | None
    best_confirmed_score: float | None
    locked_policy_id: str
    locked_score: float


@dataclass(frozen=True)
class RunReport:
    stages: tuple[StageReport, ...]
    event_counts: dict[str, int]


class EventLog:
    """Append-only jsonl log with replay: completed events are never recomputed."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._seen: dict[tuple[str, str, str], dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                event = json.loads(line)
                key = (event["event_type"], event["stage"], event["candidate_id"])
                self._seen[key] = event["payload"]

    def replay_or(self, event_type: str, stage: str, candidate_id: str, compute) -> dict:
        key = (event_type, stage, candidate_id)
        if key in self._seen:
            return self._seen[key]
        payload = compute()
        event = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "event_type": event_type,
            "stage": stage,
            "candidate_id": candidate_id,
            "payload": payload,
        }
        with open(self.path, "a") as fh:
            fh.write(canonical_json(event) + "\n")
        self._seen[key] = payload
        return payload

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (etype, _, _) in self._seen:
            out[etype] = out.get(etype, 0) + 1
        return out


# ---------------------------------------------------------------------------
# suite scoring


def score_suite(
    policy: PolicyDocument, instances, budget: EvalBudget, seed: int, loader, max_attempts_cap: int = MAX_ATTEMPTS_CAP
) -> dict:
    """Run the controller on every instance; returns the mean gap and per-instance
    summaries.  Policy execution failures contribute gap 1.0; instance load
    failures abort naming the instance."""
    gaps = []
    details = []
    for path in instances:
        instance_id = Path(str(path)).stem
        try:
            bundle = loader(path)
        except Exception as exc:
            raise RuntimeError(f"failed to load instance {path}: {exc}") from exc
        budgeted = BudgetedBundle(
            bundle,
            maxiter=budget.maxiter,
            sampler_shots=budget.sampler_shots,
            estimator_shots=budget.estimator_shots,
        )
        try:
            result = run_controller(
                policy, budgeted, derive_seed(seed, instance_id), max_attempts_cap=max_attempts_cap
            )
        except (ValueError, PolicyExecutionError, SolverError) as exc:
            log.warning("policy %s failed on %s: %s", policy.policy_id, instance_id, exc)
            gaps.append(1.0)
            details.append({"instance": instance_id, "gap": 1.0, "error": str(exc)})
            continue
        gaps.append(result.final_gap)
        attempts = result.attempts
        details.append(
            {
                "instance": instance_id,
                "gap": result.final_gap,
                "feasible": result.final_feasible,
                "attempts_used": result.attempts_used,
                "mean_feasibility_rate": sum(a.feasibility_rate for a in attempts) / len(attempts),
                "mean_top1_prob": sum(a.top1_prob for a in attempts) / len(attempts),
                "any_stagnated": any(a.stagnated for a in attempts),
            }
        )
    return {"score": sum(gaps) / len(gaps), "per_instance": details}


def suite_score(
    policy: PolicyDocument, instances, budget: EvalBudget, seed: int, loader, max_attempts_cap: int = MAX_ATTEMPTS_CAP
) -> float:
    """Suite-average final gap of a policy over an instance list."""
    return score_suite(policy, instances, budget, seed, loader, max_attempts_cap)["score"]


# ---------------------------------------------------------------------------
# protocol steps


def scout_eval(
    record: CandidateRecord, stage: StageSpec, seed: int, loader, max_attempts_cap: int = MAX_ATTEMPTS_CAP
) -> CandidateRecord:
    if record.status != "proposed":
        raise ValueError(f"scout_eval requires a proposed candidate, got {record.status!r}")
    result = score_suite(record.policy, stage.scout_subset, stage.scout_budget, seed, loader, max_attempts_cap)
    record.scout_score = result["score"]
    record.scout_details = result["per_instance"]
    record.status = "scouted"
    return record


def promote(archive: list[CandidateRecord], k: int) -> list[CandidateRecord]:
    """k lowest scout scores among scouted candidates; ties favor earlier ids."""
    scouted = [c for c in archive if c.status == "scouted"]
    if not scouted:
        raise ValueError("promote requires at least one scouted candidate")
    chosen = sorted(scouted, key=lambda c: (c.scout_score, c.candidate_id))[:k]
    for c in chosen:
        c.status = "promoted"
    return chosen


def confirm(
    record: CandidateRecord, stage: StageSpec, seed: int, loader, max_attempts_cap: int = MAX_ATTEMPTS_CAP
) -> CandidateRecord:
    if record.status != "promoted":
        raise ValueError(f"confirm requires a promoted candidate, got {record.status!r}")
    record.confirmed_score = suite_score(
        record.policy, stage.instances, stage.confirm_budget, seed, loader, max_attempts_cap
    )
    record.status = "confirmed"
    return record


def replay_check(
    record: CandidateRecord,
    locked_scores: dict[str, float],
    stage: StageSpec,
    stages_by_name: dict[str, StageSpec],
    seed: int,
    loader,
    max_attempts_cap: int = MAX_ATTEMPTS_CAP,
) -> tuple[bool, dict]:
    """Re-score the candidate on each replay stage's full suite; fail when any
    score regresses beyond the guardrail over that stage's locked score."""
    if record.status != "confirmed":
        raise ValueError("replay_check requires a confirmed candidate")
    results = {}
    ok = True
    for name in stage.replay_stages:
        replay_stage = stages_by_name[name]
        score = suite_score(
            record.policy,
            replay_stage.instances,
            replay_stage.confirm_budget,
            derive_seed(seed, "replay", name),
            loader,
            max_attempts_cap,
        )
        regression = score - locked_scores[name]
        results[name] = {"score": score, "locked": locked_scores[name], "regression": regression}
        if regression > stage.guardrail_delta:
            ok = False
    record.replay_results = results
    if not ok:
        record.status = "guardrail_failed"
    return ok, results


# ---------------------------------------------------------------------------
# run configuration


def default_baseline_policy() -> PolicyDocument:
    return PolicyDocument(
        policy_id="baseline-vqe",
        initial_family="vqe",
        base_config=SolverConfig(sampler_shots=512),
        rules=(),
        max_attempts=1,
        metadata={"proposer": "baseline"},
    )


@dataclass(frozen=True)
class RunConfig:
    stages: tuple[StageSpec, ...]
    proposer: dict = field(default_factory=lambda: {"kind": "scripted"})
    seed: int = 0
    mis_penalty: float = 2.0
    cvrp: dict = field(default_factory=dict)
    baseline_policy: dict | None = None
    max_attempts_cap: int = MAX_ATTEMPTS_CAP

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        stages = []
        for s in data.get("stages", []):
            s = dict(s)
            if base_dir is not None:
                s["instances"] = [str(_resolve(base_dir, p)) for p in s["instances"]]
                s["scout_subset"] = [str(_resolve(base_dir, p)) for p in s.get("scout_subset", [])]
            stages.append(
                StageSpec(
                    name=s["name"],
                    problem_kind=s.get("problem_kind", "mis"),
                    instances=tuple(s["instances"]),
                    scout_subset=tuple(s.get("scout_subset", ())),
                    replay_stages=tuple(s.get("replay_stages", ())),
                    guardrail_delta=float(s.get("guardrail_delta", 0.02)),
                    proposals_per_stage=int(s.get("proposals_per_stage", 12)),
                    promote_k=int(s.get("promote_k", 3)),
                    scout_budget=EvalBudget.from_dict(s.get("scout_budget", {"maxiter": 50, "sampler_shots": 256})),
                    confirm_budget=EvalBudget.from_dict(s.get("confirm_budget", {"maxiter": 200})),
                    held_out=bool(s.get("held_out", False)),
                )
            )
        if not stages:
            raise ValueError("run config must declare at least one stage")
        return cls(
            stages=tuple(stages),
            proposer=dict(data.get("proposer", {"kind": "scripted"})),
            seed=int(data.get("seed", 0)),
            mis_penalty=float(data.get("mis_penalty", 2.0)),
            cvrp=dict(data.get("cvrp", {})),
            baseline_policy=data.get("baseline_policy"),
            max_attempts_cap=int(data.get("max_attempts_cap", MAX_ATTEMPTS_CAP)),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def build_proposer(run_config: RunConfig, out_dir: Path):
    """Proposal callable (ctx, rng_seed, candidate_id) -> (document, provenance).

    LLM and stub proposers fall back to the scripted mutator on any proposer
    error, so the closed loop never blocks on the endpoint.
    """
    kind = run_config.proposer.get("kind", "scripted")
    if kind == "scripted":
        def propose(ctx, rng_seed, candidate_id):
            doc = scripted_propose(ctx, rng_seed)
            return doc, dict(doc.metadata)
        return propose
    if kind in ("llm", "stub"):
        endpoint = LlmEndpoint.from_config(run_config.proposer)
        post_fn = None
        if kind == "stub":
            replies = load_stub_transcript(run_config.proposer["transcript"])
            post_fn = stub_post_fn(replies)

        def propose(ctx, rng_seed, candidate_id):
            transcript = out_dir / "transcripts" / f"{candidate_id}.json"
            try:
                doc = llm_propose(ctx, endpoint, post_fn=post_fn, transcript_path=transcript)
                prov = {"proposer": kind, "parent": ctx.locked_policy.policy_id}
                meta = dict(doc.metadata)
                meta.update(prov)
                return replace(doc, metadata=meta), prov
            except ProposerError as exc:
                log.warning("proposer %s failed (%s); falling back to scripted", kind, exc)
                doc = scripted_propose(ctx, rng_seed)
                prov = dict(doc.metadata)
                prov["proposer"] = "scripted_fallback"
                return replace(doc, metadata=prov), prov

        return propose
    raise ValueError(f"unknown proposer kind {kind!r}")


# ---------------------------------------------------------------------------
# the curriculum loop


def run_curriculum(run_config: RunConfig, out_dir, seed: int | None = None, loader=None, propose_fn=None) -> RunReport:
    """Full closed loop: per stage score the carried-forward baseline, propose,
    scout, promote, confirm, replay-check, and lock; a held-out stage evaluates
    the locked policy once with no proposals."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = run_config.seed if seed is None else seed

    snapshot = out / "config.json"
    config_blob = canonical_json(_config_fingerprint(run_config, seed))
    if snapshot.exists():
        if snapshot.read_text() != config_blob:
            raise ValueError(f"{out}: existing run directory was created with a different config")
    else:
        snapshot.write_text(config_blob)

    event_log = EventLog(out / "events.jsonl")
    loader = loader if loader is not None else InstanceLoader(run_config.mis_penalty, run_config.cvrp)
    propose_fn = propose_fn if propose_fn is not None else build_proposer(run_config, out)

    if run_config.baseline_policy is not None:
        locked = policy_from_dict(run_config.baseline_policy)
    else:
        locked = default_baseline_policy()
    cap = run_config.max_attempts_cap
    errors = validate_policy(locked, max_attempts_cap=cap)
    if errors:
        raise ValueError("baseline policy invalid: " + "; ".join(errors))

    stages_by_name = {s.name: s for s in run_config.stages}
    locked_scores: dict[str, float] = {}
    stage_reports: list[StageReport] = []

    for stage in run_config.stages:
        if stage.held_out:
            payload = event_log.replay_or(
                "held_out_evaluated",
                stage.name,
                "final",
                lambda: {
                    "policy_id": locked.policy_id,
                    "score": suite_score(
                        locked,
                        stage.instances,
                        stage.confirm_budget,
                        derive_seed(seed, stage.name, "held_out"),
                        loader,
                        cap,
                    ),
                },
            )
            stage_reports.append(
                StageReport(
                    name=stage.name,
                    held_out=True,
                    baseline_score=None,
                    best_scout_score=None,
                    best_confirmed_score=None,
                    locked_policy_id=payload["policy_id"],
                    locked_score=payload["score"],
                )
            )
            continue

        locked, report = _run_stage(
            stage, locked, locked_scores, stages_by_name, event_log, seed, loader, propose_fn, out, cap
        )
        locked_scores[stage.name] = report.locked_score
        stage_reports.append(report)

    event_log.replay_or("run_completed", "", "", lambda: {"stages": len(stage_reports)})
    report = RunReport(stages=tuple(stage_reports), event_counts=event_log.counts())
    (out / "report.json").write_text(canonical_json(_report_to_dict(report)))
    return report


def _run_stage(stage, locked, locked_scores, stages_by_name, event_log, seed, loader, propose_fn, out, cap):
    baseline_payload = event_log.replay_or(
        "baseline_scored",
        stage.name,
        "baseline",
        lambda: {
            "policy_id": locked.policy_id,
            "policy": policy_to_dict(locked),
            **score_suite(
                locked, stage.instances, stage.confirm_budget, derive_seed(seed, stage.name, "baseline"), loader, cap
            ),
        },
    )
    baseline_score = baseline_payload["score"]

    archive: list[CandidateRecord] = []
    digests: list[dict] = []
    for k in range(stage.proposals_per_stage):
        candidate_id = f"{stage.name}-c{k:03d}"
        ctx = ProposalContext(
            stage_name=stage.name,
            instance_count=len(stage.instances),
            locked_score=baseline_score,
            locked_policy=locked,
            recent=tuple(digests),
        )
        rng_seed = derive_seed(seed, stage.name, candidate_id, "propose")
        proposed = event_log.replay_or(
            "candidate_proposed",
            stage.name,
            candidate_id,
            lambda: _propose_payload(propose_fn, ctx, rng_seed, candidate_id, cap),
        )
        record = CandidateRecord(
            candidate_id=candidate_id,
            policy=policy_from_dict(proposed["policy"]),
            provenance=proposed["provenance"],
        )
        scouted = event_log.replay_or(
            "candidate_scouted",
            stage.name,
            candidate_id,
            lambda: _scout_payload(record, stage, derive_seed(seed, stage.name, candidate_id, "scout"), loader, cap),
        )
        record.scout_score = scouted["score"]
        record.scout_details = scouted["per_instance"]
        record.status = "scouted"
        archive.append(record)
        digests.append(
            {
                "candidate_id": candidate_id,
                "diff": policy_diff(locked, record.policy),
                "scout_score": record.scout_score,
                "confirmed_score": None,
                "diagnostics": _digest_diags(record.scout_details),
            }
        )

    if archive:
        promoted_payload = event_log.replay_or(
            "candidates_promoted",
            stage.name,
            "promotion",
            lambda: {"candidate_ids": [c.candidate_id for c in promote(archive, stage.promote_k)]},
        )
        promoted_ids = promoted_payload["candidate_ids"]
    else:
        promoted_ids = []
    by_id = {c.candidate_id: c for c in archive}
    promoted = [by_id[cid] for cid in promoted_ids]
    for record in promoted:
        record.status = "promoted"

    for record in promoted:
        confirmed = event_log.replay_or(
            "candidate_confirmed",
            stage.name,
            record.candidate_id,
            lambda: {
                "score": suite_score(
                    record.policy,
                    stage.instances,
                    stage.confirm_budget,
                    derive_seed(seed, stage.name, record.candidate_id, "confirm"),
                    loader,
                    cap,
                )
            },
        )
        record.confirmed_score = confirmed["score"]
        record.status = "confirmed"

    for record in promoted:
        checked = event_log.replay_or(
            "replay_checked",
            stage.name,
            record.candidate_id,
            lambda: _replay_payload(
                record, locked_scores, stage, stages_by_name, derive_seed(seed, stage.name, record.candidate_id), loader, cap
            ),
        )
        record.replay_results = checked["results"]
        if not checked["passed"]:
            record.status = "guardrail_failed"

    passers = [c for c in promoted if c.status == "confirmed"]
    winners = [c for c in passers if c.confirmed_score < baseline_score]
    if winners:
        winner = min(winners, key=lambda c: (c.confirmed_score, c.candidate_id))
        locked_next = winner.policy
        locked_score = winner.confirmed_score
        locked_id = winner.policy.policy_id
        locked_cid = winner.candidate_id
    else:
        log.warning("stage %s: no candidate beat the baseline; baseline retained", stage.name)
        locked_next = locked
        locked_score = baseline_score
        locked_id = locked.policy_id
        locked_cid = "baseline"

    event_log.replay_or(
        "stage_locked",
        stage.name,
        "lock",
        lambda: {
            "policy_id": locked_id,
            "candidate_id": locked_cid,
            "score": locked_score,
            "policy": policy_to_dict(locked_next),
        },
    )

    _write_candidate_views(out, stage, archive)

    best_scout = min((c.scout_score for c in archive), default=None)
    best_confirmed = min((c.confirmed_score for c in promoted if c.confirmed_score is not None), default=None)
    report = StageReport(
        name=stage.name,
        held_out=False,
        baseline_score=baseline_score,
        best_scout_score=best_scout,
        best_confirmed_score=best_confirmed,
        locked_policy_id=locked_id,
        locked_score=locked_score,
    )
    return locked_next, report


def _propose_payload(propose_fn, ctx, rng_seed, candidate_id, cap=MAX_ATTEMPTS_CAP):
    doc, provenance = propose_fn(ctx, rng_seed, candidate_id)
    errors = validate_policy(doc, max_attempts_cap=cap)
    if errors:
        raise ProposerError("proposer emitted an invalid document: " + "; ".join(errors))
    return {"policy": policy_to_dict(doc), "provenance": provenance}


def _scout_payload(record, stage, seed, loader, cap=MAX_ATTEMPTS_CAP):
    fresh = CandidateRecord(record.candidate_id, record.policy, provenance=record.provenance)
    scout_eval(fresh, stage, seed, loader, cap)
    return {"score": fresh.scout_score, "per_instance": fresh.scout_details}


def _replay_payload(record, locked_scores, stage, stages_by_name, seed, loader, cap=MAX_ATTEMPTS_CAP):
    passed, results = replay_check(record, locked_scores, stage, stages_by_name, seed, loader, cap)
    record.status = "confirmed"  # status transition is re-applied by the caller
    return {"passed": passed, "results": results}


def _digest_diags(details):
    if not details:
        return {}
    return {
        "mean_feasibility_rate": sum(d.get("mean_feasibility_rate", 0.0) for d in details) / len(details),
        "mean_top1_prob": sum(d.get("mean_top1_prob", 0.0) for d in details) / len(details),
        "any_stagnated": any(d.get("any_stagnated", False) for d in details),
    }


def _write_candidate_views(out: Path, stage: StageSpec, archive: list[CandidateRecord]) -> None:
    for record in archive:
        cdir = out / "candidates" / record.candidate_id
        cdir.mkdir(parents=True, exist_ok=True)
        (cdir / "policy.json").write_text(canonical_json(policy_to_dict(record.policy)))
        (cdir / "results.json").write_text(
            canonical_json(
                {
                    "candidate_id": record.candidate_id,
                    "status": record.status,
                    "scout_score": record.scout_score,
                    "confirmed_score": record.confirmed_score,
                    "replay_results": record.replay_results,
                    "provenance": record.provenance,
                }
            )
        )


def _config_fingerprint(run_config: RunConfig, seed: int) -> dict:
    return {
        "seed": seed,
        "proposer": run_config.proposer,
        "mis_penalty": run_config.mis_penalty,
        "cvrp": run_config.cvrp,
        "baseline_policy": run_config.baseline_policy,
        "max_attempts_cap": run_config.max_attempts_cap,
        "stages": [
            {
                "name": s.name,
                "problem_kind": s.problem_kind,
                "instances": list(s.instances),
                "scout_subset": list(s.scout_subset),
                "replay_stages": list(s.replay_stages),
                "guardrail_delta": s.guardrail_delta,
                "proposals_per_stage": s.proposals_per_stage,
                "promote_k": s.promote_k,
                "scout_budget": vars(s.scout_budget),
                "confirm_budget": vars(s.confirm_budget),
                "held_out": s.held_out,
            }
            for s in run_config.stages
        ],
    }


def _report_to_dict(report: RunReport) -> dict:
    return {
        "stages": [vars(s) for s in report.stages],
        "event_counts": report.event_counts,
    }
