"""Post-hoc report files: stage summary and candidate trajectories as CSV,
plus rendered figures (per-stage search trajectories and a curriculum overview)
alongside the delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load_events(run_dir) -> list[dict]:
    path = Path(run_dir) / "events.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{run_dir}: no events.jsonl (not a run directory?)")
    events = []
    for line in path.read_text().splitlines():
        if line.strip():
            events.append(json.loads(line))
    return events


def _collect(events: list[dict]) -> dict:
    stages: dict[str, dict] = {}
    order: list[str] = []
    for ev in events:
        stage = ev["stage"]
        if not stage:
            continue
        if stage not in stages:
            stages[stage] = {"candidates": {}, "baseline": None, "locked": None, "held_out": None}
            order.append(stage)
        entry = stages[stage]
        etype, cid, payload = ev["event_type"], ev["candidate_id"], ev["payload"]
        if etype == "baseline_scored":
            entry["baseline"] = payload
        elif etype == "candidate_proposed":
            entry["candidates"].setdefault(cid, {})["policy"] = payload["policy"]
            entry["candidates"][cid]["provenance"] = payload["provenance"]
            entry["candidates"][cid]["status"] = "proposed"
        elif etype == "candidate_scouted":
            entry["candidates"].setdefault(cid, {})["scout_score"] = payload["score"]
            entry["candidates"][cid]["status"] = "scouted"
        elif etype == "candidates_promoted":
            for pid in payload["candidate_ids"]:
                entry["candidates"].setdefault(pid, {})["status"] = "promoted"
        elif etype == "candidate_confirmed":
            entry["candidates"].setdefault(cid, {})["confirmed_score"] = payload["score"]
            entry["candidates"][cid]["status"] = "confirmed"
        elif etype == "replay_checked":
            if not payload["passed"]:
                entry["candidates"].setdefault(cid, {})["status"] = "guardrail_failed"
        elif etype == "stage_locked":
            entry["locked"] = payload
        elif etype == "held_out_evaluated":
            entry["held_out"] = payload
    return {"order": order, "stages": stages}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def emit_report(run_dir, figures: bool = True) -> dict[str, Path]:
    """Write summary.csv, trajectory.csv, and (optionally) figure files.

    Outputs derive only from event payloads, never timestamps, so re-running
    on the same directory is byte-identical.
    """
    run_dir = Path(run_dir)
    data = _collect(load_events(run_dir))
    reports = run_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    summary_path = reports / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stage", "held_out", "baseline_score", "best_scout_score", "best_confirmed_score", "locked_policy_id", "locked_score"]
        )
        for stage in data["order"]:
            entry = data["stages"][stage]
            if entry["held_out"] is not None:
                writer.writerow([stage, "true", "", "", "", entry["held_out"]["policy_id"], _fmt(entry["held_out"]["score"])])
                continue
            cands = entry["candidates"]
            scouts = [c["scout_score"] for c in cands.values() if c.get("scout_score") is not None]
            confs = [c["confirmed_score"] for c in cands.values() if c.get("confirmed_score") is not None]
            writer.writerow(
                [
                    stage,
                    "false",
                    _fmt(entry["baseline"]["score"] if entry["baseline"] else None),
                    _fmt(min(scouts) if scouts else None),
                    _fmt(min(confs) if confs else None),
                    entry["locked"]["policy_id"] if entry["locked"] else "",
                    _fmt(entry["locked"]["score"] if entry["locked"] else None),
                ]
            )
    written["summary"] = summary_path

    trajectory_path = reports / "trajectory.csv"
    with open(trajectory_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stage", "row_kind", "candidate_id", "policy_id", "scout_score", "confirmed_score", "proxy_gap", "status", "mutation"]
        )
        for stage in data["order"]:
            entry = data["stages"][stage]
            if entry["held_out"] is not None:
                writer.writerow([stage, "held_out", "final", entry["held_out"]["policy_id"], "", _fmt(entry["held_out"]["score"]), "", "held_out", ""])
                continue
            if entry["baseline"] is not None:
                writer.writerow(
                    [stage, "baseline", "baseline", entry["baseline"]["policy_id"], "", _fmt(entry["baseline"]["score"]), "", "baseline", ""]
                )
            for cid in sorted(entry["candidates"]):
                c = entry["candidates"][cid]
                scout = c.get("scout_score")
                conf = c.get("confirmed_score")
                proxy_gap = scout - conf if scout is not None and conf is not None else None
                writer.writerow(
                    [
                        stage,
                        "candidate",
                        cid,
                        c.get("policy", {}).get("policy_id", ""),
                        _fmt(scout),
                        _fmt(conf),
                        _fmt(proxy_gap),
                        c.get("status", ""),
                        c.get("provenance", {}).get("mutation", ""),
                    ]
                )
            if entry["locked"] is not None:
                writer.writerow(
                    [stage, "locked", entry["locked"]["candidate_id"], entry["locked"]["policy_id"], "", _fmt(entry["locked"]["score"]), "", "locked", ""]
                )
    written["trajectory"] = trajectory_path

    if figures:
        written.update(_render_figures(data, reports))
    return written


def _render_figures(data: dict, reports: Path) -> dict[str, Path]:
    written: dict[str, Path] = {}
    searched = [s for s in data["order"] if data["stages"][s]["held_out"] is None]
    for stage in searched:
        entry = data["stages"][stage]
        fig, ax = plt.subplots(figsize=(7, 4))
        xs, scouts, colors = [], [], []
        confirmed_pts = []
        for i, cid in enumerate(sorted(entry["candidates"])):
            c = entry["candidates"][cid]
            if c.get("scout_score") is None:
                continue
            xs.append(i)
            scouts.append(c["scout_score"])
            retained = c.get("status") in ("promoted", "confirmed", "guardrail_failed")
            colors.append("tab:green" if retained else "0.6")
            if c.get("confirmed_score") is not None:
                confirmed_pts.append((i, c["confirmed_score"]))
        ax.scatter(xs, scouts, c=colors, s=36, label="scout")
        if confirmed_pts:
            cx, cy = zip(*confirmed_pts)
            ax.scatter(cx, cy, marker="D", c="tab:orange", s=48, label="confirmed")
        if entry["baseline"] is not None:
            ax.axhline(entry["baseline"]["score"], color="tab:blue", ls="--", lw=1, label="baseline")
        if entry["locked"] is not None:
            ax.axhline(entry["locked"]["score"], color="tab:red", ls=":", lw=1.2, label="locked")
        ax.set_xlabel("candidate")
        ax.set_ylabel("suite-average gap")
        ax.set_title(f"stage {stage}")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = reports / f"stage_{stage}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written[f"figure_{stage}"] = path

    fig, ax = plt.subplots(figsize=(8, 4))
    labels, baselines, bests, lockeds, helds = [], [], [], [], []
    for stage in data["order"]:
        entry = data["stages"][stage]
        labels.append(stage)
        if entry["held_out"] is not None:
            baselines.append(float("nan"))
            bests.append(float("nan"))
            lockeds.append(float("nan"))
            helds.append(entry["held_out"]["score"])
            continue
        cands = entry["candidates"].values()
        scouts = [c["scout_score"] for c in cands if c.get("scout_score") is not None]
        baselines.append(entry["baseline"]["score"] if entry["baseline"] else float("nan"))
        bests.append(min(scouts) if scouts else float("nan"))
        lockeds.append(entry["locked"]["score"] if entry["locked"] else float("nan"))
        helds.append(float("nan"))
    x = range(len(labels))
    width = 0.22
    ax.bar([i - 1.5 * width for i in x], baselines, width, label="baseline")
    ax.bar([i - 0.5 * width for i in x], bests, width, label="best scout")
    ax.bar([i + 0.5 * width for i in x], lockeds, width, label="locked")
    ax.bar([i + 1.5 * width for i in x], helds, width, label="held-out final")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("suite-average gap")
    ax.set_title("curriculum overview")
    ax.legend(fontsize=8)
    fig.tight_layout()
    overview = reports / "overview.png"
    fig.savefig(overview, dpi=110)
    plt.close(fig)
    written["figure_overview"] = overview
    return written
