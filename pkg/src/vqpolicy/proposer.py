"""Candidate policy generation.

Two proposers share one contract (emit a schema-valid policy document): a
deterministic scripted mutator used for offline runs and CI, and a client for
any chat-completion-compatible HTTP endpoint.  The LLM path never blocks the
search: network failures, invalid documents, and timeouts all fall back to the
scripted mutator at the call site.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import requests

from .policy import PolicyDocument, policy_from_dict, policy_to_dict, schema_text, validate_policy
from .solvers import FAMILIES, SAMPLER_SHOTS_CAP
from .util import canonical_json, short_digest

log = logging.getLogger(__name__)

API_KEY_ENV = "AQR_LLM_API_KEY"
URL_ENV = "AQR_LLM_URL"
DEFAULT_URL = "https://api.openai.com/v1/chat/completions"
MAX_DIGESTS = 10

DESIGN_SPACE = """\
Solver families: vqe (efficient_su2 ansatz), qaoa, ws_qaoa (warm-start mixer),
qrao (3:1 or 2:1 compression with magic or semideterministic rounding).
Tunable fields: reps, entanglement (linear|full), optimizer (nelder_mead|cobyla),
maxiter, estimator_shots (0 = exact expectations), sampler_shots (<= 65536),
objective (energy | cvar with cvar_alpha in (0,1]), qrao_ratio, qrao_rounding,
warm_start_epsilon, penalty_mode (hard_slack | tilted, CVRP only).
Retry rules fire on the last attempt's outcome; conditions may reference
feasible, gap, feasibility_rate, top1_prob, stagnated, attempt_index, family
with comparators ==, !=, <, <=, >, >= and connectives and/or/not.  A rule's
patch overrides config fields (it may switch family) for the next attempt.
"""


class ProposerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProposalContext:
    """Everything the proposer sees: stage summary, locked policy, recent digests."""

    stage_name: str
    instance_count: int
    locked_score: float | None
    locked_policy: PolicyDocument
    recent: tuple[dict, ...] = ()
    design_space: str = DESIGN_SPACE
    schema: str = ""

    def __post_init__(self):
        if len(self.recent) > MAX_DIGESTS:
            object.__setattr__(self, "recent", tuple(self.recent[-MAX_DIGESTS:]))
        if not self.schema:
            object.__setattr__(self, "schema", schema_text())


# ---------------------------------------------------------------------------
# scripted mutator


_RULE_TEMPLATES = {
    "stagnation_to_cvar": {
        "condition": "feasible and stagnated",
        "action": "retry",
        "patch": {"objective": "cvar", "cvar_alpha": 0.25},
    },
    "infeasible_family_switch": {
        "condition": "not feasible",
        "action": "retry",
        "patch": {},  # family filled in per parent
    },
    "concentration_fallback": {
        "condition": "top1_prob < 0.05 and family == qrao",
        "action": "retry",
        "patch": {"qrao_ratio": "2:1"},
    },
}


def _mut_switch_family(data: dict, rng: np.random.Generator) -> str | None:
    current = data["initial_family"]
    options = [f for f in FAMILIES if f != current]
    new = options[int(rng.integers(len(options)))]
    data["initial_family"] = new
    data["base_config"]["family"] = new
    base = data["base_config"]
    if new != "qrao":
        base.pop("qrao_ratio", None)
        base.pop("qrao_rounding", None)
    if new != "ws_qaoa":
        base.pop("warm_start_epsilon", None)
    if new in ("qaoa", "ws_qaoa"):
        base.pop("ansatz_kind", None)
    return f"family->{new}"


def _mut_toggle_objective(data: dict, rng: np.random.Generator) -> str | None:
    base = data["base_config"]
    if base.get("objective", "energy") == "cvar":
        base["objective"] = "energy"
        base.pop("cvar_alpha", None)
        return "objective->energy"
    alpha = float(rng.choice([0.1, 0.25, 0.5]))
    base["objective"] = "cvar"
    base["cvar_alpha"] = alpha
    return f"objective->cvar({alpha})"


def _mut_scale_shots(data: dict, rng: np.random.Generator) -> str | None:
    base = data["base_config"]
    factor = float(rng.choice([0.5, 2.0, 4.0]))
    shots = int(round(base.get("sampler_shots", 1024) * factor))
    shots = max(1, min(shots, SAMPLER_SHOTS_CAP))
    if shots == base.get("sampler_shots"):
        return None
    base["sampler_shots"] = shots
    return f"sampler_shots->{shots}"


def _mut_add_rule(data: dict, rng: np.random.Generator) -> str | None:
    rules = data.setdefault("rules", [])
    if len(rules) >= 3:
        return None
    existing = {r["condition"] for r in rules}
    names = sorted(_RULE_TEMPLATES)
    start = int(rng.integers(len(names)))
    for k in range(len(names)):
        name = names[(start + k) % len(names)]
        template = copy.deepcopy(_RULE_TEMPLATES[name])
        if template["condition"] in existing:
            continue
        if name == "infeasible_family_switch":
            options = [f for f in FAMILIES if f != data["initial_family"]]
            template["patch"] = {"family": options[int(rng.integers(len(options)))]}
        rules.append(template)
        return f"add_rule:{name}"
    return None


def _mut_remove_rule(data: dict, rng: np.random.Generator) -> str | None:
    rules = data.get("rules", [])
    if not rules:
        return None
    idx = int(rng.integers(len(rules)))
    rules.pop(idx)
    return f"remove_rule:{idx}"


def _mut_edit_rule(data: dict, rng: np.random.Generator) -> str | None:
    rules = data.get("rules", [])
    retry_rules = [i for i, r in enumerate(rules) if r.get("patch")]
    if not retry_rules:
        return None
    idx = retry_rules[int(rng.integers(len(retry_rules)))]
    patch = rules[idx]["patch"]
    if "cvar_alpha" in patch:
        patch["cvar_alpha"] = float(rng.choice([0.1, 0.25, 0.5]))
    elif "family" in patch:
        options = [f for f in FAMILIES if f != patch["family"]]
        patch["family"] = options[int(rng.integers(len(options)))]
    elif "qrao_ratio" in patch:
        patch["qrao_ratio"] = "3:1" if patch["qrao_ratio"] == "2:1" else "2:1"
    else:
        return None
    return f"edit_rule:{idx}"


def _mut_qrao_ratio(data: dict, rng: np.random.Generator) -> str | None:
    base = data["base_config"]
    if base["family"] != "qrao":
        return None
    base["qrao_ratio"] = "2:1" if base.get("qrao_ratio", "3:1") == "3:1" else "3:1"
    return f"qrao_ratio->{base['qrao_ratio']}"


def _mut_bump_reps(data: dict, rng: np.random.Generator) -> str | None:
    base = data["base_config"]
    reps = base.get("reps", 1)
    delta = int(rng.choice([-1, 1]))
    new = max(1, min(4, reps + delta))
    if new == reps:
        new = max(1, min(4, reps - delta))
    if new == reps:
        return None
    base["reps"] = new
    return f"reps->{new}"


def _mut_penalty_mode(data: dict, rng: np.random.Generator) -> str | None:
    base = data["base_config"]
    mode = base.get("penalty_mode", "tilted")
    base["penalty_mode"] = "hard_slack" if mode == "tilted" else "tilted"
    return f"penalty_mode->{base['penalty_mode']}"


_MUTATION_MENU = (
    _mut_switch_family,
    _mut_toggle_objective,
    _mut_scale_shots,
    _mut_add_rule,
    _mut_remove_rule,
    _mut_edit_rule,
    _mut_qrao_ratio,
    _mut_bump_reps,
    _mut_penalty_mode,
)


def scripted_propose(ctx: ProposalContext, rng_seed: int) -> PolicyDocument:
    """Apply one mutation from a fixed menu to the locked policy.

    Pure function of (ctx, rng_seed): the menu entry is drawn from the seed and
    retried in order until the mutated document validates.
    """
    rng = np.random.default_rng(rng_seed)
    parent = policy_to_dict(ctx.locked_policy)
    start = int(rng.integers(len(_MUTATION_MENU)))
    for k in range(len(_MUTATION_MENU)):
        mutate = _MUTATION_MENU[(start + k) % len(_MUTATION_MENU)]
        data = copy.deepcopy(parent)
        label = mutate(data, rng)
        if label is None:
            continue
        data["policy_id"] = f"p-{short_digest(data['base_config'])}-{short_digest(data.get('rules', []))[:4]}"
        data["metadata"] = {
            "proposer": "scripted",
            "parent": parent["policy_id"],
            "mutation": label,
        }
        if not validate_policy(data):
            return policy_from_dict(data)
    raise ProposerError("no applicable mutation produced a valid document")  # pragma: no cover


def policy_diff(parent: PolicyDocument, child: PolicyDocument) -> str:
    """Short human-readable field diff between two policy documents."""
    a, b = policy_to_dict(parent), policy_to_dict(child)
    changes = []
    ca, cb = a["base_config"], b["base_config"]
    for key in sorted(set(ca) | set(cb)):
        if ca.get(key) != cb.get(key):
            changes.append(f"{key}: {ca.get(key)}->{cb.get(key)}")
    if a.get("rules") != b.get("rules"):
        changes.append(f"rules: {len(a.get('rules', []))}->{len(b.get('rules', []))}")
    if a["max_attempts"] != b["max_attempts"]:
        changes.append(f"max_attempts: {a['max_attempts']}->{b['max_attempts']}")
    return "; ".join(changes) if changes else "(no field changes)"


# ---------------------------------------------------------------------------
# prompt rendering and LLM client


def render_prompt(ctx: ProposalContext) -> str:
    """Deterministic proposal prompt: role, design space, schema, locked policy,
    recent candidate digests (oldest first), and the output contract."""
    sections = [
        "You are tuning an adaptive controller for a variational quantum optimizer.",
        f"Current stage: {ctx.stage_name} ({ctx.instance_count} instances).",
    ]
    if ctx.locked_score is not None:
        sections.append(f"Locked controller suite-average gap: {ctx.locked_score:.6f} (lower is better).")
    sections += [
        "Design space:",
        ctx.design_space.rstrip(),
        "Policy documents must validate against this JSON schema:",
        ctx.schema.rstrip(),
        "Currently locked policy:",
        canonical_json(policy_to_dict(ctx.locked_policy)),
    ]
    if ctx.recent:
        sections.append("Recent candidates (oldest first):")
        for digest in ctx.recent:
            sections.append(canonical_json(digest))
    sections.append(
        "Propose exactly one improved policy document. Reply with a single fenced "
        "code block containing only the JSON document."
    )
    return "\n\n".join(sections)


@dataclass(frozen=True)
class LlmEndpoint:
    url: str = DEFAULT_URL
    model: str = "gpt-4o-mini"
    temperature: float = 0.7
    timeout: float = 120.0
    max_validation_attempts: int = 3
    max_network_attempts: int = 3
    backoff: float = 1.0

    @classmethod
    def from_config(cls, data: dict) -> "LlmEndpoint":
        kwargs = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "url" not in kwargs and os.environ.get(URL_ENV):
            kwargs["url"] = os.environ[URL_ENV]
        return cls(**kwargs)


def _http_post(endpoint: LlmEndpoint) -> Callable[[list[dict]], str]:
    def post(messages: list[dict]) -> str:
        key = os.environ.get(API_KEY_ENV, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": endpoint.model,
            "messages": messages,
            "temperature": endpoint.temperature,
        }
        last_exc: Exception | None = None
        for attempt in range(endpoint.max_network_attempts):
            try:
                resp = requests.post(
                    endpoint.url, json=payload, headers=headers, timeout=endpoint.timeout
                )
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_exc = exc
                if attempt + 1 < endpoint.max_network_attempts:
                    time.sleep(endpoint.backoff * (2**attempt))
        raise ProposerError(f"endpoint unreachable after {endpoint.max_network_attempts} attempts: {last_exc}")

    return post


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_fenced_block(text: str) -> str:
    match = _FENCE_RE.search(text)
    if match is None:
        raise ProposerError("reply contained no fenced code block")
    return match.group(1).strip()


def redact(text: str) -> str:
    key = os.environ.get(API_KEY_ENV, "")
    if key:
        return text.replace(key, "[REDACTED]")
    return text


def llm_propose(
    ctx: ProposalContext,
    endpoint: LlmEndpoint,
    post_fn: Callable[[list[dict]], str] | None = None,
    transcript_path=None,
) -> PolicyDocument:
    """Request one policy document from a chat-completion endpoint.

    Invalid replies are re-prompted with the validation errors appended, up to
    max_validation_attempts total requests.  Raises ProposerError when every
    attempt fails; the harness falls back to the scripted proposer.
    """
    post = post_fn if post_fn is not None else _http_post(endpoint)
    messages = [{"role": "user", "content": render_prompt(ctx)}]
    transcript: list[dict] = []
    doc: PolicyDocument | None = None
    failure = "validation attempts exhausted"
    try:
        for _ in range(endpoint.max_validation_attempts):
            content = post(messages)
            transcript.append({"request_messages": len(messages), "response": redact(content)})
            try:
                block = extract_fenced_block(content)
                data = json.loads(block)
            except (ProposerError, json.JSONDecodeError) as exc:
                errors = [str(exc)]
            else:
                if not isinstance(data, dict):
                    errors = ["document must be a JSON object"]
                else:
                    errors = validate_policy(data)
                if not errors:
                    doc = policy_from_dict(data)
                    break
            messages = messages + [
                {"role": "assistant", "content": content},
                {
                    "role": "user",
                    "content": "The document was rejected:\n- "
                    + "\n- ".join(errors)
                    + "\nReturn a corrected document in a single fenced JSON block.",
                },
            ]
    finally:
        if transcript_path is not None:
            transcript_path.parent.mkdir(parents=True, exist_ok=True)
            transcript_path.write_text(
                json.dumps(
                    {
                        "endpoint": {
                            "url": redact(endpoint.url),
                            "model": endpoint.model,
                            "temperature": endpoint.temperature,
                        },
                        "prompt": redact(messages[0]["content"]),
                        "exchanges": transcript,
                        "accepted": doc is not None,
                    },
                    indent=2,
                )
            )
    if doc is None:
        raise ProposerError(failure)
    return doc


def load_stub_transcript(path) -> list[str]:
    """Stub transcript file: a JSON array of canned reply strings, one per request."""
    data = json.loads(open(path).read())
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise ValueError("stub transcript must be a JSON array of strings")
    return data


def stub_post_fn(replies: Sequence[str]) -> Callable[[list[dict]], str]:
    """Consume canned replies in order; raises when the transcript runs dry."""
    replies = list(replies)
    state = {"i": 0}

    def post(messages: list[dict]) -> str:
        if state["i"] >= len(replies):
            raise ProposerError("stub transcript exhausted")
        reply = replies[state["i"]]
        state["i"] += 1
        return reply

    return post
