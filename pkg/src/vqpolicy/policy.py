"""Declarative adaptive controllers and their interpreter.

A policy is data, not code: an initial solver family, a base configuration,
and an ordered list of retry rules whose conditions are small boolean
expressions over the last attempt's diagnostics.  Documents are JSON with a
published schema (data/policy.schema.json); unknown fields are rejected so
machine-generated candidates stay honest.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import jsonschema

from .solvers import (
    CONFIG_FIELDS,
    FAMILIES,
    AttemptOutcome,
    SolverConfig,
    config_from_dict,
    config_to_dict,
    validate_config,
)
from .util import derive_seed

MAX_ATTEMPTS_CAP = 4

CONDITION_FIELDS = {
    "feasible": "bool",
    "gap": "num",
    "feasibility_rate": "num",
    "top1_prob": "num",
    "stagnated": "bool",
    "attempt_index": "num",
    "family": "str",
}

_COMPARATORS = ("==", "!=", "<=", ">=", "<", ">")


class ConditionError(ValueError):
    pass


class PolicyExecutionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# condition expressions


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>-?\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>==|!=|<=|>=|<|>)|(?P<paren>[()]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ConditionError(f"unexpected character at {text[pos:]!r}")
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident")))
        elif m.group("op") is not None:
            tokens.append(("op", m.group("op")))
        else:
            tokens.append(("paren", m.group("paren")))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive descent over: or > and > not > comparison > atom."""

    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def parse(self):
        node = self.or_expr()
        if self.pos != len(self.tokens):
            raise ConditionError(f"trailing tokens at {self.tokens[self.pos:]}")
        return node

    def or_expr(self):
        node = self.and_expr()
        while self.peek() == ("ident", "or"):
            self.take()
            node = ("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self.peek() == ("ident", "and"):
            self.take()
            node = ("and", node, self.not_expr())
        return node

    def not_expr(self):
        if self.peek() == ("ident", "not"):
            self.take()
            return ("not", self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.atom()
        kind, value = self.peek()
        if kind == "op":
            self.take()
            right = self.atom()
            return ("cmp", value, left, right)
        return left

    def atom(self):
        kind, value = self.take()
        if kind == "paren" and value == "(":
            node = self.or_expr()
            if self.take() != ("paren", ")"):
                raise ConditionError("unbalanced parenthesis")
            return node
        if kind == "num":
            return ("num", float(value))
        if kind == "ident":
            if value == "true":
                return ("bool", True)
            if value == "false":
                return ("bool", False)
            if value in ("and", "or", "not"):
                raise ConditionError(f"misplaced keyword {value!r}")
            if value in CONDITION_FIELDS:
                return ("field", value)
            if value in FAMILIES:
                return ("str", value)
            raise ConditionError(f"unknown field {value!r}")
        raise ConditionError("unexpected end of condition")


def parse_condition(text: str):
    tokens = _tokenize(text)
    if not tokens:
        raise ConditionError("empty condition")
    ast = _Parser(tokens).parse()
    _type_of(ast, require="bool")
    return ast


def _type_of(node, require: str | None = None) -> str:
    kind = node[0]
    if kind in ("and", "or"):
        _type_of(node[1], require="bool")
        _type_of(node[2], require="bool")
        t = "bool"
    elif kind == "not":
        _type_of(node[1], require="bool")
        t = "bool"
    elif kind == "cmp":
        _, op, left, right = node
        lt, rt = _type_of(left), _type_of(right)
        if lt != rt:
            raise ConditionError(f"type mismatch in comparison: {lt} {op} {rt}")
        if lt in ("str", "bool") and op not in ("==", "!="):
            raise ConditionError(f"operator {op!r} not defined for {lt} values")
        t = "bool"
    elif kind == "field":
        t = CONDITION_FIELDS[node[1]]
    elif kind == "num":
        t = "num"
    elif kind == "str":
        t = "str"
    elif kind == "bool":
        t = "bool"
    else:  # pragma: no cover
        raise ConditionError(f"bad node {node!r}")
    if require is not None and t != require:
        raise ConditionError(f"expected {require} expression, got {t}")
    return t


def _eval_node(node, outcome: AttemptOutcome):
    kind = node[0]
    if kind == "and":
        return _eval_node(node[1], outcome) and _eval_node(node[2], outcome)
    if kind == "or":
        return _eval_node(node[1], outcome) or _eval_node(node[2], outcome)
    if kind == "not":
        return not _eval_node(node[1], outcome)
    if kind == "cmp":
        _, op, left, right = node
        lv, rv = _eval_node(left, outcome), _eval_node(right, outcome)
        if op == "==":
            return lv == rv
        if op == "!=":
            return lv != rv
        if op == "<":
            return lv < rv
        if op == "<=":
            return lv <= rv
        if op == ">":
            return lv > rv
        return lv >= rv
    if kind == "field":
        return getattr(outcome, node[1])
    return node[1]


def eval_condition(cond: str, outcome: AttemptOutcome) -> bool:
    return bool(_eval_node(parse_condition(cond), outcome))


# ---------------------------------------------------------------------------
# documents


@dataclass(frozen=True)
class RetryRule:
    condition: str
    action: str  # "stop" | "retry"
    patch: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PolicyDocument:
    policy_id: str
    initial_family: str
    base_config: SolverConfig
    rules: tuple[RetryRule, ...] = ()
    max_attempts: int = 1
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class InstanceResult:
    attempts: tuple[AttemptOutcome, ...]
    final_gap: float
    final_feasible: bool
    attempts_used: int


def load_schema() -> dict:
    text = resources.files("vqpolicy.data").joinpath("policy.schema.json").read_text()
    return json.loads(text)


def schema_text() -> str:
    return resources.files("vqpolicy.data").joinpath("policy.schema.json").read_text()


def policy_to_dict(doc: PolicyDocument) -> dict:
    return {
        "policy_id": doc.policy_id,
        "initial_family": doc.initial_family,
        "base_config": config_to_dict(doc.base_config),
        "rules": [
            {"condition": r.condition, "action": r.action, "patch": dict(r.patch)}
            for r in doc.rules
        ],
        "max_attempts": doc.max_attempts,
        "metadata": dict(doc.metadata),
    }


def policy_from_dict(data: dict) -> PolicyDocument:
    errors = validate_policy(data)
    if errors:
        raise ValueError("invalid policy document: " + "; ".join(errors))
    return PolicyDocument(
        policy_id=data["policy_id"],
        initial_family=data["initial_family"],
        base_config=config_from_dict(data["base_config"]),
        rules=tuple(
            RetryRule(condition=r["condition"], action=r["action"], patch=dict(r.get("patch", {})))
            for r in data.get("rules", [])
        ),
        max_attempts=int(data["max_attempts"]),
        metadata=dict(data.get("metadata", {})),
    )


def apply_patch(config: SolverConfig, patch: dict) -> SolverConfig:
    """Overlay patch fields onto a config; raises on invalid results."""
    unknown = set(patch) - set(CONFIG_FIELDS)
    if unknown:
        raise PolicyExecutionError(f"patch has unknown config fields: {sorted(unknown)}")
    try:
        new = replace(config, **patch)
    except TypeError as exc:
        raise PolicyExecutionError(f"patch failed to apply: {exc}") from exc
    errors = validate_config(new)
    if errors:
        raise PolicyExecutionError("patched config invalid: " + "; ".join(errors))
    return new


def validate_policy(doc: PolicyDocument | dict, max_attempts_cap: int = MAX_ATTEMPTS_CAP) -> list[str]:
    """Structural (JSON schema) plus semantic validation; empty list means ok."""
    data = policy_to_dict(doc) if isinstance(doc, PolicyDocument) else doc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "document"
        errors.append(f"{path}: {err.message}")
    if errors:
        return errors

    try:
        base = config_from_dict(data["base_config"])
    except ValueError as exc:
        return [f"base_config: {exc}"]
    if data["initial_family"] != base.family:
        errors.append(
            f"initial_family: {data['initial_family']!r} does not match base_config family {base.family!r}"
        )
    if not 1 <= data["max_attempts"] <= max_attempts_cap:
        errors.append(f"max_attempts: must be in [1, {max_attempts_cap}]")
    for idx, rule in enumerate(data.get("rules", [])):
        try:
            parse_condition(rule["condition"])
        except ConditionError as exc:
            errors.append(f"rules/{idx}/condition: {exc}")
        try:
            apply_patch(base, rule.get("patch", {}))
        except PolicyExecutionError as exc:
            errors.append(f"rules/{idx}/patch: {exc}")
    return errors


# ---------------------------------------------------------------------------
# controller loop


def next_action(doc: PolicyDocument, history: Sequence[AttemptOutcome]) -> tuple[str, SolverConfig | None]:
    """Decide after the latest attempt: ("stop", None) or ("retry", next config).

    Patches from previously fired rules compose in order, so the decision is a
    pure function of the document and the attempt history.
    """
    if not history:
        raise ValueError("history must contain at least the current attempt")
    config = doc.base_config
    for outcome in history[:-1]:
        fired = _first_matching(doc, outcome)
        if fired is not None and fired.action == "retry":
            config = apply_patch(config, fired.patch)
    last = history[-1]
    if last.gap == 0.0:
        return "stop", None
    if last.attempt_index + 1 >= doc.max_attempts:
        return "stop", None
    rule = _first_matching(doc, last)
    if rule is None or rule.action == "stop":
        return "stop", None
    return "retry", apply_patch(config, rule.patch)


def _first_matching(doc: PolicyDocument, outcome: AttemptOutcome) -> RetryRule | None:
    for rule in doc.rules:
        if eval_condition(rule.condition, outcome):
            return rule
    return None


def run_controller(
    doc: PolicyDocument, bundle, seed: int, max_attempts_cap: int = MAX_ATTEMPTS_CAP
) -> InstanceResult:
    """Execute the per-instance attempt loop on a prepared problem bundle.

    The bundle exposes run_attempt(config, attempt_index) -> AttemptOutcome.
    Solver errors are recorded as infeasible attempts (gap 1.0) and the rules
    decide whether to continue; an invalid patch stops the loop.
    """
    from .solvers import failed_outcome  # local import to keep module load light

    errors = validate_policy(doc, max_attempts_cap=max_attempts_cap)
    if errors:
        raise ValueError("refusing to run invalid policy: " + "; ".join(errors))

    history: list[AttemptOutcome] = []
    config = doc.base_config
    for attempt in range(doc.max_attempts):
        attempt_config = replace(config, seed=derive_seed(seed, attempt))
        try:
            outcome = bundle.run_attempt(attempt_config, attempt)
        except Exception:
            outcome = failed_outcome(attempt, attempt_config.family)
        history.append(outcome)
        try:
            action, next_config = next_action(doc, history)
        except PolicyExecutionError:
            break
        if action == "stop":
            break
        config = next_config

    best = min(history, key=lambda o: (o.gap, o.attempt_index))
    return InstanceResult(
        attempts=tuple(history),
        final_gap=best.gap,
        final_feasible=best.feasible,
        attempts_used=len(history),
    )
