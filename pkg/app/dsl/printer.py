"""Canonical text for policy sets and scenarios; the parsers read it back unchanged."""

from __future__ import annotations

from typing import Optional, Union

from app.core.models import AttributeValue, DeviceObject, Subject
from app.core.policy import (
    ActivityRule,
    AllOf,
    AnyOf,
    Compare,
    Expr,
    LocationIs,
    Not,
    ObligationAction,
    PolicySet,
    RelationDecl,
    RelationHolds,
    SourceIs,
    StateCondition,
    TimeIn,
    UsageLimit,
)
from app.core.scenario import DeviceEvent, EnvEvent, RequestEvent, Scenario, TickEvent
from app.dsl.lexer import UNITS, is_identifier, quote


def format_duration(seconds: int) -> str:
    for unit, size in UNITS.items():
        if seconds and seconds % size == 0:
            return f"{seconds // size}{unit}"
    return f"{seconds}s"


def format_value(value: AttributeValue) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        # repr is the shortest text that reads back to the same float
        return repr(value)
    if is_identifier(value) and value not in ("true", "false"):
        return value
    return quote(value)


def format_expr(expr: Expr, parent: Optional[str] = None) -> str:
    if isinstance(expr, AnyOf):
        text = " | ".join(format_expr(item, "or") for item in expr.items)
        return f"({text})" if parent in ("or", "and") else text
    if isinstance(expr, AllOf):
        text = " & ".join(format_expr(item, "and") for item in expr.items)
        return f"({text})" if parent == "and" else text
    if isinstance(expr, Not):
        return f"!({format_expr(expr.item)})"
    if isinstance(expr, StateCondition):
        text = f"{'!' if expr.negated else ''}{expr.activity}({expr.object}, {expr.source})"
        if expr.window is not None:
            text += f" within {format_duration(expr.window)}"
        return text
    if isinstance(expr, Compare):
        return f"{expr.scope.value}({expr.name}) {expr.op.value} {format_value(expr.literal)}"
    if isinstance(expr, LocationIs):
        return f"location({expr.target}) {'!=' if expr.negated else '='} {expr.location}"
    if isinstance(expr, RelationHolds):
        return f"rel({expr.relation}, {expr.subject}, {expr.target})"
    if isinstance(expr, TimeIn):
        return f"time in {format_duration(expr.start)}..{format_duration(expr.end)}"
    if isinstance(expr, SourceIs):
        return f"by {expr.pattern}"
    raise TypeError(f"not an expression: {expr!r}")


def format_obligations(actions: tuple[ObligationAction, ...]) -> str:
    return "; ".join(str(a) for a in actions)


def format_limit(limit: UsageLimit) -> str:
    text = f"limit {limit.scope.value} {limit.activity} {limit.max_count}/{format_duration(limit.window)}"
    return text + " fixed" if limit.fixed else text


def _attrs(attributes) -> str:
    if not attributes:
        return ""
    return " attr " + " ".join(f"{k}={format_value(attributes[k])}" for k in sorted(attributes))


def format_device(device: DeviceObject) -> str:
    parts = [f"device {device.id} type={device.object_type}"]
    if device.groups:
        parts.append("group=" + ",".join(sorted(device.groups)))
    if device.location is not None:
        parts.append(f"location={device.location}")
    if device.owner is not None:
        parts.append(f"owner={device.owner}")
    return " ".join(parts) + _attrs(device.attributes)


def format_subject(subject: Subject) -> str:
    parts = [f"subject {subject.id} kind={subject.kind.value}"]
    if subject.groups:
        parts.append("group=" + ",".join(sorted(subject.groups)))
    if subject.relations:
        parts.append("rel " + " ".join(f"{name}->{target}" for name, target in sorted(subject.relations)))
    return " ".join(parts) + _attrs(subject.attributes)


def format_rule(rule: ActivityRule) -> list[str]:
    lines = [
        f"rule on {rule.object}:",
        f"  allow {rule.op} by {rule.source} as {rule.activity}",
    ]
    if rule.pre_conditions is not None:
        lines.append(f"  pre {format_expr(rule.pre_conditions)}")
    if rule.current_conditions is not None:
        lines.append(f"  cur{'*' if rule.continuous_current else ''} {format_expr(rule.current_conditions)}")
    if rule.obligations:
        lines.append(f"  then {format_obligations(rule.obligations)}")
    if rule.contextual is not None:
        lines.append(f"  when{'*' if rule.continuous_contextual else ''} {format_expr(rule.contextual)}")
    lines.extend(f"  {format_limit(limit)}" for limit in rule.limits)
    return lines


def format_relation(rel: RelationDecl, keyword: str = "relation") -> str:
    text = f"{keyword} {rel.kind.value} {rel.a} {rel.b} scope={rel.scope.value}"
    if rel.window is not None:
        text += f" window={format_duration(rel.window)}"
    if rel.guard is not None:
        text += f" when {format_expr(rel.guard)}"
    d = rel.detail
    detail = []
    if d.first is not None:
        detail.append(f"first={d.first}")
    if d.mode is not None:
        detail.append(f"mode={d.mode.value}")
    if d.winner is not None:
        detail.append(f"winner={d.winner}")
    if d.effect is not None:
        detail.append(f"effect={d.effect.value}")
    if d.resume is not None:
        detail.append(f"resume={format_value(d.resume)}")
    if d.trigger is not None:
        detail.append(f"trigger={d.trigger}")
    if d.on is not None:
        detail.append(f"on={d.on}")
    if detail:
        text += " detail " + " ".join(detail)
    if d.then:
        text += f" then {format_obligations(d.then)}"
    return text


def format_policy(policy: PolicySet) -> str:
    sections: list[list[str]] = [
        [format_device(policy.devices[k]) for k in sorted(policy.devices)],
        [format_subject(policy.subjects[k]) for k in sorted(policy.subjects)],
        [f"env {k} = {format_value(policy.environment[k])}" for k in sorted(policy.environment)],
        [format_limit(limit) for limit in policy.limits],
    ]
    for rule in policy.rules:
        sections.append(format_rule(rule))
    sections.append([format_relation(rel) for rel in policy.relations])
    return "\n\n".join("\n".join(s) for s in sections if s) + "\n" if any(sections) else ""


def format_event(event) -> str:
    if isinstance(event, RequestEvent):
        return f"at {event.time} request {event.subject} {event.op} {event.object} {event.activity}"
    if isinstance(event, EnvEvent):
        return f"at {event.time} env {event.name}={format_value(event.value)}"
    if isinstance(event, DeviceEvent):
        return f"at {event.time} event {event.object} {event.activity} {event.action.value}"
    if isinstance(event, TickEvent):
        return f"at {event.time} tick"
    raise TypeError(f"not a scenario event: {event!r}")


def format_scenario(scenario: Scenario) -> str:
    lines = []
    for index, event in enumerate(scenario.events):
        lines.append(format_event(event))
        expectation = scenario.expectations.get(index)
        if expectation is not None:
            lines.append(f"at {event.time} expect {expectation}")
    return "".join(line + "\n" for line in lines)


def pretty_print(document: Union[PolicySet, Scenario]) -> str:
    if isinstance(document, PolicySet):
        return format_policy(document)
    if isinstance(document, Scenario):
        return format_scenario(document)
    raise TypeError(f"cannot print {type(document).__name__}")
