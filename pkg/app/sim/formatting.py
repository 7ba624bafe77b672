from __future__ import annotations

from typing import Iterable, Optional, Sequence

from app.core.models import EVENT, TRIGGER_OP, ActivityInstance, Decision, EntityId, Outcome, Request
from app.core.policy import ObligationAction
from app.core.scenario import DeviceEvent, EnvEvent, RequestEvent, ScenarioEvent, TickEvent
from app.dsl.printer import format_value

Key = tuple[EntityId, EntityId]


def _keys(keys: Iterable[Key]) -> str:
    return ",".join(f"{device}/{activity}" for device, activity in keys)


def _obligation(action: ObligationAction) -> str:
    return f"{action.kind.value}:{action.activity}({action.object})"


def format_outcome(decision: Decision) -> str:
    if decision.outcome is Outcome.PERMIT:
        return "PERMIT"
    reason = decision.reason.value if decision.reason is not None else "unknown"
    return f"DENY({reason})"


def format_effects(
    *,
    obligations: Sequence[ObligationAction] = (),
    preempted: Sequence[tuple[EntityId, EntityId, str]] = (),
    revoked: Sequence[Key] = (),
    resumed: Sequence[Key] = (),
) -> str:
    parts = []
    if obligations:
        parts.append("obligations=" + ",".join(_obligation(o) for o in obligations))
    if preempted:
        parts.append("preempted=" + ",".join(f"{d}/{a}:{effect}" for d, a, effect in preempted))
    if revoked:
        parts.append("revoked=" + _keys(revoked))
    if resumed:
        parts.append("resumed=" + _keys(resumed))
    return "".join(" " + p for p in parts)


def format_decision_line(request: Request, decision: Decision) -> str:
    """`<time> <subject> <op> <object> <activity> -> PERMIT|DENY(<reason>) [effects]`"""
    head = f"{request.time} {request.subject} {request.op} {request.object} {request.activity}"
    effects = format_effects(
        obligations=decision.executed_obligations,
        preempted=[(p.device, p.activity, p.effect.value) for p in decision.preempted],
        revoked=decision.revoked,
        resumed=decision.resumed,
    )
    return f"{head} -> {format_outcome(decision)}{effects}"


def format_event_line(
    event: ScenarioEvent,
    decision: Optional[Decision],
    *,
    revoked: Sequence[Key] = (),
    resumed: Sequence[Key] = (),
) -> str:
    if decision is not None:
        if isinstance(event, RequestEvent):
            return format_decision_line(event.to_request(), decision)
        if isinstance(event, DeviceEvent):
            request = Request(subject=EVENT, op=TRIGGER_OP, object=event.object, activity=event.activity, time=event.time)
            return format_decision_line(request, decision)

    if isinstance(event, EnvEvent):
        head = f"{event.time} env {event.name}={format_value(event.value)}"
    elif isinstance(event, DeviceEvent):
        head = f"{event.time} event {event.object} {event.activity} {event.action.value}"
    elif isinstance(event, TickEvent):
        head = f"{event.time} tick"
    else:
        head = f"{event.time} {event!r}"
    return head + format_effects(revoked=revoked, resumed=resumed)


def format_digest(digest: str) -> str:
    return f"# digest {digest}"


def format_live(instances: Iterable[ActivityInstance]) -> str:
    text = ",".join(f"{i.device}/{i.activity}({i.initiator},{i.status.value})" for i in instances)
    return text or "-"
