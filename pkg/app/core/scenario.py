from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union

from app.core.models import AttributeValue, DenyReason, EntityId, Outcome, Request, Timestamp
from app.core.policy import RelationDecl


@dataclass(frozen=True)
class RequestEvent:
    time: Timestamp
    subject: EntityId
    op: EntityId
    object: EntityId
    activity: EntityId

    def to_request(self) -> Request:
        return Request(subject=self.subject, op=self.op, object=self.object, activity=self.activity, time=self.time)


@dataclass(frozen=True)
class EnvEvent:
    time: Timestamp
    name: str
    value: AttributeValue


class DeviceAction(str, Enum):
    START = "start"
    STOP = "stop"


@dataclass(frozen=True)
class DeviceEvent:
    """Subject-less trigger: the device itself starts or finishes an activity."""
    time: Timestamp
    object: EntityId
    activity: EntityId
    action: DeviceAction


@dataclass(frozen=True)
class TickEvent:
    time: Timestamp


ScenarioEvent = Union[RequestEvent, EnvEvent, DeviceEvent, TickEvent]


@dataclass(frozen=True)
class Expectation:
    outcome: Outcome
    reason: Optional[DenyReason] = None
    # (device, activity) pairs the decision must have revoked, at least
    revoked: tuple[tuple[EntityId, EntityId], ...] = ()

    def accepts(
        self,
        outcome: Outcome,
        reason: Optional[DenyReason],
        revoked: tuple[tuple[EntityId, EntityId], ...] = (),
    ) -> bool:
        if outcome is not self.outcome:
            return False
        if self.reason is not None and self.reason is not reason:
            return False
        return set(self.revoked) <= set(revoked)

    def __str__(self) -> str:
        text = self.outcome.value.lower()
        if self.reason is not None:
            text = f"{text}:{self.reason.value}"
        if self.revoked:
            text += " revoked=" + ",".join(f"{d}/{a}" for d, a in self.revoked)
        return text


@dataclass(frozen=True)
class Scenario:
    """Time-ordered events; expectations are keyed by the index of the request or event start they check."""
    events: tuple[ScenarioEvent, ...] = ()
    expectations: Mapping[int, Expectation] = field(default_factory=dict)

    def requests(self) -> list[tuple[int, RequestEvent]]:
        return [(i, e) for i, e in enumerate(self.events) if isinstance(e, RequestEvent)]


@dataclass(frozen=True)
class RequestUniverse:
    """
    Candidate requests for the safety analyzer.

    An empty `requests` tuple means "derive from the rule heads". `properties`
    are relations checked by the analyzer without being enforced by the engine.
    """
    requests: tuple[Request, ...] = ()
    granularity: Optional[int] = None
    properties: tuple[RelationDecl, ...] = ()
