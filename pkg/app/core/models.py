from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Mapping, Optional, Union

if TYPE_CHECKING:
    from app.core.policy import ObligationAction

EntityId = str
Timestamp = int
AttributeValue = Union[bool, int, float, str]

# Reserved names
EVENT: EntityId = "EVENT"
INACTIVE: EntityId = "inactive"
ANY: EntityId = "ANY"
TRIGGER_OP: EntityId = "TRIGGER"

DAY_SECONDS = 86400


def value_kind(value: AttributeValue) -> str:
    """Kind of an attribute value: 'boolean', 'number' or 'string'."""
    # bool first: it is an int subclass
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    raise TypeError(f"Unsupported attribute value: {value!r}")


class SubjectKind(str, Enum):
    USER = "user"
    DEVICE = "device"
    EVENT = "EVENT"


class ActivityStatus(str, Enum):
    ACTIVE = "active"
    HALTED = "halted"
    COMPLETED = "completed"
    ABORTED = "aborted"

    @property
    def is_live(self) -> bool:
        return self in (ActivityStatus.ACTIVE, ActivityStatus.HALTED)


class Phase(str, Enum):
    """PRE looks at finished instances, CURRENT at running ones."""
    PRE = "pre"
    CURRENT = "current"


class CounterScope(str, Enum):
    PER_SOURCE = "per-source"
    PER_OBJECT = "per-object"
    SYSTEM_WIDE = "system-wide"


@dataclass(frozen=True)
class DeviceObject:
    id: EntityId
    object_type: EntityId
    groups: frozenset[EntityId] = frozenset()
    location: Optional[EntityId] = None
    owner: Optional[EntityId] = None
    attributes: Mapping[str, AttributeValue] = field(default_factory=dict)


@dataclass(frozen=True)
class Subject:
    id: EntityId
    kind: SubjectKind
    groups: frozenset[EntityId] = frozenset()
    relations: frozenset[tuple[str, EntityId]] = frozenset()
    attributes: Mapping[str, AttributeValue] = field(default_factory=dict)


EVENT_SUBJECT = Subject(id=EVENT, kind=SubjectKind.EVENT)


@dataclass(frozen=True)
class ActivityInstance:
    device: EntityId
    activity: EntityId
    initiator: EntityId
    start_time: Timestamp
    status: ActivityStatus = ActivityStatus.ACTIVE
    end_time: Optional[Timestamp] = None
    stopped_by: Optional[EntityId] = None
    granted_by: Optional[int] = None

    @property
    def key(self) -> tuple[EntityId, EntityId]:
        return (self.device, self.activity)

    @property
    def attribution(self) -> EntityId:
        """Subject responsible for the state this instance left the device in."""
        return self.stopped_by if self.stopped_by is not None else self.initiator


@dataclass(frozen=True)
class CounterKey:
    scope: CounterScope
    activity: EntityId
    subject_or_object: Optional[EntityId] = None

    def __post_init__(self) -> None:
        needs_target = self.scope is not CounterScope.SYSTEM_WIDE
        if needs_target != (self.subject_or_object is not None):
            raise ValueError(f"CounterKey {self.scope.value} for {self.activity}: target mismatch")


@dataclass(frozen=True)
class EcosystemState:
    clock: Timestamp = 0
    devices: Mapping[EntityId, DeviceObject] = field(default_factory=dict)
    subjects: Mapping[EntityId, Subject] = field(default_factory=dict)
    live: tuple[ActivityInstance, ...] = ()
    history: tuple[ActivityInstance, ...] = ()
    environment: Mapping[str, AttributeValue] = field(default_factory=dict)
    counters: Mapping[CounterKey, tuple[Timestamp, ...]] = field(default_factory=dict)

    def live_instance(self, device: EntityId, activity: EntityId) -> Optional[ActivityInstance]:
        for inst in self.live:
            if inst.device == device and inst.activity == activity:
                return inst
        return None

    def active(self) -> tuple[ActivityInstance, ...]:
        return tuple(i for i in self.live if i.status is ActivityStatus.ACTIVE)

    def subject(self, subject_id: EntityId) -> Optional[Subject]:
        if subject_id == EVENT:
            return EVENT_SUBJECT
        return self.subjects.get(subject_id)


# --- decision engine DTOs ---

class Outcome(str, Enum):
    PERMIT = "PERMIT"
    DENY = "DENY"


class DenyReason(str, Enum):
    NO_MATCHING_RULE = "no-matching-rule"
    PRE_FAILED = "pre-failed"
    CUR_FAILED = "cur-failed"
    CONTEXT_FAILED = "context-failed"
    LIMIT_EXCEEDED = "limit-exceeded"
    ALREADY_ACTIVE = "already-active"
    RELATION_INCOMPATIBLE = "relation-incompatible"
    RELATION_ORDERED = "relation-ordered"
    RELATION_DEPENDENCE = "relation-dependence"
    RELATION_PRECEDENCE = "relation-precedence"
    RELATION_CONDITIONAL = "relation-conditional"
    OBLIGATION_FAILED = "obligation-failed"


@dataclass(frozen=True)
class Request:
    subject: EntityId
    op: EntityId
    object: EntityId
    activity: EntityId
    time: Timestamp = 0


@dataclass(frozen=True)
class Preemption:
    device: EntityId
    activity: EntityId
    effect: ActivityStatus  # HALTED or ABORTED


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    reason: Optional[DenyReason] = None
    matched_rule: Optional[int] = None
    executed_obligations: tuple["ObligationAction", ...] = ()
    preempted: tuple[Preemption, ...] = ()
    revoked: tuple[tuple[EntityId, EntityId], ...] = ()
    resumed: tuple[tuple[EntityId, EntityId], ...] = ()

    @property
    def permitted(self) -> bool:
        return self.outcome is Outcome.PERMIT

    @staticmethod
    def deny(reason: DenyReason, *, matched_rule: Optional[int] = None) -> "Decision":
        return Decision(outcome=Outcome.DENY, reason=reason, matched_rule=matched_rule)
