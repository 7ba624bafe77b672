"""
Policy AST: patterns, condition expressions, rules, relations and limits.

Everything here is an immutable value; a PolicySet is safe to share once it
has been validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union

from app.core.models import (
    ANY,
    AttributeValue,
    CounterScope,
    DeviceObject,
    EntityId,
    EVENT,
    EVENT_SUBJECT,
    Phase,
    Subject,
    SubjectKind,
)


class PatternKind(str, Enum):
    ID = "id"
    TYPE = "type"
    GROUP = "group"
    ANY = "any"
    SOURCE = "$source"
    OBJECT = "$object"


@dataclass(frozen=True)
class Pattern:
    kind: PatternKind
    name: Optional[EntityId] = None

    @staticmethod
    def exact(name: EntityId) -> "Pattern":
        return Pattern(PatternKind.ID, name)

    @staticmethod
    def of_type(name: EntityId) -> "Pattern":
        return Pattern(PatternKind.TYPE, name)

    @staticmethod
    def of_group(name: EntityId) -> "Pattern":
        return Pattern(PatternKind.GROUP, name)

    @property
    def is_reference(self) -> bool:
        return self.kind in (PatternKind.SOURCE, PatternKind.OBJECT)

    def bind(self, *, source: EntityId, object: EntityId) -> "Pattern":
        """Resolve $source/$object against a request."""
        if self.kind is PatternKind.SOURCE:
            return Pattern.exact(source)
        if self.kind is PatternKind.OBJECT:
            return Pattern.exact(object)
        return self

    def matches_device(self, device_id: EntityId, devices: Mapping[EntityId, DeviceObject]) -> bool:
        if self.kind is PatternKind.ANY:
            return True
        if self.kind is PatternKind.ID:
            return self.name == device_id
        device = devices.get(device_id)
        if device is None:
            return False
        if self.kind is PatternKind.TYPE:
            return device.object_type == self.name
        if self.kind is PatternKind.GROUP:
            return self.name in device.groups
        return False

    def matches_subject(
        self,
        subject_id: EntityId,
        subjects: Mapping[EntityId, Subject],
        devices: Mapping[EntityId, DeviceObject],
    ) -> bool:
        if self.kind is PatternKind.ANY:
            return True
        if self.kind is PatternKind.ID:
            return self.name == subject_id
        subject = EVENT_SUBJECT if subject_id == EVENT else subjects.get(subject_id)
        device = devices.get(subject_id)
        if subject is None:
            return False
        if self.kind is PatternKind.TYPE:
            if subject.kind.value == self.name:
                return True
            return subject.kind is SubjectKind.DEVICE and device is not None and device.object_type == self.name
        if self.kind is PatternKind.GROUP:
            if self.name in subject.groups:
                return True
            return device is not None and self.name in device.groups
        return False

    def __str__(self) -> str:
        if self.kind is PatternKind.ID:
            return str(self.name)
        if self.kind is PatternKind.TYPE:
            return f"type:{self.name}"
        if self.kind is PatternKind.GROUP:
            return f"group:{self.name}"
        if self.kind is PatternKind.ANY:
            return ANY
        return self.kind.value


ANY_PATTERN = Pattern(PatternKind.ANY)
SOURCE_REF = Pattern(PatternKind.SOURCE)
OBJECT_REF = Pattern(PatternKind.OBJECT)


# --- condition / context expressions ---

class Comparator(str, Enum):
    LT = "<"
    GT = ">"
    LE = "<="
    GE = ">="
    EQ = "="
    NE = "!="


class ValueScope(str, Enum):
    ENV = "value"
    SOURCE = "source"
    OBJECT = "object"


@dataclass(frozen=True)
class StateCondition:
    phase: Phase
    activity: EntityId
    object: Pattern
    source: Pattern
    negated: bool = False
    window: Optional[int] = None


@dataclass(frozen=True)
class Compare:
    scope: ValueScope
    name: str
    op: Comparator
    literal: AttributeValue


@dataclass(frozen=True)
class LocationIs:
    target: Pattern
    location: EntityId
    negated: bool = False


@dataclass(frozen=True)
class RelationHolds:
    relation: str
    subject: Pattern
    target: Pattern


@dataclass(frozen=True)
class TimeIn:
    """Seconds-of-day range [start, end); wraps past midnight when start > end."""
    start: int
    end: int


@dataclass(frozen=True)
class SourceIs:
    pattern: Pattern


@dataclass(frozen=True)
class AllOf:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class AnyOf:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Not:
    item: "Expr"


Atom = Union[StateCondition, Compare, LocationIs, RelationHolds, TimeIn, SourceIs]
Expr = Union[Atom, AllOf, AnyOf, Not]


def iter_atoms(expr: Optional[Expr]):
    """Yield every atom of an expression tree, left to right."""
    if expr is None:
        return
    if isinstance(expr, (AllOf, AnyOf)):
        for item in expr.items:
            yield from iter_atoms(item)
    elif isinstance(expr, Not):
        yield from iter_atoms(expr.item)
    else:
        yield expr


# --- rules ---

class ObligationKind(str, Enum):
    START = "start"
    STOP = "stop"
    COMPLETE = "complete"
    HALT = "halt"
    RESUME = "resume"


@dataclass(frozen=True)
class ObligationAction:
    kind: ObligationKind
    activity: EntityId
    object: Pattern

    def __str__(self) -> str:
        return f"{self.kind.value} {self.activity}({self.object})"


@dataclass(frozen=True)
class UsageLimit:
    scope: CounterScope
    activity: EntityId
    max_count: int
    window: int
    fixed: bool = False


@dataclass(frozen=True)
class ActivityRule:
    object: Pattern
    op: EntityId
    source: Pattern
    activity: EntityId
    pre_conditions: Optional[Expr] = None
    current_conditions: Optional[Expr] = None
    obligations: tuple[ObligationAction, ...] = ()
    contextual: Optional[Expr] = None
    limits: tuple[UsageLimit, ...] = ()
    continuous_current: bool = False
    continuous_contextual: bool = False

    @property
    def is_continuous(self) -> bool:
        return self.continuous_current or self.continuous_contextual

    def head(self) -> str:
        return f"on {self.object}: allow {self.op} by {self.source} as {self.activity}"


# --- relations ---

class RelationKind(str, Enum):
    ORDERED = "ordered"
    CONCURRENT = "concurrent"
    TEMPORARY = "temporary"
    PRECEDENCE = "precedence"
    DEPENDENCE = "dependence"
    CONDITIONAL = "conditional"
    INCOMPATIBLE = "incompatible"


class DeviceScope(str, Enum):
    SAME = "same"
    DIFFERENT = "different"
    SAME_LOCATION = "same-location"
    ANY = "any"


class ConcurrencyMode(str, Enum):
    MUST = "must"
    MAY = "may"


class DependenceMode(str, Enum):
    REQUIRES = "requires"
    PARALLEL = "parallel"
    AFTER = "after"


class PreemptEffect(str, Enum):
    HALT = "halt"
    ABORT = "abort"


@dataclass(frozen=True)
class RelationDetail:
    """Kind-specific payload; unset fields fall back to the kind's defaults."""
    first: Optional[EntityId] = None
    mode: Optional[Union[ConcurrencyMode, DependenceMode]] = None
    winner: Optional[EntityId] = None
    effect: Optional[PreemptEffect] = None
    resume: Optional[bool] = None
    trigger: Optional[EntityId] = None
    on: Optional[Pattern] = None
    then: tuple[ObligationAction, ...] = ()


@dataclass(frozen=True)
class RelationDecl:
    kind: RelationKind
    a: EntityId
    b: EntityId
    scope: DeviceScope = DeviceScope.ANY
    window: Optional[int] = None
    guard: Optional[Expr] = None
    detail: RelationDetail = field(default_factory=RelationDetail)

    def other(self, activity: EntityId) -> EntityId:
        return self.b if activity == self.a else self.a

    @property
    def first(self) -> EntityId:
        """Activity that must come first in an ordered pair."""
        return self.detail.first or self.a

    @property
    def winner(self) -> EntityId:
        return self.detail.winner or self.a

    @property
    def effect(self) -> PreemptEffect:
        return self.detail.effect or PreemptEffect.HALT

    @property
    def resume(self) -> bool:
        return True if self.detail.resume is None else self.detail.resume

    @property
    def trigger(self) -> EntityId:
        return self.detail.trigger or self.a

    @property
    def concurrency(self) -> ConcurrencyMode:
        mode = self.detail.mode
        return mode if isinstance(mode, ConcurrencyMode) else ConcurrencyMode.MUST

    @property
    def dependence(self) -> DependenceMode:
        mode = self.detail.mode
        return mode if isinstance(mode, DependenceMode) else DependenceMode.REQUIRES

    @property
    def must_co_occur(self) -> bool:
        return self.kind is RelationKind.CONCURRENT and self.concurrency is ConcurrencyMode.MUST

    def describe(self) -> str:
        return f"{self.kind.value} {self.a} {self.b} scope={self.scope.value}"


@dataclass(frozen=True)
class PolicySet:
    rules: tuple[ActivityRule, ...] = ()
    relations: tuple[RelationDecl, ...] = ()
    devices: Mapping[EntityId, DeviceObject] = field(default_factory=dict)
    subjects: Mapping[EntityId, Subject] = field(default_factory=dict)
    environment: Mapping[str, AttributeValue] = field(default_factory=dict)
    limits: tuple[UsageLimit, ...] = ()
