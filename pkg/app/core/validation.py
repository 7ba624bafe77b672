"""Static checks over a parsed PolicySet; problems are returned, never raised."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from app.core.models import DAY_SECONDS, EVENT, INACTIVE, AttributeValue, Phase, SubjectKind, value_kind
from app.core.policy import (
    ActivityRule,
    Compare,
    Comparator,
    DependenceMode,
    DeviceScope,
    Expr,
    LocationIs,
    ObligationAction,
    ObligationKind,
    Pattern,
    PatternKind,
    PolicySet,
    RelationDecl,
    RelationHolds,
    RelationKind,
    SourceIs,
    StateCondition,
    TimeIn,
    UsageLimit,
    ValueScope,
    iter_atoms,
)


class ValidationCode(str, Enum):
    DANGLING_REFERENCE = "dangling-reference"
    CONFLICTING_RELATIONS = "conflicting-relations"
    ZERO_WINDOW = "zero-window"
    INVALID_LIMIT = "invalid-limit"
    TYPE_ERROR = "type-error"
    MISPLACED_WINDOW = "misplaced-window"
    MISPLACED_REFERENCE = "misplaced-reference"
    INVALID_INACTIVE_RULE = "invalid-inactive-rule"
    INVALID_RELATION = "invalid-relation"


@dataclass(frozen=True, order=True)
class ValidationError:
    code: ValidationCode
    message: str

    def __str__(self) -> str:
        return f"{self.code.value}: {self.message}"


class _Checker:
    def __init__(self, policy: PolicySet) -> None:
        self.policy = policy
        self.errors: list[ValidationError] = []

    def report(self, code: ValidationCode, message: str) -> None:
        self.errors.append(ValidationError(code, message))

    # --- references ---

    def device_pattern(self, pattern: Pattern, where: str) -> None:
        if pattern.kind is PatternKind.ID and pattern.name not in self.policy.devices:
            self.report(ValidationCode.DANGLING_REFERENCE, f"{where}: undeclared device '{pattern.name}'")

    def source_pattern(self, pattern: Pattern, where: str) -> None:
        if pattern.kind is not PatternKind.ID or pattern.name == EVENT:
            return
        if pattern.name not in self.policy.subjects:
            self.report(ValidationCode.DANGLING_REFERENCE, f"{where}: undeclared subject '{pattern.name}'")

    def head_pattern(self, pattern: Pattern, where: str) -> None:
        if pattern.is_reference:
            self.report(ValidationCode.MISPLACED_REFERENCE, f"{where}: {pattern} cannot appear in a rule head")

    def window(self, window: Optional[int], where: str) -> None:
        if window is not None and window <= 0:
            self.report(ValidationCode.ZERO_WINDOW, f"{where}: window must be positive")

    # --- expressions ---

    def expression(self, expr: Optional[Expr], where: str, *, phase: Phase, target: Optional[Pattern] = None) -> None:
        for atom in iter_atoms(expr):
            if isinstance(atom, StateCondition):
                self.device_pattern(atom.object, where)
                self.source_pattern(atom.source, where)
                if atom.window is not None:
                    if phase is not Phase.PRE or atom.phase is not Phase.PRE:
                        self.report(ValidationCode.MISPLACED_WINDOW, f"{where}: 'within' only applies to past conditions")
                    self.window(atom.window, where)
            elif isinstance(atom, Compare):
                self.comparison(atom, where, target)
            elif isinstance(atom, LocationIs):
                self.device_pattern(atom.target, where)
            elif isinstance(atom, RelationHolds):
                self.source_pattern(atom.subject, where)
            elif isinstance(atom, TimeIn):
                for bound in (atom.start, atom.end):
                    if not 0 <= bound <= DAY_SECONDS:
                        self.report(ValidationCode.TYPE_ERROR, f"{where}: time of day {bound} is outside one day")
            elif isinstance(atom, SourceIs):
                self.source_pattern(atom.pattern, where)

    def comparison(self, atom: Compare, where: str, target: Optional[Pattern]) -> None:
        if value_kind(atom.literal) == "boolean" and atom.op not in (Comparator.EQ, Comparator.NE):
            self.report(ValidationCode.TYPE_ERROR, f"{where}: '{atom.op.value}' is undefined for booleans")
        declared: Optional[AttributeValue] = None
        if atom.scope is ValueScope.ENV:
            declared = self.policy.environment.get(atom.name)
        elif atom.scope is ValueScope.OBJECT and target is not None and target.kind is PatternKind.ID:
            device = self.policy.devices.get(target.name or "")
            declared = device.attributes.get(atom.name) if device is not None else None
        if declared is not None and value_kind(declared) != value_kind(atom.literal):
            self.report(
                ValidationCode.TYPE_ERROR,
                f"{where}: {atom.scope.value}({atom.name}) is {value_kind(declared)}, compared with {value_kind(atom.literal)}",
            )

    def obligations(self, actions: Iterable[ObligationAction], where: str) -> None:
        for action in actions:
            self.device_pattern(action.object, where)

    def limit(self, limit: UsageLimit, where: str) -> None:
        if limit.max_count < 1:
            self.report(ValidationCode.INVALID_LIMIT, f"{where}: limit on {limit.activity} must allow at least one activation")
        if limit.window <= 0:
            self.report(ValidationCode.INVALID_LIMIT, f"{where}: limit on {limit.activity} needs a positive window")

    # --- declarations ---

    def declarations(self) -> None:
        for device in self.policy.devices.values():
            if device.owner is not None and device.owner not in self.policy.subjects:
                self.report(ValidationCode.DANGLING_REFERENCE, f"device {device.id}: undeclared owner '{device.owner}'")
        for subject in self.policy.subjects.values():
            if subject.id == EVENT or subject.kind is SubjectKind.EVENT:
                self.report(ValidationCode.DANGLING_REFERENCE, f"subject {subject.id}: EVENT is reserved")
            if subject.kind is SubjectKind.DEVICE and subject.id not in self.policy.devices:
                self.report(ValidationCode.DANGLING_REFERENCE, f"subject {subject.id}: device subject without a device")

    def rule(self, rule: ActivityRule) -> None:
        where = f"rule {rule.head()}"
        self.head_pattern(rule.object, where)
        self.head_pattern(rule.source, where)
        self.device_pattern(rule.object, where)
        self.source_pattern(rule.source, where)
        self.expression(rule.pre_conditions, where, phase=Phase.PRE, target=rule.object)
        self.expression(rule.current_conditions, where, phase=Phase.CURRENT, target=rule.object)
        self.expression(rule.contextual, where, phase=Phase.CURRENT, target=rule.object)
        self.obligations(rule.obligations, where)
        for limit in rule.limits:
            self.limit(limit, where)
        if rule.activity == INACTIVE and not any(
            o.kind in (ObligationKind.STOP, ObligationKind.COMPLETE) for o in rule.obligations
        ):
            self.report(ValidationCode.INVALID_INACTIVE_RULE, f"{where}: needs a stop or complete obligation")

    def relation(self, rel: RelationDecl) -> None:
        where = f"relation {rel.describe()}"
        if rel.a == rel.b and not (rel.kind is RelationKind.INCOMPATIBLE and rel.scope is DeviceScope.DIFFERENT):
            self.report(ValidationCode.INVALID_RELATION, f"{where}: an activity cannot relate to itself")
        self.window(rel.window, where)
        self.expression(rel.guard, where, phase=Phase.CURRENT)
        for name, value in (("first", rel.detail.first), ("winner", rel.detail.winner), ("trigger", rel.detail.trigger)):
            if value is not None and value not in (rel.a, rel.b):
                self.report(ValidationCode.INVALID_RELATION, f"{where}: {name}={value} is not part of the pair")
        if rel.detail.on is not None:
            self.device_pattern(rel.detail.on, where)
        companion = rel.must_co_occur or (
            rel.kind is RelationKind.DEPENDENCE and rel.dependence is not DependenceMode.REQUIRES
        )
        if companion and rel.scope is DeviceScope.DIFFERENT and rel.detail.on is None:
            self.report(ValidationCode.INVALID_RELATION, f"{where}: scope=different needs on=<devices>")
        self.obligations(rel.detail.then, where)

    def conflicts(self) -> None:
        exclusive: dict[tuple[frozenset[str], DeviceScope], RelationDecl] = {}
        together: dict[tuple[frozenset[str], DeviceScope], RelationDecl] = {}
        for rel in self.policy.relations:
            key = (frozenset((rel.a, rel.b)), rel.scope)
            if rel.kind in (RelationKind.INCOMPATIBLE, RelationKind.TEMPORARY):
                exclusive.setdefault(key, rel)
            elif rel.must_co_occur or (
                rel.kind is RelationKind.DEPENDENCE
                and rel.dependence in (DependenceMode.REQUIRES, DependenceMode.PARALLEL)
            ):
                together.setdefault(key, rel)
        for key in sorted(exclusive.keys() & together.keys(), key=lambda k: (sorted(k[0]), k[1].value)):
            self.report(
                ValidationCode.CONFLICTING_RELATIONS,
                f"{exclusive[key].describe()} contradicts {together[key].describe()}",
            )

    def run(self) -> list[ValidationError]:
        self.declarations()
        for rule in self.policy.rules:
            self.rule(rule)
        for rel in self.policy.relations:
            self.relation(rel)
        for limit in self.policy.limits:
            self.limit(limit, "policy")
        self.conflicts()
        return sorted(set(self.errors))


def validate(policy: PolicySet) -> list[ValidationError]:
    """All problems found in a policy set, sorted; an empty list means valid."""
    return _Checker(policy).run()
