from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from app.core.models import (
    DAY_SECONDS,
    AttributeValue,
    EcosystemState,
    EntityId,
    Request,
    value_kind,
)
from app.core.policy import (
    ActivityRule,
    AllOf,
    AnyOf,
    Compare,
    Comparator,
    Expr,
    LocationIs,
    Not,
    Pattern,
    PolicySet,
    RelationHolds,
    SourceIs,
    StateCondition,
    TimeIn,
    ValueScope,
)
from app.core.state import query_state

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    """An atom that cannot be decided (missing attribute, cross-kind comparison)."""


@dataclass(frozen=True)
class EvalContext:
    """The state plus the (subject, object, activity) an expression is asked about."""
    state: EcosystemState
    subject: EntityId
    object: EntityId
    activity: EntityId

    @staticmethod
    def for_request(state: EcosystemState, request: Request) -> "EvalContext":
        return EvalContext(state=state, subject=request.subject, object=request.object, activity=request.activity)

    def bind(self, pattern: Pattern) -> Pattern:
        return pattern.bind(source=self.subject, object=self.object)


def rule_matches(rule: ActivityRule, request: Request, state: EcosystemState) -> bool:
    if rule.op != request.op or rule.activity != request.activity:
        return False
    if request.object not in state.devices:
        return False
    if not rule.object.matches_device(request.object, state.devices):
        return False
    return rule.source.matches_subject(request.subject, state.subjects, state.devices)


def select_rule(policy: PolicySet, request: Request, state: EcosystemState) -> tuple[Optional[int], Optional[ActivityRule]]:
    """First rule whose head matches (first-match-wins)."""
    for index, rule in enumerate(policy.rules):
        if rule_matches(rule, request, state):
            return index, rule
    return None, None


def _lookup(ctx: EvalContext, scope: ValueScope, name: str) -> AttributeValue:
    state = ctx.state
    if scope is ValueScope.ENV:
        values = state.environment
    elif scope is ValueScope.SOURCE:
        subject = state.subject(ctx.subject)
        values = dict(subject.attributes) if subject is not None else {}
        device = state.devices.get(ctx.subject)
        if device is not None:
            values = {**device.attributes, **values}
    else:
        device = state.devices.get(ctx.object)
        values = device.attributes if device is not None else {}
    if name not in values:
        raise EvaluationError(f"{scope.value}({name}) is not defined")
    return values[name]


def compare_values(left: AttributeValue, op: Comparator, right: AttributeValue) -> bool:
    left_kind, right_kind = value_kind(left), value_kind(right)
    if left_kind != right_kind:
        raise EvaluationError(f"cannot compare {left_kind} {left!r} with {right_kind} {right!r}")
    if op is Comparator.EQ:
        return left == right
    if op is Comparator.NE:
        return left != right
    if left_kind == "boolean":
        raise EvaluationError(f"ordering comparison {op.value} is undefined for booleans")
    if op is Comparator.LT:
        return left < right  # type: ignore[operator]
    if op is Comparator.GT:
        return left > right  # type: ignore[operator]
    if op is Comparator.LE:
        return left <= right  # type: ignore[operator]
    return left >= right  # type: ignore[operator]


def _time_in(clock: int, atom: TimeIn) -> bool:
    tod = clock % DAY_SECONDS
    if atom.start <= atom.end:
        return atom.start <= tod < atom.end
    return tod >= atom.start or tod < atom.end


def _relation_holds(ctx: EvalContext, atom: RelationHolds) -> bool:
    state = ctx.state
    subject_pattern = ctx.bind(atom.subject)
    target_pattern = ctx.bind(atom.target)
    for subject_id in sorted(state.subjects):
        if not subject_pattern.matches_subject(subject_id, state.subjects, state.devices):
            continue
        for name, target in state.subjects[subject_id].relations:
            if name != atom.relation:
                continue
            if target in state.devices:
                if target_pattern.matches_device(target, state.devices):
                    return True
            elif target_pattern.matches_subject(target, state.subjects, state.devices):
                return True
    return False


def evaluate(expr: Optional[Expr], ctx: EvalContext) -> bool:
    """Decide an expression; None is the empty condition and always holds."""
    if expr is None:
        return True
    if isinstance(expr, AllOf):
        return all(evaluate(item, ctx) for item in expr.items)
    if isinstance(expr, AnyOf):
        return any(evaluate(item, ctx) for item in expr.items)
    if isinstance(expr, Not):
        return not evaluate(expr.item, ctx)
    if isinstance(expr, StateCondition):
        found = query_state(
            ctx.state,
            expr.phase,
            expr.activity,
            ctx.bind(expr.object),
            ctx.bind(expr.source),
            expr.window,
        )
        return bool(found) != expr.negated
    if isinstance(expr, Compare):
        return compare_values(_lookup(ctx, expr.scope, expr.name), expr.op, expr.literal)
    if isinstance(expr, LocationIs):
        target = ctx.bind(expr.target)
        state = ctx.state
        located = any(
            d.location == expr.location
            for d_id, d in state.devices.items()
            if target.matches_device(d_id, state.devices)
        )
        return located != expr.negated
    if isinstance(expr, RelationHolds):
        return _relation_holds(ctx, expr)
    if isinstance(expr, TimeIn):
        return _time_in(ctx.state.clock, expr)
    if isinstance(expr, SourceIs):
        state = ctx.state
        return ctx.bind(expr.pattern).matches_subject(ctx.subject, state.subjects, state.devices)
    raise EvaluationError(f"unknown expression node {type(expr).__name__}")


def holds(expr: Optional[Expr], ctx: EvalContext) -> bool:
    """evaluate() with evaluation errors read as 'does not hold'."""
    try:
        return evaluate(expr, ctx)
    except EvaluationError as ex:
        logger.debug("Expression not decidable, treated as false: %s", ex)
        return False
