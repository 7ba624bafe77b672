"""
Inter-activity relation checks.

Every function here is a pure read over an EcosystemState. The engine uses
them to vet a start (as if the activity were already running), to work out
the side effects of a start or completion, and to sweep live instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from app.core.evaluation import EvalContext, EvaluationError, evaluate, holds
from app.core.models import (
    ActivityInstance,
    ActivityStatus,
    DenyReason,
    EcosystemState,
    EntityId,
)
from app.core.policy import (
    DependenceMode,
    DeviceScope,
    ObligationAction,
    PolicySet,
    RelationDecl,
    RelationKind,
)

_EXCLUSIVE = (RelationKind.INCOMPATIBLE, RelationKind.TEMPORARY)


@dataclass(frozen=True)
class Violation:
    relation: RelationDecl
    instances: tuple[ActivityInstance, ...]


def scope_related(scope: DeviceScope, state: EcosystemState, first: EntityId, second: EntityId) -> bool:
    if scope is DeviceScope.ANY:
        return True
    if scope is DeviceScope.SAME:
        return first == second
    if scope is DeviceScope.DIFFERENT:
        return first != second
    a, b = state.devices.get(first), state.devices.get(second)
    return a is not None and b is not None and a.location is not None and a.location == b.location


def in_force(relation: RelationDecl, ctx: EvalContext) -> bool:
    """Whether the relation constrains this context; a temporary guard is an exemption."""
    if relation.guard is None:
        return True
    try:
        value = evaluate(relation.guard, ctx)
    except EvaluationError:
        return True
    return not value if relation.kind is RelationKind.TEMPORARY else value


def _partner(relation: RelationDecl, activity: EntityId) -> Optional[EntityId]:
    if activity == relation.a:
        return relation.b
    if activity == relation.b:
        return relation.a
    return None


def _active_near(
    state: EcosystemState,
    scope: DeviceScope,
    device: EntityId,
    activity: EntityId,
    *,
    exclude: Optional[tuple[EntityId, EntityId]] = None,
) -> list[ActivityInstance]:
    return [
        i
        for i in state.live
        if i.status is ActivityStatus.ACTIVE
        and i.activity == activity
        and i.key != exclude
        and scope_related(scope, state, device, i.device)
    ]


def _finished_near(
    state: EcosystemState,
    scope: DeviceScope,
    device: EntityId,
    activity: EntityId,
    window: Optional[int],
) -> bool:
    horizon = None if window is None else state.clock - window
    return any(
        f.activity == activity
        and (horizon is None or (f.end_time or 0) >= horizon)
        and scope_related(scope, state, device, f.device)
        for f in state.history
    )


def find_incompatibility(state: EcosystemState, relations: Iterable[RelationDecl], ctx: EvalContext) -> Optional[RelationDecl]:
    """First exclusive relation that starting ctx.activity on ctx.object would break."""
    key = (ctx.object, ctx.activity)
    for rel in relations:
        if rel.kind not in _EXCLUSIVE:
            continue
        partner = _partner(rel, ctx.activity)
        if partner is None or not in_force(rel, ctx):
            continue
        if _active_near(state, rel.scope, ctx.object, partner, exclude=key):
            return rel
        if rel.window is not None and _finished_near(state, rel.scope, ctx.object, partner, rel.window):
            return rel
    return None


def check_start(state: EcosystemState, policy: PolicySet, ctx: EvalContext) -> Optional[DenyReason]:
    """Relation verdict for a start, in a fixed order of relation kinds."""
    if find_incompatibility(state, policy.relations, ctx) is not None:
        return DenyReason.RELATION_INCOMPATIBLE

    key = (ctx.object, ctx.activity)
    for rel in policy.relations:
        if rel.kind is not RelationKind.ORDERED or rel.first == ctx.activity:
            continue
        if rel.other(rel.first) != ctx.activity or not in_force(rel, ctx):
            continue
        started = _active_near(state, rel.scope, ctx.object, rel.first, exclude=key)
        if not started and not _finished_near(state, rel.scope, ctx.object, rel.first, rel.window):
            return DenyReason.RELATION_ORDERED

    for rel in policy.relations:
        if rel.kind is not RelationKind.DEPENDENCE or rel.dependence is not DependenceMode.REQUIRES:
            continue
        if rel.other(rel.trigger) != ctx.activity or rel.trigger == ctx.activity or not in_force(rel, ctx):
            continue
        if not _active_near(state, rel.scope, ctx.object, rel.trigger, exclude=key):
            return DenyReason.RELATION_DEPENDENCE

    for rel in policy.relations:
        if rel.kind is not RelationKind.PRECEDENCE or rel.winner == ctx.activity:
            continue
        if rel.other(rel.winner) != ctx.activity or not in_force(rel, ctx):
            continue
        if _active_near(state, rel.scope, ctx.object, rel.winner, exclude=key):
            return DenyReason.RELATION_PRECEDENCE

    for rel in policy.relations:
        if rel.kind is not RelationKind.CONDITIONAL or rel.guard is None:
            continue
        if _co_occurs(state, rel, ctx) and not holds(rel.guard, ctx):
            return DenyReason.RELATION_CONDITIONAL
    return None


def _co_occurs(state: EcosystemState, relation: RelationDecl, ctx: EvalContext) -> bool:
    partner = _partner(relation, ctx.activity)
    if partner is None:
        return False
    if _active_near(state, relation.scope, ctx.object, partner, exclude=(ctx.object, ctx.activity)):
        return True
    return relation.window is not None and _finished_near(state, relation.scope, ctx.object, partner, relation.window)


def conditional_obligations(state: EcosystemState, policy: PolicySet, ctx: EvalContext) -> tuple[ObligationAction, ...]:
    actions: list[ObligationAction] = []
    for rel in policy.relations:
        if rel.kind is RelationKind.CONDITIONAL and rel.detail.then and _co_occurs(state, rel, ctx):
            if rel.guard is None or holds(rel.guard, ctx):
                actions.extend(rel.detail.then)
    return tuple(actions)


def precedence_losers(
    state: EcosystemState, policy: PolicySet, ctx: EvalContext
) -> list[tuple[RelationDecl, ActivityInstance]]:
    """Running instances the newly started ctx.activity takes precedence over."""
    losers = []
    for rel in policy.relations:
        if rel.kind is not RelationKind.PRECEDENCE or rel.winner != ctx.activity or not in_force(rel, ctx):
            continue
        loser = rel.other(rel.winner)
        for inst in _active_near(state, rel.scope, ctx.object, loser, exclude=(ctx.object, ctx.activity)):
            losers.append((rel, inst))
    return losers


def _companion_devices(state: EcosystemState, relation: RelationDecl, ctx: EvalContext) -> list[EntityId]:
    if relation.detail.on is None:
        return [ctx.object]
    target = ctx.bind(relation.detail.on)
    return [d for d in sorted(state.devices) if target.matches_device(d, state.devices)]


def triggered_starts(
    state: EcosystemState, policy: PolicySet, ctx: EvalContext, *, completed: bool = False
) -> list[tuple[EntityId, EntityId]]:
    """
    (device, activity) pairs to start because ctx.activity just started on
    ctx.object, or just completed there when `completed` is set.
    """
    wanted: list[tuple[EntityId, EntityId]] = []
    for rel in policy.relations:
        if completed:
            fires = (
                rel.kind is RelationKind.DEPENDENCE
                and rel.dependence is DependenceMode.AFTER
                and rel.trigger == ctx.activity
            )
            companion = rel.other(rel.trigger)
        elif rel.must_co_occur:
            fires = rel.a == ctx.activity
            companion = rel.b
        else:
            fires = (
                rel.kind is RelationKind.DEPENDENCE
                and rel.dependence is DependenceMode.PARALLEL
                and rel.trigger == ctx.activity
            )
            companion = rel.other(rel.trigger)
        if not fires or not in_force(rel, ctx):
            continue
        for device in _companion_devices(state, rel, ctx):
            pair = (device, companion)
            if state.live_instance(device, companion) is None and pair not in wanted:
                wanted.append(pair)
    return wanted


def _context_of(state: EcosystemState, inst: ActivityInstance) -> EvalContext:
    return EvalContext(state=state, subject=inst.initiator, object=inst.device, activity=inst.activity)


def co_occurrence_violations(state: EcosystemState, relations: Iterable[RelationDecl]) -> list[Violation]:
    """
    Pairs of active instances that an exclusive or conditional relation
    forbids. The guard is judged from the later-started instance's side.
    """
    relations = [r for r in relations if r.kind in _EXCLUSIVE or r.kind is RelationKind.CONDITIONAL]
    active = state.active()
    found: list[Violation] = []
    for j, later in enumerate(active):
        for earlier in active[:j]:
            for rel in relations:
                if _partner(rel, later.activity) != earlier.activity:
                    continue
                if not scope_related(rel.scope, state, later.device, earlier.device):
                    continue
                ctx = _context_of(state, later)
                if rel.kind is RelationKind.CONDITIONAL:
                    broken = rel.guard is not None and not holds(rel.guard, ctx)
                else:
                    broken = in_force(rel, ctx)
                if broken:
                    found.append(Violation(relation=rel, instances=(earlier, later)))
    return found


def unpaired_members(state: EcosystemState, relations: Iterable[RelationDecl]) -> list[Violation]:
    """Active members of must-co-occur pairs, on either side, whose partner is not running."""
    found = []
    for rel in relations:
        if not rel.must_co_occur:
            continue
        for inst in state.active():
            partner = _partner(rel, inst.activity)
            if partner is None:
                continue
            if not _active_near(state, rel.scope, inst.device, partner, exclude=inst.key):
                found.append(Violation(relation=rel, instances=(inst,)))
    return found


def resumable(state: EcosystemState, policy: PolicySet) -> list[ActivityInstance]:
    """Halted precedence losers whose winners have all stopped."""
    ready = []
    for inst in state.live:
        if inst.status is not ActivityStatus.HALTED:
            continue
        ctx = _context_of(state, inst)
        governing = [
            r for r in policy.relations
            if r.kind is RelationKind.PRECEDENCE and r.other(r.winner) == inst.activity and r.winner != inst.activity
        ]
        if not any(r.resume for r in governing):
            continue
        if any(_active_near(state, r.scope, inst.device, r.winner) and in_force(r, ctx) for r in governing):
            continue
        if find_incompatibility(state, policy.relations, ctx) is not None:
            continue
        ready.append(inst)
    return ready
