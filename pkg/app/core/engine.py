"""
Reference monitor: decide a request against a policy set and commit its effects.

The pipeline is fixed (rule -> pre -> cur -> context -> limits -> relations ->
commit -> continuity sweep) so deny reasons are deterministic. A commit works
on a private copy of the state; any failing step discards the copy, which
leaves the caller's state untouched apart from the clock.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Optional

from app.core.evaluation import EvalContext, holds, select_rule
from app.core.models import (
    EVENT,
    INACTIVE,
    TRIGGER_OP,
    ActivityInstance,
    ActivityStatus,
    CounterKey,
    CounterScope,
    Decision,
    DenyReason,
    EcosystemState,
    EntityId,
    Outcome,
    Preemption,
    Request,
)
from app.core.policy import ActivityRule, ObligationAction, ObligationKind, PolicySet, PreemptEffect, UsageLimit
from app.core.relations import (
    check_start,
    co_occurrence_violations,
    conditional_obligations,
    find_incompatibility,
    precedence_losers,
    resumable,
    triggered_starts,
    unpaired_members,
)
from app.core.scenario import DeviceAction, DeviceEvent, EnvEvent, RequestEvent, ScenarioEvent, TickEvent
from app.core.state import (
    StateError,
    activations,
    advance_clock,
    halt_activity,
    resume_activity,
    set_environment,
    start_activity,
    stop_activity,
)

logger = logging.getLogger(__name__)

Key = tuple[EntityId, EntityId]


class EngineError(Exception):
    """Malformed input to the engine (not a policy outcome)."""


class _Rollback(Exception):
    pass


def limit_key(limit: UsageLimit, request: Request) -> CounterKey:
    if limit.scope is CounterScope.PER_SOURCE:
        return CounterKey(limit.scope, limit.activity, request.subject)
    if limit.scope is CounterScope.PER_OBJECT:
        return CounterKey(limit.scope, limit.activity, request.object)
    return CounterKey(limit.scope, limit.activity)


def _limit_exceeded(state: EcosystemState, policy: PolicySet, rule: ActivityRule, request: Request) -> Optional[UsageLimit]:
    limits = list(rule.limits) + [lim for lim in policy.limits if lim.activity == request.activity]
    for limit in limits:
        used = activations(state, limit_key(limit, request), limit.window, fixed=limit.fixed)
        if used >= limit.max_count:
            return limit
    return None


class _Transition:
    """Working copy of the state for one commit."""

    def __init__(self, state: EcosystemState, policy: PolicySet, subject: EntityId) -> None:
        self.state = state
        self.policy = policy
        self.subject = subject
        self.started: list[tuple[EntityId, EntityId, EntityId]] = []
        self.obligations: list[ObligationAction] = []
        self.preempted: list[Preemption] = []

    def start(self, device: EntityId, activity: EntityId, initiator: EntityId, *, granted_by: Optional[int] = None, vet: bool = True) -> None:
        if vet:
            ctx = EvalContext(state=self.state, subject=initiator, object=device, activity=activity)
            rel = find_incompatibility(self.state, self.policy.relations, ctx)
            if rel is not None:
                raise _Rollback(f"starting {activity} on {device} breaks {rel.describe()}")
        try:
            self.state = start_activity(self.state, device, activity, initiator, granted_by=granted_by)
        except StateError as ex:
            raise _Rollback(str(ex)) from ex
        self.started.append((device, activity, initiator))

    def finish(self, device: EntityId, activity: EntityId, mode: ActivityStatus, by: EntityId) -> None:
        try:
            self.state = stop_activity(self.state, device, activity, mode, by=by)
        except StateError as ex:
            raise _Rollback(str(ex)) from ex
        if mode is ActivityStatus.COMPLETED:
            ctx = EvalContext(state=self.state, subject=by, object=device, activity=activity)
            for dep_device, dep_activity in triggered_starts(self.state, self.policy, ctx, completed=True):
                self.start(dep_device, dep_activity, by)

    def execute(self, action: ObligationAction, *, object: EntityId) -> None:
        pattern = action.object.bind(source=self.subject, object=object)
        devices = self.state.devices

        if action.kind is ObligationKind.START:
            targets = [d for d in sorted(devices) if pattern.matches_device(d, devices)]
            if not targets:
                raise _Rollback(f"no device matches {action}")
            for device in targets:
                self.start(device, action.activity, self.subject)
            self.obligations.append(action)
            return

        wanted = {
            ObligationKind.STOP: (ActivityStatus.ACTIVE, ActivityStatus.HALTED),
            ObligationKind.COMPLETE: (ActivityStatus.ACTIVE, ActivityStatus.HALTED),
            ObligationKind.HALT: (ActivityStatus.ACTIVE,),
            ObligationKind.RESUME: (ActivityStatus.HALTED,),
        }[action.kind]
        instances = [
            i for i in self.state.live
            if i.activity == action.activity and i.status in wanted and pattern.matches_device(i.device, devices)
        ]
        if not instances:
            raise _Rollback(f"nothing to {action}")

        for inst in instances:
            if action.kind is ObligationKind.STOP:
                self.finish(inst.device, inst.activity, ActivityStatus.ABORTED, self.subject)
            elif action.kind is ObligationKind.COMPLETE:
                self.finish(inst.device, inst.activity, ActivityStatus.COMPLETED, self.subject)
            elif action.kind is ObligationKind.HALT:
                self.state = halt_activity(self.state, inst.device, inst.activity)
            else:
                ctx = EvalContext(state=self.state, subject=inst.initiator, object=inst.device, activity=inst.activity)
                if find_incompatibility(self.state, self.policy.relations, ctx) is not None:
                    raise _Rollback(f"resuming {inst.activity} on {inst.device} breaks an incompatibility")
                self.state = resume_activity(self.state, inst.device, inst.activity)
        self.obligations.append(action)

    def settle(self) -> None:
        """Precedence effects and dependent starts for everything started so far."""
        index = 0
        while index < len(self.started):
            device, activity, initiator = self.started[index]
            index += 1
            inst = self.state.live_instance(device, activity)
            if inst is None or inst.status is not ActivityStatus.ACTIVE:
                continue
            ctx = EvalContext(state=self.state, subject=initiator, object=device, activity=activity)
            for rel, loser in precedence_losers(self.state, self.policy, ctx):
                if self.state.live_instance(*loser.key) is None:
                    continue
                if rel.effect is PreemptEffect.ABORT:
                    self.state = stop_activity(self.state, loser.device, loser.activity, ActivityStatus.ABORTED, by=initiator)
                    effect = ActivityStatus.ABORTED
                else:
                    self.state = halt_activity(self.state, loser.device, loser.activity)
                    effect = ActivityStatus.HALTED
                self.preempted.append(Preemption(device=loser.device, activity=loser.activity, effect=effect))
                logger.info("Preempted %s on %s (%s) by %s", loser.activity, loser.device, effect.value, activity)
            ctx = EvalContext(state=self.state, subject=initiator, object=device, activity=activity)
            for dep_device, dep_activity in triggered_starts(self.state, self.policy, ctx):
                self.start(dep_device, dep_activity, initiator)


def _lapsed_grant(state: EcosystemState, policy: PolicySet) -> Optional[ActivityInstance]:
    """First active instance whose continuously enforced rule blocks no longer hold."""
    for inst in state.active():
        if inst.granted_by is None or inst.granted_by >= len(policy.rules):
            continue
        rule = policy.rules[inst.granted_by]
        if not rule.is_continuous:
            continue
        without = replace(state, live=tuple(i for i in state.live if i is not inst))
        ctx = EvalContext(state=without, subject=inst.initiator, object=inst.device, activity=inst.activity)
        if rule.continuous_current and not holds(rule.current_conditions, ctx):
            return inst
        if rule.continuous_contextual and not holds(rule.contextual, ctx):
            return inst
    return None


def continuity_sweep(state: EcosystemState, policy: PolicySet) -> tuple[EcosystemState, tuple[Key, ...], tuple[Key, ...]]:
    """
    Re-validate live instances until nothing changes.

    Each round either aborts one live instance or resumes one halted instance,
    and nothing is started, so the loop terminates.
    """
    revoked: list[Key] = []
    resumed: list[Key] = []
    while True:
        victim: Optional[ActivityInstance] = None
        violations = co_occurrence_violations(state, policy.relations)
        if violations:
            victim = violations[0].instances[-1]
        if victim is None:
            victim = _lapsed_grant(state, policy)
        if victim is None:
            unpaired = unpaired_members(state, policy.relations)
            if unpaired:
                victim = unpaired[0].instances[0]
        if victim is not None:
            state = stop_activity(state, victim.device, victim.activity, ActivityStatus.ABORTED, by=EVENT)
            revoked.append(victim.key)
            logger.info("Revoked %s on %s at t=%s", victim.activity, victim.device, state.clock)
            continue

        ready = resumable(state, policy)
        if not ready:
            return state, tuple(revoked), tuple(resumed)
        inst = ready[0]
        state = resume_activity(state, inst.device, inst.activity)
        resumed.append(inst.key)
        logger.info("Resumed %s on %s at t=%s", inst.activity, inst.device, state.clock)


def decide_and_commit(state: EcosystemState, policy: PolicySet, request: Request) -> tuple[EcosystemState, Decision]:
    if request.time < state.clock:
        raise EngineError(f"request at t={request.time} precedes clock t={state.clock}")
    state = advance_clock(state, request.time)

    def deny(reason: DenyReason, index: Optional[int] = None) -> tuple[EcosystemState, Decision]:
        logger.debug("Deny %s: %s", reason.value, request)
        return state, Decision.deny(reason, matched_rule=index)

    index, rule = select_rule(policy, request, state)
    if rule is None or index is None:
        return deny(DenyReason.NO_MATCHING_RULE)

    ctx = EvalContext.for_request(state, request)
    if not holds(rule.pre_conditions, ctx):
        return deny(DenyReason.PRE_FAILED, index)
    if not holds(rule.current_conditions, ctx):
        return deny(DenyReason.CUR_FAILED, index)
    if not holds(rule.contextual, ctx):
        return deny(DenyReason.CONTEXT_FAILED, index)
    if _limit_exceeded(state, policy, rule, request) is not None:
        return deny(DenyReason.LIMIT_EXCEEDED, index)

    starting = request.activity != INACTIVE
    if starting:
        if state.live_instance(request.object, request.activity) is not None:
            return deny(DenyReason.ALREADY_ACTIVE, index)
        reason = check_start(state, policy, ctx)
        if reason is not None:
            return deny(reason, index)

    tx = _Transition(state, policy, request.subject)
    try:
        if starting:
            tx.start(request.object, request.activity, request.subject, granted_by=index, vet=False)
        for action in rule.obligations:
            tx.execute(action, object=request.object)
        if starting:
            for action in conditional_obligations(state, policy, ctx):
                tx.execute(action, object=request.object)
        tx.settle()
    except _Rollback as ex:
        logger.info("Rolled back %s: %s", request, ex)
        return deny(DenyReason.OBLIGATION_FAILED, index)

    committed, revoked, resumed = continuity_sweep(tx.state, policy)
    logger.info("Permit %s %s %s %s at t=%s (rule %s)", request.subject, request.op, request.object, request.activity, request.time, index)
    return committed, Decision(
        outcome=Outcome.PERMIT,
        matched_rule=index,
        executed_obligations=tuple(tx.obligations),
        preempted=tuple(tx.preempted),
        revoked=revoked,
        resumed=resumed,
    )


def _complete_by_event(state: EcosystemState, policy: PolicySet, event: DeviceEvent) -> EcosystemState:
    if state.live_instance(event.object, event.activity) is None:
        logger.warning("Stop event for %s on %s ignored: not live", event.activity, event.object)
        return state
    tx = _Transition(state, policy, EVENT)
    try:
        tx.finish(event.object, event.activity, ActivityStatus.COMPLETED, EVENT)
        tx.settle()
        return tx.state
    except _Rollback as ex:
        logger.warning("Dependent starts after %s on %s dropped: %s", event.activity, event.object, ex)
        return stop_activity(state, event.object, event.activity, ActivityStatus.COMPLETED, by=EVENT)


def apply_event(state: EcosystemState, policy: PolicySet, event: ScenarioEvent) -> tuple[EcosystemState, Optional[Decision]]:
    if event.time < state.clock:
        raise EngineError(f"event at t={event.time} precedes clock t={state.clock}")
    if isinstance(event, RequestEvent):
        return decide_and_commit(state, policy, event.to_request())
    if isinstance(event, DeviceEvent) and event.action is DeviceAction.START:
        request = Request(subject=EVENT, op=TRIGGER_OP, object=event.object, activity=event.activity, time=event.time)
        return decide_and_commit(state, policy, request)

    state = advance_clock(state, event.time)
    if isinstance(event, EnvEvent):
        state = set_environment(state, event.name, event.value)
    elif isinstance(event, DeviceEvent):
        state = _complete_by_event(state, policy, event)
    elif not isinstance(event, TickEvent):
        raise EngineError(f"unsupported event {event!r}")
    state, _, _ = continuity_sweep(state, policy)
    return state, None
