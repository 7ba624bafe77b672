"""Pure lifecycle transitions over EcosystemState."""
from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Optional

from app.core.models import (
    ANY,
    INACTIVE,
    ActivityInstance,
    ActivityStatus,
    AttributeValue,
    CounterKey,
    CounterScope,
    EcosystemState,
    EntityId,
    Phase,
    Timestamp,
)
from app.core.policy import Pattern, PatternKind


class StateError(Exception):
    """A lifecycle transition whose precondition does not hold."""


class UnknownDevice(StateError):
    pass


class AlreadyActive(StateError):
    pass


class NotActive(StateError):
    pass


class NotHalted(StateError):
    pass


def counter_keys(activity: EntityId, *, device: EntityId, subject: EntityId) -> tuple[CounterKey, ...]:
    return (
        CounterKey(CounterScope.PER_SOURCE, activity, subject),
        CounterKey(CounterScope.PER_OBJECT, activity, device),
        CounterKey(CounterScope.SYSTEM_WIDE, activity),
    )


def advance_clock(state: EcosystemState, time: Timestamp) -> EcosystemState:
    if time < state.clock:
        raise StateError(f"Clock cannot move backwards: {time} < {state.clock}")
    if time == state.clock:
        return state
    return replace(state, clock=time)


def set_environment(state: EcosystemState, name: str, value: AttributeValue) -> EcosystemState:
    env = dict(state.environment)
    env[name] = value
    return replace(state, environment=env)


def start_activity(
    state: EcosystemState,
    device: EntityId,
    activity: EntityId,
    initiator: EntityId,
    *,
    granted_by: Optional[int] = None,
) -> EcosystemState:
    if device not in state.devices:
        raise UnknownDevice(device)
    if state.live_instance(device, activity) is not None:
        raise AlreadyActive(f"{activity} already live on {device}")

    instance = ActivityInstance(
        device=device,
        activity=activity,
        initiator=initiator,
        start_time=state.clock,
        granted_by=granted_by,
    )
    counters = dict(state.counters)
    for key in counter_keys(activity, device=device, subject=initiator):
        counters[key] = counters.get(key, ()) + (state.clock,)
    return replace(state, live=state.live + (instance,), counters=counters)


def stop_activity(
    state: EcosystemState,
    device: EntityId,
    activity: EntityId,
    mode: ActivityStatus,
    *,
    by: Optional[EntityId] = None,
) -> EcosystemState:
    if mode not in (ActivityStatus.COMPLETED, ActivityStatus.ABORTED):
        raise ValueError(f"stop mode must be completed or aborted, got {mode.value}")
    instance = state.live_instance(device, activity)
    if instance is None:
        raise NotActive(f"{activity} is not live on {device}")

    finished = replace(instance, status=mode, end_time=state.clock, stopped_by=by)
    live = tuple(i for i in state.live if i is not instance)
    return replace(state, live=live, history=state.history + (finished,))


def _toggle(state: EcosystemState, instance: ActivityInstance, status: ActivityStatus) -> EcosystemState:
    live = tuple(replace(i, status=status) if i is instance else i for i in state.live)
    return replace(state, live=live)


def halt_activity(state: EcosystemState, device: EntityId, activity: EntityId) -> EcosystemState:
    instance = state.live_instance(device, activity)
    if instance is None or instance.status is not ActivityStatus.ACTIVE:
        raise NotActive(f"{activity} is not active on {device}")
    return _toggle(state, instance, ActivityStatus.HALTED)


def resume_activity(state: EcosystemState, device: EntityId, activity: EntityId) -> EcosystemState:
    instance = state.live_instance(device, activity)
    if instance is None or instance.status is not ActivityStatus.HALTED:
        raise NotHalted(f"{activity} is not halted on {device}")
    return _toggle(state, instance, ActivityStatus.ACTIVE)


def _activity_matches(pattern: EntityId, activity: EntityId) -> bool:
    return pattern == ANY or pattern == activity


def _last_finished(state: EcosystemState, device: EntityId) -> Optional[ActivityInstance]:
    for inst in reversed(state.history):
        if inst.device == device:
            return inst
    return None


def _inactive_devices(
    state: EcosystemState, object_pattern: Pattern, source_pattern: Pattern
) -> list[ActivityInstance]:
    busy = {i.device for i in state.live if i.status is ActivityStatus.ACTIVE}
    found: list[ActivityInstance] = []
    for device_id in sorted(state.devices):
        if device_id in busy or not object_pattern.matches_device(device_id, state.devices):
            continue
        last = _last_finished(state, device_id)
        if last is None:
            # never used: only a wildcard source can match
            if source_pattern.kind is not PatternKind.ANY:
                continue
            found.append(ActivityInstance(device=device_id, activity=INACTIVE, initiator=ANY, start_time=0))
            continue
        if not source_pattern.matches_subject(last.attribution, state.subjects, state.devices):
            continue
        found.append(
            ActivityInstance(
                device=device_id,
                activity=INACTIVE,
                initiator=last.attribution,
                start_time=last.end_time or 0,
            )
        )
    return found


def query_state(
    state: EcosystemState,
    phase: Phase,
    activity: EntityId,
    object_pattern: Pattern,
    source_pattern: Pattern,
    window: Optional[int] = None,
) -> list[ActivityInstance]:
    """
    Instances matching an (activity, object, source) condition.

    CURRENT looks at active instances; `inactive` yields one pseudo-instance per
    idle device, attributed to whoever left it idle. PRE looks at finished
    instances, optionally only those that ended within `window` seconds.
    """
    if phase is Phase.CURRENT:
        if activity == INACTIVE:
            return _inactive_devices(state, object_pattern, source_pattern)
        return [
            i
            for i in state.live
            if i.status is ActivityStatus.ACTIVE
            and _activity_matches(activity, i.activity)
            and object_pattern.matches_device(i.device, state.devices)
            and source_pattern.matches_subject(i.initiator, state.subjects, state.devices)
        ]

    horizon = None if window is None else state.clock - window
    found = []
    for inst in state.history:
        if horizon is not None and (inst.end_time or 0) < horizon:
            continue
        if not object_pattern.matches_device(inst.device, state.devices):
            continue
        if activity == INACTIVE:
            if source_pattern.matches_subject(inst.attribution, state.subjects, state.devices):
                found.append(inst)
            continue
        if _activity_matches(activity, inst.activity) and source_pattern.matches_subject(
            inst.initiator, state.subjects, state.devices
        ):
            found.append(inst)
    return found


def activations(state: EcosystemState, key: CounterKey, window: int, *, fixed: bool = False) -> int:
    """Activations under `key` in (clock - window, clock], or in the clock's fixed window."""
    stamps: Iterable[Timestamp] = state.counters.get(key, ())
    if fixed:
        bucket = state.clock // window
        return sum(1 for t in stamps if t // window == bucket and t <= state.clock)
    return sum(1 for t in stamps if state.clock - window < t <= state.clock)
