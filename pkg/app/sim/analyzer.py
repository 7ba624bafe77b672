"""
Bounded breadth-first safety analysis.

Explores every interleaving of universe requests, completions of live
activities and clock advances up to a depth bound, looking for a state where
an exclusive relation is broken or a member of a must-co-occur pair runs alone.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from app.core.engine import apply_event
from app.core.models import EVENT, EcosystemState, Request, Timestamp, value_kind
from app.core.policy import PolicySet, RelationDecl, RelationKind, StateCondition, TimeIn, iter_atoms
from app.core.relations import Violation, co_occurrence_violations, unpaired_members
from app.core.scenario import (
    DeviceAction,
    DeviceEvent,
    RequestEvent,
    RequestUniverse,
    Scenario,
    ScenarioEvent,
    TickEvent,
)
from app.dsl.printer import format_scenario
from app.sim.formatting import format_live
from app.sim.messages import MSG_SAFE, MSG_UNSAFE, MSG_UNSAFE_STATE, get_message

logger = logging.getLogger(__name__)

DEFAULT_GRANULARITY = 3600


class Verdict(str, Enum):
    SAFE = "SAFE"
    UNSAFE = "UNSAFE"


@dataclass(frozen=True)
class Counterexample:
    events: tuple[ScenarioEvent, ...]
    violation: Violation
    final_state: EcosystemState

    def to_scenario(self) -> Scenario:
        return Scenario(events=self.events)

    def render(self) -> str:
        text = format_scenario(self.to_scenario())
        return text + get_message(MSG_UNSAFE_STATE, live=format_live(self.final_state.live)) + "\n"


@dataclass(frozen=True)
class AnalysisResult:
    verdict: Verdict
    depth: int
    explored: int
    counterexample: Optional[Counterexample] = None

    @property
    def safe(self) -> bool:
        return self.verdict is Verdict.SAFE

    def render(self) -> str:
        if self.counterexample is None:
            return get_message(MSG_SAFE, depth=self.depth) + "\n"
        header = get_message(
            MSG_UNSAFE,
            depth=self.depth,
            explored=self.explored,
            relation=self.counterexample.violation.relation.describe().replace(" ", ":"),
        )
        return header + "\n" + self.counterexample.render()


def derive_requests(policy: PolicySet) -> tuple[Request, ...]:
    """Every (subject, op, device, activity) a rule head can match."""
    subjects = sorted(policy.subjects) + [EVENT]
    devices = sorted(policy.devices)
    found: list[Request] = []
    for rule in policy.rules:
        for subject in subjects:
            if not rule.source.matches_subject(subject, policy.subjects, policy.devices):
                continue
            for device in devices:
                if not rule.object.matches_device(device, policy.devices):
                    continue
                request = Request(subject=subject, op=rule.op, object=device, activity=rule.activity)
                if request not in found:
                    found.append(request)
    return tuple(found)


def _windows(policy: PolicySet, properties: Iterable[RelationDecl]) -> list[int]:
    windows: set[int] = set()
    for rel in (*policy.relations, *properties):
        if rel.window:
            windows.add(rel.window)
    for rule in policy.rules:
        windows.update(limit.window for limit in rule.limits)
        for block in (rule.pre_conditions, rule.current_conditions, rule.contextual):
            windows.update(a.window for a in iter_atoms(block) if isinstance(a, StateCondition) and a.window)
    windows.update(limit.window for limit in policy.limits)
    return sorted(windows)


def _clock_sensitive(policy: PolicySet) -> bool:
    """Whether decisions depend on the absolute clock, not just on elapsed times."""
    if any(limit.fixed for limit in policy.limits):
        return True
    for rule in policy.rules:
        if any(limit.fixed for limit in rule.limits):
            return True
        for block in (rule.pre_conditions, rule.current_conditions, rule.contextual):
            if any(isinstance(a, TimeIn) for a in iter_atoms(block)):
                return True
    return any(isinstance(a, TimeIn) for rel in policy.relations for a in iter_atoms(rel.guard))


class _StateKey:
    """
    Equivalence key for visited states.

    Timestamps are kept as ages capped at the longest window, so states that
    differ only in long-past history collapse into one.
    """

    def __init__(self, policy: PolicySet, properties: Iterable[RelationDecl]) -> None:
        windows = _windows(policy, properties)
        self.horizon = (max(windows) if windows else 0) + 1
        self.absolute = _clock_sensitive(policy)
        # only limited activities can change a decision through their counters
        self.limited = {limit.activity for limit in policy.limits}
        self.limited.update(limit.activity for rule in policy.rules for limit in rule.limits)

    def age(self, clock: Timestamp, t: Optional[Timestamp]) -> int:
        return min(clock - (t or 0), self.horizon)

    def __call__(self, state: EcosystemState) -> str:
        clock = state.clock
        lines = [f"clock {clock if self.absolute else '-'}"]
        lines += [
            f"live {i.device} {i.activity} {i.initiator} {i.status.value} {i.granted_by}"
            for i in state.live
        ]
        finished = sorted({
            f"past {i.device} {i.activity} {i.initiator} {i.status.value} {i.stopped_by} {self.age(clock, i.end_time)}"
            for i in state.history
        })
        last: dict[str, str] = {}
        for i in state.history:
            last[i.device] = f"last {i.device} {i.attribution}"
        for key in sorted(state.counters, key=lambda k: (k.scope.value, k.activity, k.subject_or_object or "")):
            if key.activity not in self.limited:
                continue
            ages = sorted(self.age(clock, t) for t in state.counters[key] if clock - t < self.horizon)
            if ages:
                lines.append(f"counter {key.scope.value} {key.activity} {key.subject_or_object} {ages}")
        env = [f"env {k} {value_kind(v)} {v!r}" for k, v in sorted(state.environment.items())]
        text = "\n".join(lines + finished + sorted(last.values()) + env)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _Explorer:
    def __init__(self, policy: PolicySet, universe: RequestUniverse, granularity: int) -> None:
        self.policy = policy
        self.requests = universe.requests or derive_requests(policy)
        deltas = {granularity}
        deltas.update(w + 1 for w in _windows(policy, universe.properties))
        self.deltas = sorted(deltas)
        enforced = tuple(
            r for r in policy.relations
            if r.kind in (RelationKind.INCOMPATIBLE, RelationKind.TEMPORARY) or r.must_co_occur
        )
        self.properties = enforced + tuple(universe.properties)

    def violation(self, state: EcosystemState) -> Optional[Violation]:
        exclusive = [r for r in self.properties if r.kind in (RelationKind.INCOMPATIBLE, RelationKind.TEMPORARY)]
        found = co_occurrence_violations(state, exclusive)
        if found:
            return found[0]
        unpaired = unpaired_members(state, [r for r in self.properties if r.must_co_occur])
        return unpaired[0] if unpaired else None

    def successors(self, state: EcosystemState) -> list[tuple[ScenarioEvent, EcosystemState]]:
        clock = state.clock
        events: list[ScenarioEvent] = [
            RequestEvent(time=clock, subject=r.subject, op=r.op, object=r.object, activity=r.activity)
            for r in self.requests
        ]
        events += [
            DeviceEvent(time=clock, object=i.device, activity=i.activity, action=DeviceAction.STOP)
            for i in sorted(state.live, key=lambda i: i.key)
        ]
        events += [TickEvent(time=clock + delta) for delta in self.deltas]
        result = []
        for event in events:
            next_state, _ = apply_event(state, self.policy, event)
            result.append((event, next_state))
        return result


def analyze(
    policy: PolicySet,
    initial: EcosystemState,
    universe: RequestUniverse,
    depth: int,
    *,
    granularity: Optional[int] = None,
    workers: int = 1,
) -> AnalysisResult:
    """
    Breadth-first search up to `depth` transitions.

    Frontier states are expanded in parallel but merged in frontier order, so
    the verdict and the counterexample do not depend on `workers`.
    """
    step = granularity or universe.granularity or DEFAULT_GRANULARITY
    explorer = _Explorer(policy, universe, step)
    key = _StateKey(policy, universe.properties)

    found = explorer.violation(initial)
    if found is not None:
        return AnalysisResult(Verdict.UNSAFE, 0, 1, Counterexample((), found, initial))

    seen = {key(initial)}
    frontier: list[tuple[EcosystemState, tuple[ScenarioEvent, ...]]] = [(initial, ())]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for level in range(1, depth + 1):
            expanded = list(pool.map(explorer.successors, [state for state, _ in frontier]))
            next_frontier = []
            for (_, path), successors in zip(frontier, expanded):
                for event, state in successors:
                    k = key(state)
                    if k in seen:
                        continue
                    seen.add(k)
                    trail = path + (event,)
                    found = explorer.violation(state)
                    if found is not None:
                        logger.info("Violation at depth %d after %d states", level, len(seen))
                        return AnalysisResult(Verdict.UNSAFE, level, len(seen), Counterexample(trail, found, state))
                    next_frontier.append((state, trail))
            logger.info("Depth %d: %d new states, %d seen", level, len(next_frontier), len(seen))
            frontier = next_frontier
            if not frontier:
                break
    return AnalysisResult(Verdict.SAFE, depth, len(seen))
