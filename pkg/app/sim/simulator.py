"""Deterministic scenario replay (the enforcement point driving the engine)."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional

from app.core.engine import apply_event
from app.core.models import EVENT, ActivityStatus, Decision, EcosystemState, EntityId, value_kind
from app.core.policy import PolicySet
from app.core.scenario import Expectation, Scenario, ScenarioEvent
from app.sim.formatting import format_digest, format_event_line, format_outcome

logger = logging.getLogger(__name__)

Key = tuple[EntityId, EntityId]


def initial_state(policy: PolicySet) -> EcosystemState:
    return EcosystemState(
        clock=0,
        devices=dict(policy.devices),
        subjects=dict(policy.subjects),
        environment=dict(policy.environment),
    )


def state_lines(state: EcosystemState) -> list[str]:
    """Canonical, order-independent lines for the live set, counters and environment."""
    lines = [
        f"live {i.device} {i.activity} {i.initiator} {i.status.value} {i.start_time}"
        for i in state.live
    ]
    for key, stamps in state.counters.items():
        target = key.subject_or_object if key.subject_or_object is not None else "-"
        lines.append(f"counter {key.scope.value} {key.activity} {target} {','.join(map(str, sorted(stamps)))}")
    for name, value in state.environment.items():
        lines.append(f"env {name} {value_kind(value)} {value!r}")
    return sorted(lines)


def digest(state: EcosystemState) -> str:
    sha = hashlib.sha256()
    for line in state_lines(state):
        sha.update(line.encode("utf-8"))
        sha.update(b"\n")
    return sha.hexdigest()


@dataclass(frozen=True)
class TraceEntry:
    index: int
    event: ScenarioEvent
    decision: Optional[Decision]
    revoked: tuple[Key, ...]
    resumed: tuple[Key, ...]
    digest: str

    def lines(self) -> list[str]:
        return [
            format_event_line(self.event, self.decision, revoked=self.revoked, resumed=self.resumed),
            format_digest(self.digest),
        ]


@dataclass(frozen=True)
class ScenarioTrace:
    entries: tuple[TraceEntry, ...]
    final_state: EcosystemState
    expectations_met: int = 0

    def render(self) -> str:
        return "".join(line + "\n" for entry in self.entries for line in entry.lines())


class ExpectationFailure(Exception):
    """A scenario expectation did not match the engine's decision."""

    def __init__(self, index: int, expected: Expectation, actual: Optional[Decision], trace: ScenarioTrace) -> None:
        self.index = index
        self.expected = expected
        self.actual = actual
        self.trace = trace
        super().__init__(f"event {index}: expected {expected}, got {self.actual_text}")

    @property
    def actual_text(self) -> str:
        return format_outcome(self.actual) if self.actual is not None else "no decision"


def _sweep_effects(before: EcosystemState, after: EcosystemState) -> tuple[tuple[Key, ...], tuple[Key, ...]]:
    """Revocations and resumptions caused by a non-request event."""
    revoked = tuple(
        i.key
        for i in after.history[len(before.history):]
        if i.status is ActivityStatus.ABORTED and i.stopped_by == EVENT
    )
    halted = {i.key for i in before.live if i.status is ActivityStatus.HALTED}
    resumed = tuple(i.key for i in after.live if i.status is ActivityStatus.ACTIVE and i.key in halted)
    return revoked, resumed


def run(policy: PolicySet, scenario: Scenario, *, state: Optional[EcosystemState] = None) -> ScenarioTrace:
    """
    Replay every event in order.

    Raises:
        ExpectationFailure: On the first expectation that does not hold
        EngineError: If an event cannot be applied
    """
    state = state if state is not None else initial_state(policy)
    entries: list[TraceEntry] = []
    met = 0
    for index, event in enumerate(scenario.events):
        before = state
        state, decision = apply_event(state, policy, event)
        if decision is not None:
            revoked, resumed = decision.revoked, decision.resumed
        else:
            revoked, resumed = _sweep_effects(before, state)
        entries.append(TraceEntry(index, event, decision, revoked, resumed, digest(state)))

        expectation = scenario.expectations.get(index)
        if expectation is None:
            continue
        if decision is None or not expectation.accepts(decision.outcome, decision.reason, decision.revoked):
            trace = ScenarioTrace(entries=tuple(entries), final_state=state, expectations_met=met)
            logger.info("Expectation failed at event %d", index)
            raise ExpectationFailure(index, expectation, decision, trace)
        met += 1

    logger.debug("Replayed %d events, %d expectations met", len(entries), met)
    return ScenarioTrace(entries=tuple(entries), final_state=state, expectations_met=met)
