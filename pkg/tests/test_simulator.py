from __future__ import annotations

from dataclasses import replace

import pytest

from app.core.models import EcosystemState
from app.sim.simulator import ExpectationFailure, digest, initial_state, run, state_lines
from tests.support import SCENARIO_SUFFIX, list_fixtures, load_policy, load_scenario, policy_of, scenario_of


def _pair(scenario_name: str):
    policy_name = scenario_name.replace(SCENARIO_SUFFIX, ".acac")
    return load_policy(policy_name), load_scenario(scenario_name)


@pytest.mark.parametrize("name", list_fixtures(SCENARIO_SUFFIX))
def test_fixture_scenarios_meet_expectations(name: str) -> None:
    policy, scenario = _pair(name)
    trace = run(policy, scenario)
    assert trace.expectations_met == len(scenario.expectations) > 0
    assert len(trace.entries) == len(scenario.events)


@pytest.mark.parametrize("name", list_fixtures(SCENARIO_SUFFIX))
def test_replay_is_deterministic(name: str) -> None:
    policy, scenario = _pair(name)
    first, second = run(policy, scenario), run(policy, scenario)
    assert first.render() == second.render()
    assert first.final_state == second.final_state


def test_trace_lines_show_effects() -> None:
    policy, scenario = _pair("example03.acsc")
    lines = run(policy, scenario).render().splitlines()
    assert lines[0] == "0 autonomous-tractor IMAGING-ON AerialDrone ThermalImaging -> DENY(cur-failed)"
    assert lines[1].startswith("# digest ")
    assert lines[4] == (
        "20 autonomous-tractor IMAGING-ON AerialDrone ThermalImaging -> PERMIT obligations=stop:Spraying(AerialDrone)"
    )


def test_trace_shows_revocation_by_event() -> None:
    policy, scenario = _pair("example08.acsc")
    lines = run(policy, scenario).render().splitlines()[::2]
    assert lines[1] == "10 EVENT TRIGGER ProductionBelt Vibrating -> PERMIT revoked=RoboticArm/Moving"
    assert lines[3] == "30 event ProductionBelt Vibrating stop"


def test_trace_shows_preemption_and_resumption() -> None:
    policy = policy_of(
        """
        device NutrientUnit type=Mixer
        device Sprayer1 type=Sprayer

        rule on Sprayer1:
          allow TURN-ON by ANY as Spraying

        rule on NutrientUnit:
          allow TURN-ON by ANY as NutrientMixing

        relation precedence NutrientMixing Spraying detail winner=NutrientMixing
        """
    )
    scenario = scenario_of(
        """
        at 0 request grower TURN-ON Sprayer1 Spraying
        at 10 request grower TURN-ON NutrientUnit NutrientMixing
        at 20 event NutrientUnit NutrientMixing stop
        at 30 env humidity=40
        """
    )
    lines = run(policy, scenario).render().splitlines()[::2]
    assert lines[1] == "10 grower TURN-ON NutrientUnit NutrientMixing -> PERMIT preempted=Sprayer1/Spraying:halted"
    assert lines[2] == "20 event NutrientUnit NutrientMixing stop resumed=Sprayer1/Spraying"
    assert lines[3] == "30 env humidity=40"


def test_expectation_failure_carries_partial_trace() -> None:
    policy = load_policy("example05.acac")
    scenario = scenario_of(
        """
        at 0 request operator CLOSE OilTankValve Closed
        at 0 expect permit
        at 5 request operator TURN-ON OilFilter Filtering
        at 5 expect deny:cur-failed
        """
    )
    with pytest.raises(ExpectationFailure) as info:
        run(policy, scenario)
    failure = info.value
    assert failure.index == 1
    assert str(failure.expected) == "deny:cur-failed"
    assert failure.actual_text == "DENY(no-matching-rule)"
    assert failure.trace.expectations_met == 1
    assert len(failure.trace.entries) == 2


def test_unmet_revocation_expectation_fails() -> None:
    policy = load_policy("example08.acac")
    scenario = scenario_of(
        """
        at 0 request operator TURN-ON RoboticArm Moving
        at 10 event ProductionBelt Vibrating start
        at 10 expect permit revoked=ProductionBelt/Moving
        """
    )
    with pytest.raises(ExpectationFailure) as info:
        run(policy, scenario)
    assert info.value.index == 1
    assert str(info.value.expected) == "permit revoked=ProductionBelt/Moving"


def test_run_continues_from_given_state() -> None:
    policy, scenario = _pair("example01.acsc")
    prefix = replace(scenario, events=scenario.events[:3], expectations={})
    state = run(policy, prefix).final_state
    tail = scenario_of(
        """
        at 180 request moisture-sensor TURN-ON WaterSprinkler Spraying
        at 180 expect permit
        """
    )
    assert run(policy, tail, state=state).expectations_met == 1


def test_digest_ignores_insertion_order() -> None:
    policy = load_policy("example06.acac")
    state = initial_state(policy)
    one = replace(state, environment={"a": 1, "b": "x"})
    two = replace(state, environment={"b": "x", "a": 1})
    assert digest(one) == digest(two)
    assert digest(one) != digest(replace(one, environment={"a": 1.0, "b": "x"}))
    assert state_lines(EcosystemState()) == []
