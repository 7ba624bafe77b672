from __future__ import annotations

import random
from dataclasses import replace

import pytest

from app.core.engine import EngineError, apply_event, continuity_sweep, decide_and_commit
from app.core.models import EVENT, ActivityStatus, CounterScope, DenyReason, Outcome, Request
from app.core.policy import PolicySet
from app.core.scenario import DeviceAction, DeviceEvent, EnvEvent, RequestEvent, ScenarioEvent, TickEvent
from app.core.validation import validate
from app.sim.simulator import initial_state
from tests.generators import ACTIVITIES, SUBJECTS, TICKS, random_policy
from tests.support import Driver, load_policy, policy_of


def test_empty_policy_denies_everything() -> None:
    policy = policy_of("device Lamp type=Lamp\nsubject alice kind=user\n")
    decision = Driver(policy).request("alice", "TURN-ON", "Lamp", "Lighting")
    assert decision.outcome is Outcome.DENY
    assert decision.reason is DenyReason.NO_MATCHING_RULE
    assert decision.matched_rule is None


def test_unknown_device_has_no_matching_rule() -> None:
    policy = policy_of(
        """
        device Lamp type=Lamp
        rule on ANY:
          allow TURN-ON by ANY as Lighting
        """
    )
    assert Driver(policy).request("alice", "TURN-ON", "Ghost", "Lighting").reason is DenyReason.NO_MATCHING_RULE


def test_first_matching_rule_wins() -> None:
    policy = policy_of(
        """
        device Lamp type=Lamp
        subject alice kind=user
        env power = 0

        rule on Lamp:
          allow TURN-ON by alice as Lighting
          when value(power) > 10

        rule on Lamp:
          allow TURN-ON by ANY as Lighting
        """
    )
    decision = Driver(policy).request("alice", "TURN-ON", "Lamp", "Lighting")
    # the second rule would permit, but the first one matched and failed
    assert (decision.reason, decision.matched_rule) == (DenyReason.CONTEXT_FAILED, 0)


@pytest.mark.parametrize(
    "clause, reason",
    [
        ("pre Charging(Lamp, ANY)", DenyReason.PRE_FAILED),
        ("cur Charging(Lamp, ANY)", DenyReason.CUR_FAILED),
        ("when value(power) > 10", DenyReason.CONTEXT_FAILED),
        ("when value(undefined) > 10", DenyReason.CONTEXT_FAILED),
        ("when value(power) = on", DenyReason.CONTEXT_FAILED),
        ("then stop Charging(Lamp)", DenyReason.OBLIGATION_FAILED),
        ("then start Charging(type:Nothing)", DenyReason.OBLIGATION_FAILED),
    ],
)
def test_deny_reasons(clause: str, reason: DenyReason) -> None:
    policy = policy_of(
        f"""
        device Lamp type=Lamp
        subject alice kind=user
        env power = 5

        rule on Lamp:
          allow TURN-ON by alice as Lighting
          {clause}
        """
    )
    assert Driver(policy).request("alice", "TURN-ON", "Lamp", "Lighting").reason is reason


def test_already_active() -> None:
    policy = policy_of(
        """
        device Lamp type=Lamp
        rule on Lamp:
          allow TURN-ON by ANY as Lighting
        """
    )
    driver = Driver(policy)
    assert driver.request("alice", "TURN-ON", "Lamp", "Lighting", at=0).permitted
    assert driver.request("bob", "TURN-ON", "Lamp", "Lighting", at=5).reason is DenyReason.ALREADY_ACTIVE


def test_deny_leaves_state_untouched_apart_from_clock() -> None:
    policy = policy_of(
        """
        device Lamp type=Lamp
        device Fan type=Fan
        subject alice kind=user

        rule on Fan:
          allow TURN-ON by alice as Blowing

        rule on Lamp:
          allow TURN-ON by alice as Lighting
          then start Blowing(Fan); stop Heating(Fan)
        """
    )
    state = initial_state(policy)
    request = Request(subject="alice", op="TURN-ON", object="Lamp", activity="Lighting", time=40)
    after, decision = decide_and_commit(state, policy, request)

    # Blowing started before the failing stop; the rollback discards it
    assert decision.reason is DenyReason.OBLIGATION_FAILED
    assert after == replace(state, clock=40)


def test_request_before_clock_is_an_error() -> None:
    policy = load_policy("example05.acac")
    state = replace(initial_state(policy), clock=100)
    with pytest.raises(EngineError):
        decide_and_commit(state, policy, Request("operator", "CLOSE", "OilTankValve", "Closed", time=99))
    with pytest.raises(EngineError):
        apply_event(state, policy, TickEvent(time=10))


def test_tick_runs_continuity_sweep() -> None:
    policy = policy_of(
        """
        device Lamp type=Lamp
        subject alice kind=user

        rule on Lamp:
          allow TURN-ON by alice as Lighting
          when* time in 0s..1h
        """
    )
    state, decision = decide_and_commit(initial_state(policy), policy, Request("alice", "TURN-ON", "Lamp", "Lighting", time=60))
    assert decision.permitted

    state, decision = apply_event(state, policy, TickEvent(time=1800))
    assert decision is None and state.live_instance("Lamp", "Lighting") is not None
    state, _ = apply_event(state, policy, TickEvent(time=7200))
    assert state.live == ()
    assert (state.history[-1].status, state.history[-1].stopped_by) == (ActivityStatus.ABORTED, EVENT)

def test_obligations_attributed_to_requester() -> None:
    driver = Driver(load_policy("example03.acac"))
    assert driver.request("weed-detector", "SPRAY-ON", "AerialDrone", "Spraying", at=10).permitted
    decision = driver.request("autonomous-tractor", "IMAGING-ON", "AerialDrone", "ThermalImaging", at=20)

    assert decision.permitted
    assert [str(o) for o in decision.executed_obligations] == ["stop Spraying(AerialDrone)"]
    (stopped,) = driver.state.history
    assert (stopped.status, stopped.stopped_by) == (ActivityStatus.ABORTED, "autonomous-tractor")
    assert driver.state.live_instance("AerialDrone", "ThermalImaging") is not None


def test_contextual_time_window_wraps_day() -> None:
    driver = Driver(load_policy("example10.acac"))
    assert driver.request("Tom", "TURN-ON", "Speaker", "Playing", at=79200).permitted
    assert driver.request("Bob", "TURN-OFF", "Speaker", "inactive", at=82800).reason is DenyReason.CONTEXT_FAILED
    assert driver.request("Bob", "TURN-OFF", "Speaker", "inactive", at=88200).permitted
    assert driver.state.live == ()


def test_environment_hour_update_enables_turn_off() -> None:
    driver = Driver(load_policy("example10b.acac"))
    assert driver.request("Tom", "TURN-ON", "Speaker", "Playing", at=0).permitted
    driver.apply(EnvEvent(time=3600, name="hour", value=23))
    assert driver.request("Bob", "TURN-OFF", "Speaker", "inactive").reason is DenyReason.CONTEXT_FAILED

    # the update alone revokes nothing; Bob's request does the stopping
    assert driver.apply(EnvEvent(time=9000, name="hour", value=0)) is None
    assert driver.state.live_instance("Speaker", "Playing") is not None
    decision = driver.request("Bob", "TURN-OFF", "Speaker", "inactive")
    assert decision.permitted and driver.state.live == ()
    assert driver.state.history[-1].stopped_by == "Bob"


def test_location_branch_of_disjunction() -> None:
    home = Driver(load_policy("example11.acac"))
    moved = Driver(load_policy("example11b.acac"))
    for driver in (home, moved):
        assert driver.request("Parent", "WATCH", "TV", "Watching", at=0).permitted
    assert home.request("Child", "TURN-ON", "Speaker", "Playing", at=10).reason is DenyReason.CUR_FAILED
    assert moved.request("Child", "TURN-ON", "Speaker", "Playing", at=10).permitted


def test_event_trigger_revokes_continuous_grant() -> None:
    policy = load_policy("example08.acac")
    driver = Driver(policy)
    assert driver.request("operator", "TURN-ON", "RoboticArm", "Moving", at=0).permitted

    state, decision = apply_event(
        driver.state, policy, DeviceEvent(time=10, object="ProductionBelt", activity="Vibrating", action=DeviceAction.START)
    )
    assert decision is not None and decision.permitted
    assert decision.revoked == (("RoboticArm", "Moving"),)
    assert state.live_instance("RoboticArm", "Moving") is None
    assert state.history[-1].stopped_by == "EVENT"


def test_env_update_revokes_continuous_context() -> None:
    policy = policy_of(
        """
        device Heater type=Heater
        subject alice kind=user
        env temperature = 60

        rule on Heater:
          allow TURN-ON by alice as Heating
          when* value(temperature) < 70
        """
    )
    driver = Driver(policy)
    assert driver.request("alice", "TURN-ON", "Heater", "Heating", at=0).permitted

    state, decision = apply_event(driver.state, policy, EnvEvent(time=10, name="temperature", value=65))
    assert decision is None and state.live_instance("Heater", "Heating") is not None
    state, _ = apply_event(state, policy, EnvEvent(time=20, name="temperature", value=75))
    assert state.live_instance("Heater", "Heating") is None
    assert state.history[-1].status is ActivityStatus.ABORTED


def test_stop_event_for_idle_device_is_ignored() -> None:
    policy = load_policy("example04.acac")
    state = initial_state(policy)
    after, decision = apply_event(
        state, policy, DeviceEvent(time=5, object="Tractor", activity="Ploughing", action=DeviceAction.STOP)
    )
    assert decision is None
    assert after == replace(state, clock=5)


def test_sweep_on_quiet_state_is_a_no_op() -> None:
    policy = load_policy("spray-safe.acac")
    state = initial_state(policy)
    assert continuity_sweep(state, policy) == (state, (), ())


# --- usage limits ---

LIMITED = """
    device PestSprayer type=Sprayer
    subject farmer kind=user
    subject worker kind=user
    limit system-wide PestSpray 2/1d

    rule on PestSprayer:
      allow TURN-ON by ANY as PestSpray

    rule on PestSprayer:
      allow TURN-OFF by ANY as inactive
      then stop PestSpray(PestSprayer)
    """


def test_system_wide_limit() -> None:
    driver = Driver(policy_of(LIMITED))
    assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=0).permitted
    assert driver.request("farmer", "TURN-OFF", "PestSprayer", "inactive", at=50).permitted
    assert driver.request("worker", "TURN-ON", "PestSprayer", "PestSpray", at=100).permitted
    assert driver.request("worker", "TURN-OFF", "PestSprayer", "inactive", at=150).permitted
    assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=200).reason is DenyReason.LIMIT_EXCEEDED
    assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=86500).permitted


def test_fixed_window_limit_resets_at_boundary() -> None:
    driver = Driver(policy_of(LIMITED.replace("2/1d", "2/1d fixed")))
    for start in (80000, 81000):
        assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=start).permitted
        assert driver.request("farmer", "TURN-OFF", "PestSprayer", "inactive", at=start + 10).permitted
    assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=86399).reason is DenyReason.LIMIT_EXCEEDED
    # a trailing window would still count both starts here
    assert driver.request("farmer", "TURN-ON", "PestSprayer", "PestSpray", at=86400).permitted


def _limit_policy(scope: CounterScope, max_count: int, window: int, fixed: bool, at_rule: bool) -> PolicySet:
    line = f"limit {scope.value} Pumping {max_count}/{window}s" + (" fixed" if fixed else "")
    return policy_of(
        f"""
        device NorthPump type=Pump
        device SouthPump type=Pump
        subject alice kind=user
        subject bob kind=user
        {"" if at_rule else line}

        rule on type:Pump:
          allow TURN-ON by ANY as Pumping
          {line if at_rule else ""}
        """
    )


def _counted(scope: CounterScope, entry: tuple[str, str, int], subject: str, device: str) -> bool:
    if scope is CounterScope.PER_SOURCE:
        return entry[0] == subject
    if scope is CounterScope.PER_OBJECT:
        return entry[1] == device
    return True


def _in_window(stamp: int, clock: int, window: int, fixed: bool) -> bool:
    if fixed:
        return stamp // window == clock // window and stamp <= clock
    return clock - window < stamp <= clock


@pytest.mark.parametrize("seed", range(16))
def test_limits_match_counting_oracle(seed: int) -> None:
    rng = random.Random(seed)
    scope = rng.choice(list(CounterScope))
    max_count = rng.randint(1, 4)
    window = rng.choice([3600, 86400])
    fixed = rng.random() < 0.5
    driver = Driver(_limit_policy(scope, max_count, window, fixed, at_rule=rng.random() < 0.5))

    log: list[tuple[str, str, int]] = []
    clock = 0
    for _ in range(300):
        clock += rng.choice([0, 1, 60, 600, 1800, window - 1, window, window // 3])
        subject = rng.choice(["alice", "bob"])
        device = rng.choice(["NorthPump", "SouthPump"])
        if rng.random() < 0.35:
            driver.apply(DeviceEvent(time=clock, object=device, activity="Pumping", action=DeviceAction.STOP))
            continue
        used = sum(1 for e in log if _counted(scope, e, subject, device) and _in_window(e[2], clock, window, fixed))
        running = driver.state.live_instance(device, "Pumping") is not None
        decision = driver.request(subject, "TURN-ON", device, "Pumping", at=clock)
        if used >= max_count:
            assert decision.reason is DenyReason.LIMIT_EXCEEDED
        elif running:
            assert decision.reason is DenyReason.ALREADY_ACTIVE
        else:
            assert decision.permitted
            log.append((subject, device, clock))

    keys = {"alice", "bob"} if scope is CounterScope.PER_SOURCE else {"NorthPump", "SouthPump"}
    for key in keys if scope is not CounterScope.SYSTEM_WIDE else {None}:
        stamps = [t for s, d, t in log if key is None or key in (s, d)]
        for t in stamps:
            assert sum(1 for s in stamps if _in_window(s, t, window, fixed)) <= max_count


# --- incompatibility safety over generated policies ---

@pytest.mark.parametrize("seed", range(10))
def test_generated_policies_never_break_incompatibility(seed: int) -> None:
    rng = random.Random(seed)
    for _ in range(100):
        generated = random_policy(rng)
        policy = generated.parse()
        assert validate(policy) == []
        state = initial_state(policy)
        for _ in range(rng.randint(1, 12)):
            time = state.clock + rng.choice(TICKS)
            roll = rng.random()
            event: ScenarioEvent
            if roll < 0.65:
                subject = rng.choice([*SUBJECTS, EVENT])
                event = RequestEvent(time, subject, "TURN-ON", rng.choice(generated.devices), rng.choice(ACTIVITIES))
            elif roll < 0.9 and state.live:
                inst = rng.choice(state.live)
                event = DeviceEvent(time, inst.device, inst.activity, DeviceAction.STOP)
            else:
                event = TickEvent(time)
            blocked = isinstance(event, RequestEvent) and generated.recent_partner(
                state, event.object, event.activity, time
            )

            after, decision = apply_event(state, policy, event)
            if decision is not None and decision.permitted:
                assert not blocked
            if decision is not None and not decision.permitted:
                assert after == replace(state, clock=time)
            assert generated.clashes(after) == []
            state = after


def _random_events(rng: random.Random, devices: list[str], count: int) -> list[ScenarioEvent]:
    events: list[ScenarioEvent] = []
    time = 0
    for _ in range(count):
        time += rng.choice(TICKS)
        device, activity = rng.choice(devices), rng.choice(ACTIVITIES)
        if rng.random() < 0.7:
            events.append(RequestEvent(time, rng.choice([*SUBJECTS, EVENT]), "TURN-ON", device, activity))
        else:
            events.append(DeviceEvent(time, device, activity, DeviceAction.STOP))
    return events


@pytest.mark.parametrize("seed", range(6))
def test_requests_no_rule_admits_are_denied_without_effect(seed: int) -> None:
    rng = random.Random(seed)
    for _ in range(40):
        generated = random_policy(rng)
        policy = generated.parse()
        admitted = generated.requests()
        state = initial_state(policy)
        for event in _random_events(rng, generated.devices, 8):
            state, _ = apply_event(state, policy, event)

            subject = rng.choice([*SUBJECTS, EVENT])
            op = rng.choice(["TURN-ON", "TURN-OFF", "OPEN"])
            device = rng.choice(generated.devices)
            activity = rng.choice([*ACTIVITIES, "Idle"])
            if (subject, op, device, activity) in admitted:
                continue
            time = state.clock + rng.choice(TICKS)
            after, decision = decide_and_commit(state, policy, Request(subject, op, device, activity, time))
            assert decision.reason is DenyReason.NO_MATCHING_RULE
            assert decision.matched_rule is None
            assert after == replace(state, clock=time)


@pytest.mark.parametrize("seed", range(6))
def test_rules_after_every_first_match_can_be_reordered(seed: int) -> None:
    rng = random.Random(seed)
    for _ in range(30):
        generated = random_policy(rng, max_rules=6)
        policy = generated.parse()
        events = _random_events(rng, generated.devices, 10)

        trail = []
        state = initial_state(policy)
        for event in events:
            state, decision = apply_event(state, policy, event)
            trail.append((state, decision))
        matched = [d.matched_rule for _, d in trail if d is not None and d.matched_rule is not None]
        first = max(matched, default=-1) + 1
        if len(generated.rules) - first < 2:
            continue

        tail = generated.rules[first:]
        rng.shuffle(tail)
        generated.rules[first:] = tail
        reordered = generated.parse()
        state = initial_state(reordered)
        for event, expected in zip(events, trail):
            state, decision = apply_event(state, reordered, event)
            assert (state, decision) == expected
