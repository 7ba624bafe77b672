from __future__ import annotations

import textwrap
from pathlib import Path

from app.core.engine import apply_event, decide_and_commit
from app.core.models import Decision, EcosystemState, Request
from app.core.policy import PolicySet
from app.core.scenario import Scenario, ScenarioEvent
from app.dsl import parse_policy, parse_scenario
from app.sim.simulator import initial_state
from app.storage.file_repo import FileRepository

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "app" / "fixtures"

POLICY_SUFFIX = ".acac"
SCENARIO_SUFFIX = ".acsc"
UNIVERSE_SUFFIX = ".acu"


def fixture_path(name: str) -> Path:
    path = FIXTURES_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"Fixture not found: {path}")
    return path


def list_fixtures(suffix: str = POLICY_SUFFIX) -> list[str]:
    """Bundled fixture names with the given suffix, sorted."""
    return sorted(p.name for p in FIXTURES_DIR.glob(f"*{suffix}"))


def policy_of(text: str) -> PolicySet:
    return parse_policy(textwrap.dedent(text).lstrip("\n"))


def scenario_of(text: str) -> Scenario:
    return parse_scenario(textwrap.dedent(text).lstrip("\n"))


def load_policy(name: str) -> PolicySet:
    return FileRepository().load_policy(name=str(fixture_path(name)))


def load_scenario(name: str) -> Scenario:
    return FileRepository().load_scenario(name=str(fixture_path(name)))


class Driver:
    """Feeds requests to the engine one by one, keeping the resulting state."""

    def __init__(self, policy: PolicySet, state: EcosystemState | None = None) -> None:
        self.policy = policy
        self.state = state if state is not None else initial_state(policy)

    def request(self, subject: str, op: str, obj: str, activity: str, *, at: int | None = None) -> Decision:
        time = self.state.clock if at is None else at
        request = Request(subject=subject, op=op, object=obj, activity=activity, time=time)
        self.state, decision = decide_and_commit(self.state, self.policy, request)
        return decision

    def apply(self, event: ScenarioEvent) -> Decision | None:
        self.state, decision = apply_event(self.state, self.policy, event)
        return decision
