from __future__ import annotations

from typing import Protocol

from app.core.policy import PolicySet
from app.core.scenario import RequestUniverse, Scenario


class PolicyRepository(Protocol):
    # --- raw text ---
    def read_text(self, *, name: str) -> str: ...
    def write_text(self, *, name: str, text: str) -> None: ...

    # --- parsed documents ---
    def load_policy(self, *, name: str) -> PolicySet: ...
    def load_scenario(self, *, name: str) -> Scenario: ...
    def load_universe(self, *, name: str) -> RequestUniverse: ...
