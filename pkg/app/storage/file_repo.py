from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from app.core.policy import PolicySet
from app.core.scenario import RequestUniverse, Scenario
from app.dsl.parser import parse_policy, parse_scenario, parse_universe
from app.storage.repo import PolicyRepository

logger = logging.getLogger(__name__)


class RepositoryError(Exception):
    """A document that cannot be read or written."""


class FileRepository(PolicyRepository):
    def __init__(self, *, root: Path | str | None = None) -> None:
        """
        Documents on the local filesystem.

        Args:
            root: Directory relative names resolve against (default: current directory)
        """
        self._root: Optional[Path] = Path(root) if root is not None else None

    def _path(self, name: str) -> Path:
        path = Path(name)
        return path if self._root is None or path.is_absolute() else self._root / path

    def read_text(self, *, name: str) -> str:
        path = self._path(name)
        try:
            # newline="" keeps CRLF; the parsers accept both line endings
            with open(path, "r", encoding="utf-8", newline="") as f:
                return f.read()
        except (OSError, UnicodeDecodeError) as ex:
            raise RepositoryError(f"Cannot read {path}: {ex}") from ex

    def write_text(self, *, name: str, text: str) -> None:
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        except OSError as ex:
            raise RepositoryError(f"Cannot write {path}: {ex}") from ex
        logger.debug("Wrote %s (%d chars)", path, len(text))

    def load_policy(self, *, name: str) -> PolicySet:
        return parse_policy(self.read_text(name=name), file=name)

    def load_scenario(self, *, name: str) -> Scenario:
        return parse_scenario(self.read_text(name=name), file=name)

    def load_universe(self, *, name: str) -> RequestUniverse:
        return parse_universe(self.read_text(name=name), file=name)
