from __future__ import annotations

from pathlib import Path

import pytest

from app.core.config import AppConfig, get_app_version
from app.sim.messages import MSG_REPLAY_OK, MSG_SAFE, get_message
from app.storage.file_repo import FileRepository, RepositoryError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("ACAC_LOG_LEVEL", raising=False)


def test_defaults() -> None:
    assert AppConfig.from_env() == AppConfig(log_level="WARNING")


def test_log_level_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ACAC_LOG_LEVEL", " debug ")
    assert AppConfig.from_env().log_level == "DEBUG"


def test_invalid_log_level(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("ACAC_LOG_LEVEL", "TRACE")
    with pytest.raises(RuntimeError, match="ACAC_LOG_LEVEL"):
        AppConfig.from_env()


def test_version_is_known() -> None:
    assert get_app_version() != "unknown"


def test_message_catalog() -> None:
    assert get_message(MSG_SAFE, depth=3) == "SAFE depth=3"
    assert get_message(MSG_REPLAY_OK, events=2, expectations=1) == "OK events=2 expectations=1"
    with pytest.raises(KeyError):
        get_message("no_such_message")
    with pytest.raises(ValueError, match="depth"):
        get_message(MSG_SAFE)


def test_repository_root_and_write(tmp_path: Path) -> None:
    repo = FileRepository(root=tmp_path)
    repo.write_text(name="out.acac", text="device Pump type=Pump\n")
    assert (tmp_path / "out.acac").read_text(encoding="utf-8") == "device Pump type=Pump\n"
    assert "Pump" in repo.load_policy(name="out.acac").devices
    with pytest.raises(RepositoryError):
        repo.read_text(name="absent.acac")
