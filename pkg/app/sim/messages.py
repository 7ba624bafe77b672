"""
Message catalog for command output.

Every line the CLI prints (apart from trace lines and canonical policy text)
comes from a template here. Output is locale-independent, so there is one
catalog.
"""

from __future__ import annotations

from typing import Any, Final

# Message type constants
MSG_SAFE: Final[str] = "safe"
MSG_UNSAFE: Final[str] = "unsafe"
MSG_UNSAFE_STATE: Final[str] = "unsafe_state"
MSG_REPLAY_OK: Final[str] = "replay_ok"
MSG_EXPECTATION_FAILED: Final[str] = "expectation_failed"
MSG_NOT_CANONICAL: Final[str] = "not_canonical"
MSG_PARSE_ERROR: Final[str] = "parse_error"
MSG_VALIDATION_ERROR: Final[str] = "validation_error"
MSG_FILE_ERROR: Final[str] = "file_error"
MSG_UNKNOWN_SUBJECT: Final[str] = "unknown_subject"
MSG_UNKNOWN_DEVICE: Final[str] = "unknown_device"
MSG_CONFIG_ERROR: Final[str] = "config_error"
MSG_ENGINE_ERROR: Final[str] = "engine_error"

_MESSAGES: Final[dict[str, str]] = {
    MSG_SAFE: "SAFE depth={depth}",
    MSG_UNSAFE: "UNSAFE depth={depth} explored={explored} violated={relation}",
    MSG_UNSAFE_STATE: "# live {live}",
    MSG_REPLAY_OK: "OK events={events} expectations={expectations}",
    MSG_EXPECTATION_FAILED: "FAIL event={index}: expected {expected}, got {actual}",
    MSG_NOT_CANONICAL: "{file}: not in canonical form",
    MSG_PARSE_ERROR: "error: {error}",
    MSG_VALIDATION_ERROR: "error: {file}: {error}",
    MSG_FILE_ERROR: "error: {error}",
    MSG_UNKNOWN_SUBJECT: "error: unknown subject '{subject}'",
    MSG_UNKNOWN_DEVICE: "error: unknown device '{device}'",
    MSG_CONFIG_ERROR: "error: {error}",
    MSG_ENGINE_ERROR: "error: {error}",
}


def get_message(msg_type: str, **kwargs: Any) -> str:
    """
    Render a message template.

    Raises:
        KeyError: If msg_type is not in the catalog
        ValueError: If a placeholder value is missing
    """
    if msg_type not in _MESSAGES:
        raise KeyError(f"Message type '{msg_type}' not found")

    template = _MESSAGES[msg_type]
    try:
        return template.format(**kwargs)
    except KeyError as e:
        missing_key = str(e).strip("'")
        raise ValueError(f"Missing required placeholder '{missing_key}' for message type '{msg_type}'") from e
