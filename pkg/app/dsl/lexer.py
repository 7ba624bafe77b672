"""Line tokenizer shared by the policy, scenario and universe grammars."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Final

from app.dsl.errors import ParseError, SourceSpan


class TokenKind(str, Enum):
    IDENT = "identifier"
    NUMBER = "number"
    DURATION = "duration"
    STRING = "string"
    REF = "reference"
    PUNCT = "punctuation"


IDENT_RE: Final = r"[A-Za-z_](?:[A-Za-z0-9_.]|-(?!>))*"

_TOKEN_RE: Final = re.compile(
    rf"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<duration>\d+[smhdw](?![A-Za-z0-9_]))
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?(?![A-Za-z_]))
  | (?P<ref>\$(?:source|object)\b)
  | (?P<ident>{IDENT_RE})
  | (?P<punct>->|!=|<=|>=|\.\.|[()\[\],;:=<>!&|/*])
    """,
    re.VERBOSE,
)

_KINDS: Final = {
    "string": TokenKind.STRING,
    "duration": TokenKind.DURATION,
    "number": TokenKind.NUMBER,
    "ref": TokenKind.REF,
    "ident": TokenKind.IDENT,
    "punct": TokenKind.PUNCT,
}

UNITS: Final[dict[str, int]] = {"w": 604800, "d": 86400, "h": 3600, "m": 60, "s": 1}

_ESCAPES: Final[dict[str, str]] = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES: Final[dict[str, str]] = {"n": "\n", "r": "\r", "t": "\t"}
_ESCAPE_RE: Final = re.compile(r"\\(x[0-9a-fA-F]{2}|.)")


def _unescape(match: re.Match[str]) -> str:
    code = match.group(1)
    if len(code) == 3:
        return chr(int(code[1:], 16))
    return _UNESCAPES.get(code, code)


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    column: int  # 1-based

    def is_(self, text: str) -> bool:
        return self.kind in (TokenKind.IDENT, TokenKind.PUNCT) and self.text == text


def duration_seconds(text: str) -> int:
    return int(text[:-1]) * UNITS[text[-1]]


def unquote(text: str) -> str:
    return _ESCAPE_RE.sub(_unescape, text[1:-1])


def _escape(char: str) -> str:
    if char in _ESCAPES:
        return _ESCAPES[char]
    return f"\\x{ord(char):02x}" if ord(char) < 0x20 or ord(char) == 0x7F else char


def quote(text: str) -> str:
    """Double-quoted literal; control characters are written as escapes."""
    return '"' + "".join(_escape(c) for c in text) + '"'


def is_identifier(text: str) -> bool:
    return re.fullmatch(IDENT_RE, text) is not None


def tokenize(line: str, *, file: str, line_no: int) -> list[Token]:
    """Tokens of one physical line; `#` starts a comment."""
    tokens: list[Token] = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            found = line[pos]
            expected = "closing quote" if found == '"' else "a token"
            length = len(line) - pos if found == '"' else 1
            raise LexError(ParseError(SourceSpan(file, line_no, pos + 1, length), expected, repr(found)))
        group = m.lastgroup or ""
        if group == "comment":
            break
        if group != "ws":
            tokens.append(Token(_KINDS[group], m.group(), pos + 1))
        pos = m.end()
    return tokens


class LexError(Exception):
    def __init__(self, error: ParseError) -> None:
        self.error = error
        super().__init__(str(error))
